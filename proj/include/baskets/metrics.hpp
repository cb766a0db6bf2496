#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "baskets/catalog.hpp"
#include "baskets/model.hpp"
#include "baskets/variational.hpp"

namespace baskets {

// Posterior point estimates (variational means; gamma factors contribute
// their mean parameter) plus average-customer and average-week vectors.
struct PosteriorSummary {
  LatentState point;
  ModelConfig config;
  std::vector<double> avg_user_pref;        // empty unless use_preferences
  std::vector<double> avg_user_price_sens;  // empty unless use_price
  std::vector<double> avg_week_season;      // empty unless use_season
};

PosteriorSummary summarize(const VariationalState& v, const ModelConfig& cfg);

struct ScoreStats {
  double mean = 0.0;
  double bootstrap_std = 0.0;
  std::size_t count = 0;
  std::size_t skipped = 0;
};

// Per-target conditional log-likelihood: each target is scored as the next
// choice given every other purchased item of its basket as context.
ScoreStats heldout_conditional_loglik(const PosteriorSummary& summary,
                                      const Catalog& catalog,
                                      const std::vector<Trip>& trips,
                                      const std::vector<EvalPair>& pairs,
                                      std::uint64_t bootstrap_seed,
                                      int bootstrap_resamples = 200);

enum class BasketScoreMode { kTriplets, kWholeBasket };

// Per-item sequential scores in recorded order: either the first three items
// conditioned on the rest of the basket (baskets under 3 purchases are
// skipped and counted), or the whole basket excluding the checkout step.
ScoreStats heldout_basket_loglik(const PosteriorSummary& summary,
                                 const Catalog& catalog,
                                 const std::vector<Trip>& trips,
                                 BasketScoreMode mode, std::uint64_t bootstrap_seed,
                                 int bootstrap_resamples = 200);

// Mean over trips of the full ordered log probability of the recorded
// sequence, checkout step included.
ScoreStats heldout_trip_loglik(const PosteriorSummary& summary,
                               const Catalog& catalog,
                               const std::vector<Trip>& trips,
                               std::uint64_t bootstrap_seed,
                               int bootstrap_resamples = 200);

// Symmetrized interaction score; positive for complements.
double complementarity(const PosteriorSummary& summary, const Catalog& catalog,
                       std::uint32_t a, std::uint32_t b);

// Next-item distribution given that `item` is the only basket entry, for an
// average customer in an average week with every price at its mean.
std::vector<double> conditional_item_distribution(const PosteriorSummary& summary,
                                                  const Catalog& catalog,
                                                  std::uint32_t item);

// Symmetrized KL divergence between the two conditional distributions,
// renormalized over the common support (both items and checkout removed).
// Small values suggest substitutes.
double exchangeability(const PosteriorSummary& summary, const Catalog& catalog,
                       std::uint32_t a, std::uint32_t b);

// Items ranked by ascending cosine distance between attribute vectors;
// the query item and checkout are excluded.
std::vector<std::pair<std::uint32_t, double>> similar_items(
    const PosteriorSummary& summary, const Catalog& catalog, std::uint32_t item,
    int top_n);

}  // namespace baskets
