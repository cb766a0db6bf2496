#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "baskets/catalog.hpp"

namespace baskets {

inline constexpr int kWeeksPerYear = 52;

// Model dimensions, feature flags, and prior scales.
struct ModelConfig {
  int k_items = 10;   // dimension of attributes, interaction, preference vectors
  int k_price = 3;    // dimension of the price sensitivity factorization
  int k_season = 3;   // dimension of the seasonal factorization
  bool use_preferences = true;
  bool use_price = true;
  bool use_season = false;
  bool think_ahead = false;
  double prior_std = 1.0;
  double prior_std_season = 0.1;
  double gamma_prior_shape = 1.0;
  double gamma_prior_rate = 10.0;
  int exact_permutation_cap = 8;  // basket size limit for exact enumeration
  int think_ahead_top_m = 0;      // 0 = consider every feasible item in the look-ahead

  void validate() const;
};

// Latent families, in flat-layout order. The gamma-prior families come last
// so that their slots form one contiguous tail block.
enum class Family : int {
  kItemInteraction = 0,  // per item, k_items: response to basket attributes
  kItemAttr,             // per item, k_items
  kItemPopularity,       // per item, scalar intercept
  kUserPref,             // per user, k_items
  kItemSeason,           // per item, k_season
  kWeekSeason,           // per calendar week, k_season
  kUserPriceSens,        // per user, k_price, nonnegative
  kItemPriceSens,        // per item, k_price, nonnegative
};
inline constexpr int kNumFamilies = 8;
inline constexpr std::array<Family, kNumFamilies> kAllFamilies = {
    Family::kItemInteraction, Family::kItemAttr,   Family::kItemPopularity,
    Family::kUserPref,        Family::kItemSeason, Family::kWeekSeason,
    Family::kUserPriceSens,   Family::kItemPriceSens};

struct FamilyBlock {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool active = false;
  std::size_t size() const { return active ? rows * cols : 0; }
  bool operator==(const FamilyBlock&) const = default;
};

// Maps every latent scalar of the model to one slot of a flat vector.
// Disabled families (by config flags) have no slots.
class LatentLayout {
 public:
  LatentLayout() = default;
  LatentLayout(const ModelConfig& cfg, std::size_t n_items, std::size_t n_users);

  const FamilyBlock& block(Family f) const {
    return blocks_[static_cast<int>(f)];
  }
  std::size_t total() const { return total_; }
  std::size_t gamma_begin() const { return gamma_begin_; }
  bool is_gamma(std::size_t slot) const { return slot >= gamma_begin_; }
  std::size_t index(Family f, std::size_t row, std::size_t col = 0) const {
    const auto& b = block(f);
    return b.offset + row * b.cols + col;
  }
  // prior scale of a Gaussian family under this config
  static double prior_std_for(Family f, const ModelConfig& cfg) {
    return (f == Family::kItemSeason || f == Family::kWeekSeason)
               ? cfg.prior_std_season
               : cfg.prior_std;
  }
  std::size_t n_items() const { return n_items_; }
  std::size_t n_users() const { return n_users_; }

  bool operator==(const LatentLayout&) const = default;

 private:
  std::array<FamilyBlock, kNumFamilies> blocks_{};
  std::size_t total_ = 0;
  std::size_t gamma_begin_ = 0;
  std::size_t n_items_ = 0;
  std::size_t n_users_ = 0;
};

// One concrete draw (or point estimate) of every latent variable.
struct LatentState {
  LatentLayout layout;
  std::vector<double> values;

  LatentState() = default;
  explicit LatentState(const LatentLayout& l) : layout(l), values(l.total(), 0.0) {}

  double at(Family f, std::size_t row, std::size_t col = 0) const {
    return values[layout.index(f, row, col)];
  }
  double& at(Family f, std::size_t row, std::size_t col = 0) {
    return values[layout.index(f, row, col)];
  }
  const double* row(Family f, std::size_t r) const {
    return values.data() + layout.index(f, r, 0);
  }
  double* row(Family f, std::size_t r) {
    return values.data() + layout.index(f, r, 0);
  }
};

// Per-trip scratch shared by every choice of the trip: the feasible item set,
// their trip-level mean utilities, normalized log prices, and the candidate
// pool the look-ahead maximization scans.
struct TripContext {
  const LatentState* state = nullptr;
  const ModelConfig* cfg = nullptr;
  std::uint32_t user = 0;
  int week = 1;
  std::uint32_t checkout = 0;
  std::size_t n_items = 0;
  std::vector<std::uint32_t> feasible;        // includes checkout
  std::vector<double> psi;                    // per item; NaN when not offered
  std::vector<double> log_norm_price;         // per item; 0 for checkout
  std::vector<std::uint32_t> lookahead_pool;  // top-M by psi, or == feasible
};

TripContext make_trip_context(const LatentState& state, const ModelConfig& cfg,
                              const Catalog& catalog, const Trip& trip);

// Context over an explicit utility vector (no trip): used for conditional
// item distributions under an average customer at mean prices.
TripContext make_synthetic_context(const LatentState& state, const ModelConfig& cfg,
                                   std::vector<double> psi,
                                   std::vector<std::uint32_t> feasible,
                                   std::uint32_t checkout);

// Trip-level mean utility of one item: popularity plus the preference,
// price, and seasonal terms that are switched on.
double mean_utility_psi(const LatentState& state, const ModelConfig& cfg,
                        const Catalog& catalog, const Trip& trip,
                        std::uint32_t item);

// Basket interaction term: the item's interaction vector against the average
// attribute vector of the basket so far. Empty basket contributes zero;
// an item already in the basket yields -infinity.
double interaction_utility(const LatentState& state, std::uint32_t item,
                           std::span<const std::uint32_t> basket);

struct UtilityBreakdown {
  double value = 0.0;
  std::int32_t lookahead_item = -1;  // argmax of the look-ahead term, -1 if none
};

UtilityBreakdown full_utility_ctx(const TripContext& ctx, std::uint32_t item,
                                  std::span<const std::uint32_t> basket);

double full_utility(const LatentState& state, const ModelConfig& cfg,
                    const Catalog& catalog, const Trip& trip, std::uint32_t item,
                    std::span<const std::uint32_t> basket);

// Softmax of the full utilities over feasible items not yet in the basket.
// The returned vector has one entry per catalog item; in-basket and
// infeasible items get probability exactly zero.
std::vector<double> choice_distribution_ctx(const TripContext& ctx,
                                            std::span<const std::uint32_t> basket);
std::vector<double> choice_distribution(const LatentState& state,
                                        const ModelConfig& cfg,
                                        const Catalog& catalog, const Trip& trip,
                                        std::span<const std::uint32_t> basket);

// Log probability of one choice given the prefix, evaluated exactly.
double step_log_prob_ctx(const TripContext& ctx, std::uint32_t target,
                         std::span<const std::uint32_t> basket);

// Sum of exact step log probabilities over the recorded order (checkout last).
double ordered_basket_loglik(const LatentState& state, const ModelConfig& cfg,
                             const Catalog& catalog, const Trip& trip);
double ordered_basket_loglik_ctx(const TripContext& ctx,
                                 std::span<const std::uint32_t> items);

// Log of the summed ordered likelihoods over every permutation of the
// non-checkout items (checkout fixed last). Factorial cost; refuses baskets
// above cfg.exact_permutation_cap.
double unordered_basket_loglik_exact(const LatentState& state,
                                     const ModelConfig& cfg,
                                     const Catalog& catalog, const Trip& trip);

// max over item pairs of |interaction_c . attr_c' - interaction_c' . attr_c|;
// reported as a diagnostic, never asserted.
double symmetry_gap(const LatentState& state, std::uint32_t checkout);

double log_sum_exp(std::span<const double> xs);
double log_sigmoid(double x);

}  // namespace baskets
