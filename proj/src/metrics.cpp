#include "baskets/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "baskets/errors.hpp"
#include "baskets/rng.hpp"

namespace baskets {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// mean and bootstrap std of per-value means
ScoreStats bootstrap_mean(const std::vector<double>& values, std::uint64_t seed,
                          int resamples) {
  ScoreStats stats;
  stats.count = values.size();
  if (values.empty()) {
    stats.mean = kNaN;
    stats.bootstrap_std = kNaN;
    return stats;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  stats.mean = sum / static_cast<double>(values.size());

  Rng rng(mix64(seed ^ 0xb0075742ULL));
  double acc = 0.0, acc2 = 0.0;
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
      s += values[rng.below(values.size())];
    const double m = s / static_cast<double>(values.size());
    acc += m;
    acc2 += m * m;
  }
  const double mean_of_means = acc / resamples;
  stats.bootstrap_std = std::sqrt(std::max(0.0, acc2 / resamples - mean_of_means * mean_of_means));
  return stats;
}

// Ratio-of-totals bootstrap: resamples whole trips and recomputes
// sum(loglik) / sum(items).
ScoreStats bootstrap_ratio(const std::vector<double>& trip_logliks,
                           const std::vector<int>& trip_items, std::uint64_t seed,
                           int resamples) {
  ScoreStats stats;
  stats.count = 0;
  for (int n : trip_items) stats.count += static_cast<std::size_t>(n);
  if (trip_logliks.empty() || stats.count == 0) {
    stats.mean = kNaN;
    stats.bootstrap_std = kNaN;
    return stats;
  }
  double total = 0.0;
  for (double v : trip_logliks) total += v;
  stats.mean = total / static_cast<double>(stats.count);

  Rng rng(mix64(seed ^ 0xb0075743ULL));
  double acc = 0.0, acc2 = 0.0;
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    long items = 0;
    for (std::size_t i = 0; i < trip_logliks.size(); ++i) {
      const std::size_t j = rng.below(trip_logliks.size());
      s += trip_logliks[j];
      items += trip_items[j];
    }
    const double m = items == 0 ? 0.0 : s / static_cast<double>(items);
    acc += m;
    acc2 += m * m;
  }
  const double mean_of_means = acc / resamples;
  stats.bootstrap_std = std::sqrt(std::max(0.0, acc2 / resamples - mean_of_means * mean_of_means));
  return stats;
}

void require_purchasable(const Catalog& catalog, std::uint32_t item) {
  if (item == catalog.checkout)
    throw DomainError("checkout is not a valid query item");
  if (item >= catalog.n_items()) throw DomainError("item index out of range");
}

}  // namespace

PosteriorSummary summarize(const VariationalState& v, const ModelConfig& cfg) {
  PosteriorSummary s;
  s.point = v.posterior_mean_state();
  s.config = cfg;
  const LatentLayout& L = v.layout;

  auto average_rows = [&](Family f) {
    const FamilyBlock& b = L.block(f);
    std::vector<double> avg(b.cols, 0.0);
    if (!b.active || b.rows == 0) return avg;
    for (std::size_t r = 0; r < b.rows; ++r) {
      const double* row = s.point.row(f, r);
      for (std::size_t k = 0; k < b.cols; ++k) avg[k] += row[k];
    }
    for (double& x : avg) x /= static_cast<double>(b.rows);
    return avg;
  };
  if (cfg.use_preferences) s.avg_user_pref = average_rows(Family::kUserPref);
  if (cfg.use_price) s.avg_user_price_sens = average_rows(Family::kUserPriceSens);
  if (cfg.use_season) s.avg_week_season = average_rows(Family::kWeekSeason);
  return s;
}

ScoreStats heldout_conditional_loglik(const PosteriorSummary& summary,
                                      const Catalog& catalog,
                                      const std::vector<Trip>& trips,
                                      const std::vector<EvalPair>& pairs,
                                      std::uint64_t bootstrap_seed,
                                      int bootstrap_resamples) {
  std::vector<double> values;
  values.reserve(pairs.size());
  std::vector<std::uint32_t> context;
  std::size_t last_trip = static_cast<std::size_t>(-1);
  TripContext ctx;
  for (const auto& [trip_idx, target] : pairs) {
    const Trip& trip = trips.at(trip_idx);
    if (std::find(trip.items.begin(), trip.items.end(), target) == trip.items.end())
      throw DomainError("target item '" + catalog.item_ids[target] +
                        "' is not part of trip " + std::to_string(trip.trip_id));
    if (trip_idx != last_trip) {
      ctx = make_trip_context(summary.point, summary.config, catalog, trip);
      last_trip = trip_idx;
    }
    context.clear();
    for (std::uint32_t c : trip.items)
      if (c != target && c != catalog.checkout) context.push_back(c);
    values.push_back(step_log_prob_ctx(ctx, target, context));
  }
  return bootstrap_mean(values, bootstrap_seed, bootstrap_resamples);
}

ScoreStats heldout_basket_loglik(const PosteriorSummary& summary,
                                 const Catalog& catalog,
                                 const std::vector<Trip>& trips,
                                 BasketScoreMode mode, std::uint64_t bootstrap_seed,
                                 int bootstrap_resamples) {
  std::vector<double> trip_logliks;
  std::vector<int> trip_items;
  std::size_t skipped = 0;
  std::vector<std::uint32_t> prefix;
  for (const Trip& trip : trips) {
    const std::size_t n_purchases = trip.n_purchases();
    if (mode == BasketScoreMode::kTriplets && n_purchases < 3) {
      ++skipped;
      continue;
    }
    const TripContext ctx = make_trip_context(summary.point, summary.config,
                                              catalog, trip);
    double ll = 0.0;
    int scored = 0;
    if (mode == BasketScoreMode::kTriplets) {
      // first three purchases scored sequentially, the rest always in context
      prefix.assign(trip.items.begin() + 3, trip.items.end() - 1);
      for (std::size_t i = 0; i < 3; ++i) {
        ll += step_log_prob_ctx(ctx, trip.items[i], prefix);
        prefix.push_back(trip.items[i]);
        ++scored;
      }
    } else {
      prefix.clear();
      for (std::size_t i = 0; i < n_purchases; ++i) {
        ll += step_log_prob_ctx(ctx, trip.items[i], prefix);
        prefix.push_back(trip.items[i]);
        ++scored;
      }
    }
    trip_logliks.push_back(ll);
    trip_items.push_back(scored);
  }
  ScoreStats stats =
      bootstrap_ratio(trip_logliks, trip_items, bootstrap_seed, bootstrap_resamples);
  stats.skipped = skipped;
  return stats;
}

ScoreStats heldout_trip_loglik(const PosteriorSummary& summary,
                               const Catalog& catalog,
                               const std::vector<Trip>& trips,
                               std::uint64_t bootstrap_seed,
                               int bootstrap_resamples) {
  std::vector<double> values;
  values.reserve(trips.size());
  for (const Trip& trip : trips)
    values.push_back(
        ordered_basket_loglik(summary.point, summary.config, catalog, trip));
  return bootstrap_mean(values, bootstrap_seed, bootstrap_resamples);
}

double complementarity(const PosteriorSummary& summary, const Catalog& catalog,
                       std::uint32_t a, std::uint32_t b) {
  require_purchasable(catalog, a);
  require_purchasable(catalog, b);
  if (a == b) throw DomainError("complementarity requires two distinct items");
  const int k = summary.config.k_items;
  const LatentState& s = summary.point;
  double forward = 0.0, backward = 0.0;
  const double* ra = s.row(Family::kItemInteraction, a);
  const double* rb = s.row(Family::kItemInteraction, b);
  const double* aa = s.row(Family::kItemAttr, a);
  const double* ab = s.row(Family::kItemAttr, b);
  for (int j = 0; j < k; ++j) {
    forward += ra[j] * ab[j];
    backward += rb[j] * aa[j];
  }
  return 0.5 * (forward + backward);
}

std::vector<double> conditional_item_distribution(const PosteriorSummary& summary,
                                                  const Catalog& catalog,
                                                  std::uint32_t item) {
  require_purchasable(catalog, item);
  const ModelConfig& cfg = summary.config;
  const LatentState& s = summary.point;
  const std::size_t n = catalog.n_items();

  // mean utilities for the average customer at mean prices (price term = 0)
  std::vector<double> psi(n, 0.0);
  std::vector<std::uint32_t> feasible(n);
  for (std::uint32_t c = 0; c < n; ++c) {
    feasible[c] = c;
    psi[c] = s.at(Family::kItemPopularity, c);
    if (cfg.use_preferences) {
      const double* attr = s.row(Family::kItemAttr, c);
      for (int k = 0; k < cfg.k_items; ++k)
        psi[c] += summary.avg_user_pref[static_cast<std::size_t>(k)] * attr[k];
    }
    if (cfg.use_season) {
      const double* season = s.row(Family::kItemSeason, c);
      for (int k = 0; k < cfg.k_season; ++k)
        psi[c] += summary.avg_week_season[static_cast<std::size_t>(k)] * season[k];
    }
  }
  const TripContext ctx = make_synthetic_context(s, cfg, std::move(psi),
                                                 std::move(feasible), catalog.checkout);
  const std::uint32_t basket[1] = {item};
  return choice_distribution_ctx(ctx, basket);
}

double exchangeability(const PosteriorSummary& summary, const Catalog& catalog,
                       std::uint32_t a, std::uint32_t b) {
  require_purchasable(catalog, a);
  require_purchasable(catalog, b);
  if (a == b) throw DomainError("exchangeability requires two distinct items");

  std::vector<double> pa = conditional_item_distribution(summary, catalog, a);
  std::vector<double> pb = conditional_item_distribution(summary, catalog, b);
  // common support: drop both conditioning items and checkout, renormalize
  double za = 0.0, zb = 0.0;
  for (std::uint32_t k = 0; k < catalog.n_items(); ++k) {
    if (k == a || k == b || k == catalog.checkout) {
      pa[k] = 0.0;
      pb[k] = 0.0;
      continue;
    }
    za += pa[k];
    zb += pb[k];
  }
  if (za <= 0.0 || zb <= 0.0) return 0.0;  // no common support to compare on
  double kl = 0.0;
  for (std::uint32_t k = 0; k < catalog.n_items(); ++k) {
    if (pa[k] <= 0.0 && pb[k] <= 0.0) continue;
    const double qa = pa[k] / za;
    const double qb = pb[k] / zb;
    kl += 0.5 * (qa * std::log(qa / qb) + qb * std::log(qb / qa));
  }
  return kl;
}

std::vector<std::pair<std::uint32_t, double>> similar_items(
    const PosteriorSummary& summary, const Catalog& catalog, std::uint32_t item,
    int top_n) {
  require_purchasable(catalog, item);
  const int k = summary.config.k_items;
  const LatentState& s = summary.point;
  const double* query = s.row(Family::kItemAttr, item);
  double qnorm = 0.0;
  for (int j = 0; j < k; ++j) qnorm += query[j] * query[j];
  qnorm = std::sqrt(qnorm);
  if (qnorm <= 0.0)
    throw DomainError("item '" + catalog.item_ids[item] +
                      "' has a zero attribute vector");

  std::vector<std::pair<std::uint32_t, double>> ranked;
  for (std::uint32_t c = 0; c < catalog.n_items(); ++c) {
    if (c == item || c == catalog.checkout) continue;
    const double* attr = s.row(Family::kItemAttr, c);
    double norm = 0.0, dp = 0.0;
    for (int j = 0; j < k; ++j) {
      norm += attr[j] * attr[j];
      dp += attr[j] * query[j];
    }
    norm = std::sqrt(norm);
    if (norm <= 0.0) continue;  // cosine undefined for zero vectors
    ranked.emplace_back(c, 1.0 - dp / (qnorm * norm));
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.second < y.second; });
  if (ranked.size() > static_cast<std::size_t>(top_n))
    ranked.resize(static_cast<std::size_t>(top_n));
  return ranked;
}

}  // namespace baskets
