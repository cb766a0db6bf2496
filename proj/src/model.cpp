#include "baskets/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "baskets/errors.hpp"

namespace baskets {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

bool contains(std::span<const std::uint32_t> xs, std::uint32_t x) {
  return std::find(xs.begin(), xs.end(), x) != xs.end();
}

}  // namespace

void ModelConfig::validate() const {
  if (k_items < 1 || k_price < 1 || k_season < 1)
    throw DomainError("model dimensions must be >= 1");
  if (prior_std <= 0.0 || prior_std_season <= 0.0)
    throw DomainError("prior scales must be positive");
  if (gamma_prior_shape <= 0.0 || gamma_prior_rate <= 0.0)
    throw DomainError("gamma prior parameters must be positive");
  if (exact_permutation_cap < 1)
    throw DomainError("exact_permutation_cap must be >= 1");
  if (think_ahead_top_m < 0)
    throw DomainError("think_ahead_top_m must be >= 0");
}

LatentLayout::LatentLayout(const ModelConfig& cfg, std::size_t n_items,
                           std::size_t n_users)
    : n_items_(n_items), n_users_(n_users) {
  auto place = [this](Family f, bool active, std::size_t rows, std::size_t cols) {
    auto& b = blocks_[static_cast<int>(f)];
    b.active = active;
    b.rows = rows;
    b.cols = cols;
    b.offset = total_;
    total_ += b.size();
  };
  const auto k = static_cast<std::size_t>(cfg.k_items);
  const auto kp = static_cast<std::size_t>(cfg.k_price);
  const auto ks = static_cast<std::size_t>(cfg.k_season);
  place(Family::kItemInteraction, true, n_items, k);
  place(Family::kItemAttr, true, n_items, k);
  place(Family::kItemPopularity, true, n_items, 1);
  place(Family::kUserPref, cfg.use_preferences, n_users, k);
  place(Family::kItemSeason, cfg.use_season, n_items, ks);
  place(Family::kWeekSeason, cfg.use_season, kWeeksPerYear, ks);
  gamma_begin_ = total_;
  place(Family::kUserPriceSens, cfg.use_price, n_users, kp);
  place(Family::kItemPriceSens, cfg.use_price, n_items, kp);
}

double mean_utility_psi(const LatentState& state, const ModelConfig& cfg,
                        const Catalog& catalog, const Trip& trip,
                        std::uint32_t item) {
  if (!catalog.offered(trip, item))
    throw DomainError("item '" + catalog.item_ids[item] + "' is not offered in trip " +
                      std::to_string(trip.trip_id));
  double psi = state.at(Family::kItemPopularity, item);
  if (cfg.use_preferences)
    psi += dot(state.row(Family::kUserPref, trip.user),
               state.row(Family::kItemAttr, item), cfg.k_items);
  if (cfg.use_price && item != catalog.checkout) {
    const double lp = normalized_log_price(catalog, trip, item);
    psi -= dot(state.row(Family::kUserPriceSens, trip.user),
               state.row(Family::kItemPriceSens, item), cfg.k_price) *
           lp;
  }
  if (cfg.use_season)
    psi += dot(state.row(Family::kWeekSeason, static_cast<std::size_t>(trip.week - 1)),
               state.row(Family::kItemSeason, item), cfg.k_season);
  return psi;
}

TripContext make_trip_context(const LatentState& state, const ModelConfig& cfg,
                              const Catalog& catalog, const Trip& trip) {
  TripContext ctx;
  ctx.state = &state;
  ctx.cfg = &cfg;
  ctx.user = trip.user;
  ctx.week = trip.week;
  ctx.checkout = catalog.checkout;
  ctx.n_items = catalog.n_items();
  ctx.psi.assign(ctx.n_items, kNaN);
  ctx.log_norm_price.assign(ctx.n_items, 0.0);
  for (std::uint32_t c = 0; c < ctx.n_items; ++c) {
    if (!catalog.offered(trip, c)) continue;
    ctx.feasible.push_back(c);
    if (cfg.use_price && c != catalog.checkout)
      ctx.log_norm_price[c] = normalized_log_price(catalog, trip, c);
    ctx.psi[c] = mean_utility_psi(state, cfg, catalog, trip, c);
  }
  ctx.lookahead_pool = ctx.feasible;
  if (cfg.think_ahead && cfg.think_ahead_top_m > 0 &&
      static_cast<std::size_t>(cfg.think_ahead_top_m) < ctx.feasible.size()) {
    std::partial_sort(ctx.lookahead_pool.begin(),
                      ctx.lookahead_pool.begin() + cfg.think_ahead_top_m,
                      ctx.lookahead_pool.end(),
                      [&ctx](std::uint32_t a, std::uint32_t b) {
                        return ctx.psi[a] != ctx.psi[b] ? ctx.psi[a] > ctx.psi[b]
                                                        : a < b;
                      });
    ctx.lookahead_pool.resize(static_cast<std::size_t>(cfg.think_ahead_top_m));
    std::sort(ctx.lookahead_pool.begin(), ctx.lookahead_pool.end());
  }
  return ctx;
}

TripContext make_synthetic_context(const LatentState& state, const ModelConfig& cfg,
                                   std::vector<double> psi,
                                   std::vector<std::uint32_t> feasible,
                                   std::uint32_t checkout) {
  TripContext ctx;
  ctx.state = &state;
  ctx.cfg = &cfg;
  ctx.checkout = checkout;
  ctx.n_items = psi.size();
  ctx.psi = std::move(psi);
  ctx.log_norm_price.assign(ctx.n_items, 0.0);
  ctx.feasible = std::move(feasible);
  ctx.lookahead_pool = ctx.feasible;
  return ctx;
}

double interaction_utility(const LatentState& state, std::uint32_t item,
                           std::span<const std::uint32_t> basket) {
  if (contains(basket, item)) return kNegInf;
  if (basket.empty()) return 0.0;
  const int k = static_cast<int>(state.layout.block(Family::kItemAttr).cols);
  double s = 0.0;
  const double* w = state.row(Family::kItemInteraction, item);
  for (std::uint32_t b : basket) {
    const double* a = state.row(Family::kItemAttr, b);
    s += dot(w, a, k);
  }
  return s / static_cast<double>(basket.size());
}

UtilityBreakdown full_utility_ctx(const TripContext& ctx, std::uint32_t item,
                                  std::span<const std::uint32_t> basket) {
  const LatentState& state = *ctx.state;
  UtilityBreakdown out;
  out.value = ctx.psi[item] + interaction_utility(state, item, basket);
  // checkout ends the trip: there is no next purchase to look ahead to
  if (!ctx.cfg->think_ahead || item == ctx.checkout || !std::isfinite(out.value))
    return out;

  // utility of the best single follow-up purchase, checkout included
  const int k = ctx.cfg->k_items;
  thread_local std::vector<double> hypothetical;
  hypothetical.resize(static_cast<std::size_t>(k));
  const double* attr_item = state.row(Family::kItemAttr, item);
  for (int j = 0; j < k; ++j) hypothetical[j] = attr_item[j];
  for (std::uint32_t b : basket) {
    const double* a = state.row(Family::kItemAttr, b);
    for (int j = 0; j < k; ++j) hypothetical[j] += a[j];
  }
  const double inv_i = 1.0 / static_cast<double>(basket.size() + 1);
  for (int j = 0; j < k; ++j) hypothetical[j] *= inv_i;

  double best = kNegInf;
  std::int32_t best_item = -1;
  for (std::uint32_t c2 : ctx.lookahead_pool) {
    if (c2 == item || contains(basket, c2)) continue;
    const double v =
        ctx.psi[c2] + dot(state.row(Family::kItemInteraction, c2),
                          hypothetical.data(), k);
    if (v > best) {
      best = v;
      best_item = static_cast<std::int32_t>(c2);
    }
  }
  if (best_item >= 0) {
    out.value += best;
    out.lookahead_item = best_item;
  }
  return out;
}

double full_utility(const LatentState& state, const ModelConfig& cfg,
                    const Catalog& catalog, const Trip& trip, std::uint32_t item,
                    std::span<const std::uint32_t> basket) {
  const TripContext ctx = make_trip_context(state, cfg, catalog, trip);
  return full_utility_ctx(ctx, item, basket).value;
}

std::vector<double> choice_distribution_ctx(const TripContext& ctx,
                                            std::span<const std::uint32_t> basket) {
  std::vector<double> probs(ctx.n_items, 0.0);
  std::vector<std::uint32_t> candidates;
  std::vector<double> utilities;
  for (std::uint32_t c : ctx.feasible) {
    if (contains(basket, c)) continue;
    candidates.push_back(c);
    utilities.push_back(full_utility_ctx(ctx, c, basket).value);
  }
  if (candidates.empty())
    throw DomainError("no feasible candidate remains for this basket");
  const double lse = log_sum_exp(utilities);
  for (std::size_t j = 0; j < candidates.size(); ++j)
    probs[candidates[j]] = std::exp(utilities[j] - lse);
  return probs;
}

std::vector<double> choice_distribution(const LatentState& state,
                                        const ModelConfig& cfg,
                                        const Catalog& catalog, const Trip& trip,
                                        std::span<const std::uint32_t> basket) {
  const TripContext ctx = make_trip_context(state, cfg, catalog, trip);
  return choice_distribution_ctx(ctx, basket);
}

double step_log_prob_ctx(const TripContext& ctx, std::uint32_t target,
                         std::span<const std::uint32_t> basket) {
  double target_utility = kNaN;
  std::vector<double> utilities;
  for (std::uint32_t c : ctx.feasible) {
    if (contains(basket, c)) continue;
    const double u = full_utility_ctx(ctx, c, basket).value;
    utilities.push_back(u);
    if (c == target) target_utility = u;
  }
  if (!std::isfinite(target_utility))
    throw DomainError("target item is not a feasible candidate at this step");
  return target_utility - log_sum_exp(utilities);
}

double ordered_basket_loglik_ctx(const TripContext& ctx,
                                 std::span<const std::uint32_t> items) {
  double ll = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::span<const std::uint32_t> prefix(items.data(), i);
    if (contains(prefix, items[i]))
      throw DomainError("item repeated within a basket");
    ll += step_log_prob_ctx(ctx, items[i], prefix);
  }
  return ll;
}

double ordered_basket_loglik(const LatentState& state, const ModelConfig& cfg,
                             const Catalog& catalog, const Trip& trip) {
  if (trip.items.empty() || trip.items.back() != catalog.checkout)
    throw DomainError("trip items must end with checkout");
  const TripContext ctx = make_trip_context(state, cfg, catalog, trip);
  return ordered_basket_loglik_ctx(ctx, trip.items);
}

double unordered_basket_loglik_exact(const LatentState& state,
                                     const ModelConfig& cfg,
                                     const Catalog& catalog, const Trip& trip) {
  if (trip.items.empty() || trip.items.back() != catalog.checkout)
    throw DomainError("trip items must end with checkout");
  std::vector<std::uint32_t> purchases(trip.items.begin(), trip.items.end() - 1);
  if (purchases.size() > static_cast<std::size_t>(cfg.exact_permutation_cap))
    throw SizeError("basket of " + std::to_string(purchases.size()) +
                    " items exceeds the exact enumeration cap of " +
                    std::to_string(cfg.exact_permutation_cap) +
                    "; use the variational bound instead");
  const TripContext ctx = make_trip_context(state, cfg, catalog, trip);
  std::sort(purchases.begin(), purchases.end());
  std::vector<double> logliks;
  std::vector<std::uint32_t> order(purchases.size() + 1);
  do {
    std::copy(purchases.begin(), purchases.end(), order.begin());
    order.back() = catalog.checkout;
    logliks.push_back(ordered_basket_loglik_ctx(ctx, order));
  } while (std::next_permutation(purchases.begin(), purchases.end()));
  return log_sum_exp(logliks);
}

double symmetry_gap(const LatentState& state, std::uint32_t checkout) {
  const auto& block = state.layout.block(Family::kItemAttr);
  const int k = static_cast<int>(block.cols);
  double gap = 0.0;
  for (std::uint32_t c = 0; c < block.rows; ++c) {
    if (c == checkout) continue;
    for (std::uint32_t c2 = c + 1; c2 < block.rows; ++c2) {
      if (c2 == checkout) continue;
      const double forward = dot(state.row(Family::kItemInteraction, c),
                                 state.row(Family::kItemAttr, c2), k);
      const double backward = dot(state.row(Family::kItemInteraction, c2),
                                  state.row(Family::kItemAttr, c), k);
      gap = std::max(gap, std::abs(forward - backward));
    }
  }
  return gap;
}

double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double log_sigmoid(double x) {
  // -log(1 + e^{-x}) computed on the stable side
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace baskets
