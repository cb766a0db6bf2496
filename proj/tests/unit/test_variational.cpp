#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "baskets/errors.hpp"
#include "baskets/model.hpp"
#include "baskets/rng.hpp"
#include "baskets/simulator.hpp"
#include "baskets/variational.hpp"
#include "test_util.hpp"

using namespace baskets;

namespace {

ModelConfig tiny_config(bool think_ahead = false) {
  ModelConfig cfg;
  cfg.k_items = 2;
  cfg.k_price = 1;
  cfg.k_season = 2;
  cfg.use_preferences = true;
  cfg.use_price = true;
  cfg.use_season = true;
  cfg.think_ahead = think_ahead;
  return cfg;
}

// 3 purchasable items, 2 users, 2 priced weeks
Catalog tiny_instance_catalog() {
  Catalog cat = testutil::tiny_catalog(3, 1.0, 2);
  cat.week_prices.clear();
  cat.week_row.clear();
  cat.week_prices.push_back({1.0, 1.5, 0.8, 0.0});
  cat.week_row.emplace(1, 0);
  cat.week_prices.push_back({1.2, 0.9, 1.1, 0.0});
  cat.week_row.emplace(2, 1);
  for (std::size_t c = 0; c < 3; ++c)
    cat.mean_price[c] = (cat.week_prices[0][c] + cat.week_prices[1][c]) / 2.0;
  cat.max_abs_week = 2;
  return cat;
}

std::vector<Trip> tiny_instance_trips(const Catalog& cat) {
  Trip t0 = testutil::tiny_trip(cat, {0, 2}, 0);
  t0.trip_id = 1;
  Trip t1 = testutil::tiny_trip(cat, {1}, 1);
  t1.trip_id = 2;
  t1.absolute_week = 2;
  t1.week = 2;
  t1.price_row = 1;
  return {t0, t1};
}

VariationalState tiny_vstate(const LatentLayout& layout, std::uint64_t seed) {
  VariationalState v(layout);
  Rng rng(seed);
  for (std::size_t i = 0; i < layout.total(); ++i) {
    if (layout.is_gamma(i)) {
      v.par1[i] = 0.8 + rng.uniform();        // shape
      v.par2[i] = 0.05 + 0.3 * rng.uniform(); // mean
    } else {
      v.par1[i] = 0.3 * rng.normal();
      v.par2[i] = 0.05 + 0.2 * rng.uniform();
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Straight-line recomputation of f, independent of the library internals.

double oracle_psi(const LatentState& s, const ModelConfig& cfg, const Catalog& cat,
                  const Trip& trip, std::uint32_t c) {
  double psi = s.at(Family::kItemPopularity, c);
  if (cfg.use_preferences)
    for (int k = 0; k < cfg.k_items; ++k)
      psi += s.at(Family::kUserPref, trip.user, k) * s.at(Family::kItemAttr, c, k);
  if (cfg.use_price && c != cat.checkout) {
    double tau = 0.0;
    for (int k = 0; k < cfg.k_price; ++k)
      tau += s.at(Family::kUserPriceSens, trip.user, k) *
             s.at(Family::kItemPriceSens, c, k);
    psi -= tau * std::log(cat.price(trip, c) / cat.mean_price[c]);
  }
  if (cfg.use_season)
    for (int k = 0; k < cfg.k_season; ++k)
      psi += s.at(Family::kWeekSeason, trip.week - 1, k) *
             s.at(Family::kItemSeason, c, k);
  return psi;
}

double oracle_big_psi(const LatentState& s, const ModelConfig& cfg,
                      const Catalog& cat, const Trip& trip, std::uint32_t c,
                      const std::vector<std::uint32_t>& basket) {
  double value = oracle_psi(s, cfg, cat, trip, c);
  if (!basket.empty()) {
    double acc = 0.0;
    for (std::uint32_t b : basket)
      for (int k = 0; k < cfg.k_items; ++k)
        acc += s.at(Family::kItemInteraction, c, k) * s.at(Family::kItemAttr, b, k);
    value += acc / static_cast<double>(basket.size());
  }
  if (cfg.think_ahead && c != cat.checkout) {
    double best = 0.0;
    bool any = false;
    for (std::uint32_t c2 = 0; c2 < cat.n_items(); ++c2) {
      if (c2 == c || !cat.offered(trip, c2)) continue;
      if (std::find(basket.begin(), basket.end(), c2) != basket.end()) continue;
      double inner = oracle_psi(s, cfg, cat, trip, c2);
      for (int k = 0; k < cfg.k_items; ++k) {
        double w = s.at(Family::kItemAttr, c, k);
        for (std::uint32_t b : basket) w += s.at(Family::kItemAttr, b, k);
        inner += s.at(Family::kItemInteraction, c2, k) * w /
                 static_cast<double>(basket.size() + 1);
      }
      if (!any || inner > best) {
        best = inner;
        any = true;
      }
    }
    if (any) value += best;
  }
  return value;
}

double oracle_digamma(double x) {
  double r = 0.0;
  while (x < 8.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double i2 = 1.0 / (x * x);
  return r + std::log(x) - 0.5 / x -
         i2 * (1.0 / 12.0 - i2 * (1.0 / 120.0 - i2 / 252.0));
}

double oracle_f(const VariationalState& v, const LatentState& s, const Catalog& cat,
                const std::vector<Trip>& trips, const ModelConfig& cfg,
                const SubsampleDraw& sub) {
  double f = 0.0;
  // priors and entropy, slot by slot
  for (Family fam : kAllFamilies) {
    const FamilyBlock& b = v.layout.block(fam);
    if (!b.active) continue;
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
      const double x = s.values[i];
      if (v.layout.is_gamma(i)) {
        f += cfg.gamma_prior_shape * std::log(cfg.gamma_prior_rate) -
             std::lgamma(cfg.gamma_prior_shape) +
             (cfg.gamma_prior_shape - 1.0) * std::log(x) - cfg.gamma_prior_rate * x;
        const double a = v.par1[i], m = v.par2[i];
        f -= a * std::log(a / m) - std::lgamma(a) + (a - 1.0) * std::log(x) -
             a / m * x;
      } else {
        const double ps = LatentLayout::prior_std_for(fam, cfg);
        f += -0.5 * std::log(2.0 * M_PI) - std::log(ps) - x * x / (2.0 * ps * ps);
        const double mu = v.par1[i], sg = v.par2[i];
        f -= -0.5 * std::log(2.0 * M_PI) - std::log(sg) -
             (x - mu) * (x - mu) / (2.0 * sg * sg);
      }
    }
  }
  if (sub.trips.empty()) return f;
  const double trip_scale =
      static_cast<double>(sub.total_trips) / static_cast<double>(sub.trips.size());
  for (const TripSubsample& ts : sub.trips) {
    const Trip& trip = trips[ts.trip];
    std::size_t feasible = 0;
    for (std::uint32_t c = 0; c < cat.n_items(); ++c)
      if (cat.offered(trip, c)) ++feasible;
    for (std::size_t oi = 0; oi < ts.orders.size(); ++oi) {
      const auto& order = ts.orders[oi];
      std::vector<std::uint32_t> prefix;
      for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& negs = ts.negatives[oi][i];
        if (!negs.empty()) {
          const double avail = static_cast<double>(feasible) -
                               static_cast<double>(i + 1);
          const double w = trip_scale / static_cast<double>(ts.orders.size()) *
                           avail / static_cast<double>(negs.size());
          const double tgt = oracle_big_psi(s, cfg, cat, trip, order[i], prefix);
          for (std::uint32_t n : negs) {
            const double neg = oracle_big_psi(s, cfg, cat, trip, n, prefix);
            f += w * std::log(1.0 / (1.0 + std::exp(-(tgt - neg))));
          }
        }
        prefix.push_back(order[i]);
      }
    }
  }
  return f;
}

// all feasible alternatives at every step, in catalog order
SubsampleDraw full_subsample(const Catalog& cat, const std::vector<Trip>& trips,
                             bool both_orders_for_first) {
  SubsampleDraw sub;
  sub.total_trips = trips.size();
  for (std::size_t ti = 0; ti < trips.size(); ++ti) {
    const Trip& trip = trips[ti];
    TripSubsample ts;
    ts.trip = ti;
    std::vector<std::vector<std::uint32_t>> orders;
    orders.push_back(trip.items);
    if (both_orders_for_first && trip.items.size() == 3) {
      std::vector<std::uint32_t> swapped = {trip.items[1], trip.items[0],
                                            trip.items[2]};
      orders.push_back(swapped);
    }
    for (const auto& order : orders) {
      std::vector<std::vector<std::uint32_t>> negs(order.size());
      std::vector<char> in_prefix(cat.n_items(), 0);
      for (std::size_t i = 0; i < order.size(); ++i) {
        for (std::uint32_t c = 0; c < cat.n_items(); ++c)
          if (cat.offered(trip, c) && !in_prefix[c] && c != order[i])
            negs[i].push_back(c);
        in_prefix[order[i]] = 1;
      }
      ts.orders.push_back(order);
      ts.negatives.push_back(std::move(negs));
    }
    sub.trips.push_back(std::move(ts));
  }
  return sub;
}

}  // namespace

TEST_CASE("latent sampling is deterministic and respects the std floor") {
  const ModelConfig cfg = tiny_config();
  const Catalog cat = tiny_instance_catalog();
  const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
  const VariationalState v = tiny_vstate(layout, 21);

  Rng r1(77), r2(77);
  const auto [s1, n1] = sample_latents(v, r1);
  const auto [s2, n2] = sample_latents(v, r2);
  CHECK(s1.values == s2.values);
  CHECK(n1.eps == n2.eps);
  CHECK(n1.uniforms == n2.uniforms);

  for (std::size_t i = 0; i < layout.total(); ++i)
    if (layout.is_gamma(i)) CHECK(s1.values[i] > 0.0);

  VariationalState degenerate = v;
  for (std::size_t i = 0; i < layout.total(); ++i)
    if (!layout.is_gamma(i)) degenerate.par2[i] = 0.0;  // clamped to the floor
  Rng r3(77);
  const auto [s3, n3] = sample_latents(degenerate, r3);
  for (std::size_t i = 0; i < layout.total(); ++i)
    if (!layout.is_gamma(i))
      CHECK(std::abs(s3.values[i] - degenerate.par1[i]) <=
            1e-5 * std::abs(n3.eps[i]) + 1e-12);
}

TEST_CASE("gamma draws match the distribution moments") {
  // one gamma slot inspected across a million draws
  ModelConfig cfg = tiny_config();
  cfg.use_preferences = false;
  cfg.use_season = false;
  Catalog cat = testutil::tiny_catalog(1);
  const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
  VariationalState v(layout);
  for (std::size_t i = 0; i < layout.total(); ++i) {
    v.par1[i] = layout.is_gamma(i) ? 2.0 : 0.0;
    v.par2[i] = layout.is_gamma(i) ? 0.2 : 1.0;
  }
  const std::size_t slot = layout.gamma_begin();
  Rng rng(2024);
  const int n = 1000000;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto [state, noise] = sample_latents(v, rng);
    mean += state.values[slot];
    m2 += state.values[slot] * state.values[slot];
  }
  mean /= n;
  const double var = m2 / n - mean * mean;
  CHECK(std::abs(mean - 0.2) < 0.01 * 0.2);
  const double expected_var = 0.2 * 0.2 / 2.0;
  CHECK(std::abs(var - expected_var) < 0.02 * expected_var);
}

TEST_CASE("one-vs-each bound") {
  ModelConfig cfg = tiny_config();
  cfg.use_season = false;

  SUBCASE("tight with exactly two candidates, and log sigma(0) at equal utilities") {
    Catalog cat = testutil::tiny_catalog(1);
    const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
    Trip trip = testutil::tiny_trip(cat, {0});

    LatentState zero(layout);
    for (std::size_t i = layout.gamma_begin(); i < layout.total(); ++i)
      zero.values[i] = 0.1;
    const std::vector<std::uint32_t> negs = {cat.checkout};
    CHECK(one_vs_each_step_bound(zero, cfg, cat, trip, 1, negs) ==
          doctest::Approx(-std::log(2.0)));

    LatentState s = testutil::random_state(layout, 31);
    const TripContext ctx = make_trip_context(s, cfg, cat, trip);
    const double exact = step_log_prob_ctx(ctx, 0, {});
    CHECK(one_vs_each_step_bound(s, cfg, cat, trip, 1, negs) ==
          doctest::Approx(exact).epsilon(1e-12));
  }

  SUBCASE("full bound never exceeds the exact log softmax") {
    Catalog cat = testutil::tiny_catalog(5);
    const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
    Rng rng(9);
    for (int rep = 0; rep < 100; ++rep) {
      LatentState s = testutil::random_state(layout, 500 + rep);
      std::vector<std::uint32_t> purchases = {0, 1, 2, 3};
      const int prefix_len = static_cast<int>(rng.below(3));
      Trip trip = testutil::tiny_trip(cat, purchases);
      const int position = prefix_len + 1;
      std::vector<std::uint32_t> negatives;
      std::vector<char> used(cat.n_items(), 0);
      for (int i = 0; i < position; ++i) used[trip.items[i]] = 1;
      for (std::uint32_t c = 0; c < cat.n_items(); ++c)
        if (!used[c]) negatives.push_back(c);

      const double bound =
          one_vs_each_step_bound(s, cfg, cat, trip, position, negatives);
      const TripContext ctx = make_trip_context(s, cfg, cat, trip);
      const std::span<const std::uint32_t> prefix(trip.items.data(),
                                                  static_cast<std::size_t>(prefix_len));
      const double exact = step_log_prob_ctx(ctx, trip.items[prefix_len], prefix);
      CHECK(bound <= exact + 1e-10);
    }
  }

  SUBCASE("empty negatives while alternatives exist is a domain error") {
    Catalog cat = testutil::tiny_catalog(2);
    const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
    LatentState s(layout);
    for (std::size_t i = layout.gamma_begin(); i < layout.total(); ++i)
      s.values[i] = 0.1;
    Trip trip = testutil::tiny_trip(cat, {0});
    CHECK_THROWS_AS(one_vs_each_step_bound(s, cfg, cat, trip, 1, {}), DomainError);
  }
}

TEST_CASE("estimate_f") {
  const Catalog cat = tiny_instance_catalog();
  const std::vector<Trip> trips = tiny_instance_trips(cat);

  SUBCASE("empty subsample reduces to log prior minus log q") {
    const ModelConfig cfg = tiny_config();
    const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
    const VariationalState v = tiny_vstate(layout, 3);
    Rng rng(4);
    const auto [state, noise] = sample_latents(v, rng);
    SubsampleDraw empty;
    empty.total_trips = trips.size();
    const FValue f = estimate_f(v, state, cat, trips, cfg, empty);
    CHECK(f.value == doctest::Approx(log_prior(state, cfg) - log_q(v, state))
                         .epsilon(1e-12));
  }

  SUBCASE("matches the straight-line oracle with and without think-ahead") {
    for (bool think_ahead : {false, true}) {
      const ModelConfig cfg = tiny_config(think_ahead);
      const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
      const VariationalState v = tiny_vstate(layout, 5);
      Rng rng(6);
      const auto [state, noise] = sample_latents(v, rng);
      const SubsampleDraw sub = full_subsample(cat, trips, true);
      const FValue f = estimate_f(v, state, cat, trips, cfg, sub);
      CHECK(f.value ==
            doctest::Approx(oracle_f(v, state, cat, trips, cfg, sub)).epsilon(1e-10));
    }
  }

  SUBCASE("threaded evaluation agrees with single-threaded") {
    const ModelConfig cfg = tiny_config(true);
    const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
    const VariationalState v = tiny_vstate(layout, 8);
    Rng rng(9);
    const auto [state, noise] = sample_latents(v, rng);
    const SubsampleDraw sub = full_subsample(cat, trips, true);
    const FValue f1 = estimate_f(v, state, cat, trips, cfg, sub, 1);
    const FValue f2 = estimate_f(v, state, cat, trips, cfg, sub, 2);
    CHECK(f2.value == doctest::Approx(f1.value).epsilon(1e-12));
    for (std::size_t i = 0; i < f1.grad.size(); ++i)
      CHECK(f2.grad[i] == doctest::Approx(f1.grad[i]).epsilon(1e-9));
  }
}

TEST_CASE("subsampling is unbiased: enumeration equals the full objective") {
  const Catalog cat = tiny_instance_catalog();
  const std::vector<Trip> trips = tiny_instance_trips(cat);
  const ModelConfig cfg = tiny_config();
  const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
  const VariationalState v = tiny_vstate(layout, 11);
  Rng rng(12);
  const auto [state, noise] = sample_latents(v, rng);

  const double prior_entropy = log_prior(state, cfg) - log_q(v, state);

  // enumerate every (trip, permutation, per-step negative) configuration at
  // batch_trips = 1, batch_negatives = 1, one permutation per draw
  double expectation = 0.0;
  for (std::size_t ti = 0; ti < trips.size(); ++ti) {
    const Trip& trip = trips[ti];
    std::vector<std::uint32_t> purchases(trip.items.begin(), trip.items.end() - 1);
    std::sort(purchases.begin(), purchases.end());
    std::vector<std::vector<std::uint32_t>> perms;
    do {
      auto order = purchases;
      order.push_back(cat.checkout);
      perms.push_back(order);
    } while (std::next_permutation(purchases.begin(), purchases.end()));

    double trip_avg = 0.0;
    for (const auto& order : perms) {
      // candidate sets per step
      std::vector<std::vector<std::uint32_t>> cands(order.size());
      std::vector<char> in_prefix(cat.n_items(), 0);
      for (std::size_t i = 0; i < order.size(); ++i) {
        for (std::uint32_t c = 0; c < cat.n_items(); ++c)
          if (cat.offered(trip, c) && !in_prefix[c] && c != order[i])
            cands[i].push_back(c);
        in_prefix[order[i]] = 1;
      }
      // cartesian product over the per-step singleton choices
      std::vector<std::size_t> pick(order.size(), 0);
      std::size_t combos = 1;
      for (const auto& cs : cands) combos *= std::max<std::size_t>(1, cs.size());
      double perm_avg = 0.0;
      for (std::size_t combo = 0; combo < combos; ++combo) {
        std::size_t rest = combo;
        SubsampleDraw sub;
        sub.total_trips = trips.size();
        TripSubsample ts;
        ts.trip = ti;
        ts.orders.push_back(order);
        std::vector<std::vector<std::uint32_t>> negs(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
          if (cands[i].empty()) continue;
          negs[i].push_back(cands[i][rest % cands[i].size()]);
          rest /= cands[i].size();
        }
        ts.negatives.push_back(std::move(negs));
        sub.trips.push_back(std::move(ts));
        perm_avg += estimate_f(v, state, cat, trips, cfg, sub).value - prior_entropy;
      }
      trip_avg += perm_avg / static_cast<double>(combos);
    }
    expectation += trip_avg / static_cast<double>(perms.size()) /
                   static_cast<double>(trips.size());
  }
  expectation += prior_entropy;

  // full objective: both trips, all permutations averaged, all negatives
  SubsampleDraw full;
  full.total_trips = trips.size();
  for (std::size_t ti = 0; ti < trips.size(); ++ti) {
    const Trip& trip = trips[ti];
    std::vector<std::uint32_t> purchases(trip.items.begin(), trip.items.end() - 1);
    std::sort(purchases.begin(), purchases.end());
    TripSubsample ts;
    ts.trip = ti;
    do {
      auto order = purchases;
      order.push_back(cat.checkout);
      std::vector<std::vector<std::uint32_t>> negs(order.size());
      std::vector<char> in_prefix(cat.n_items(), 0);
      for (std::size_t i = 0; i < order.size(); ++i) {
        for (std::uint32_t c = 0; c < cat.n_items(); ++c)
          if (cat.offered(trip, c) && !in_prefix[c] && c != order[i])
            negs[i].push_back(c);
        in_prefix[order[i]] = 1;
      }
      ts.orders.push_back(order);
      ts.negatives.push_back(std::move(negs));
    } while (std::next_permutation(purchases.begin(), purchases.end()));
    full.trips.push_back(std::move(ts));
  }
  const double full_f = estimate_f(v, state, cat, trips, cfg, full).value;
  CHECK(expectation == doctest::Approx(full_f).epsilon(1e-8));
}

TEST_CASE("stochastic parameter gradients match closed-form oracles") {
  // no data: f = log p - log q, whose expectation has a closed form
  ModelConfig cfg;
  cfg.k_items = 1;
  cfg.k_price = 1;
  cfg.use_preferences = false;
  cfg.use_price = true;
  cfg.use_season = false;
  Catalog cat = testutil::tiny_catalog(1);
  const LatentLayout layout(cfg, cat.n_items(), cat.n_users());
  const std::vector<Trip> no_trips;

  VariationalState v(layout);
  // Gaussian slots at assorted points; gamma slots at assorted (shape, mean)
  const double mus[] = {0.4, -0.7, 0.15, 0.9, -0.3, 0.6};
  const double sigmas[] = {0.7, 1.3, 0.5, 0.8, 1.1, 0.6};
  const double shapes[] = {1.4, 2.2, 0.9};
  const double means[] = {0.15, 0.3, 0.08};
  std::size_t gauss_seen = 0, gamma_seen = 0;
  for (std::size_t i = 0; i < layout.total(); ++i) {
    if (layout.is_gamma(i)) {
      v.par1[i] = shapes[gamma_seen % 3];
      v.par2[i] = means[gamma_seen % 3];
      ++gamma_seen;
    } else {
      v.par1[i] = mus[gauss_seen % 6];
      v.par2[i] = sigmas[gauss_seen % 6];
      ++gauss_seen;
    }
  }

  const int n_draws = 100000;
  Rng rng(31337);
  SubsampleDraw empty;
  empty.total_trips = 0;
  std::vector<double> sum1(layout.total(), 0.0), sq1(layout.total(), 0.0);
  std::vector<double> sum2(layout.total(), 0.0), sq2(layout.total(), 0.0);
  for (int it = 0; it < n_draws; ++it) {
    const auto [state, noise] = sample_latents(v, rng);
    const FValue f = estimate_f(v, state, cat, no_trips, cfg, empty);
    const NuGradient g = gradient_estimate(v, state, noise, f);
    for (std::size_t i = 0; i < layout.total(); ++i) {
      sum1[i] += g.par1[i];
      sq1[i] += g.par1[i] * g.par1[i];
      sum2[i] += g.par2[i];
      sq2[i] += g.par2[i] * g.par2[i];
    }
  }

  auto check_within_3se = [&](double estimate_mean, double estimate_sq, double truth) {
    const double mean = estimate_mean / n_draws;
    const double var = std::max(0.0, estimate_sq / n_draws - mean * mean);
    const double se = std::sqrt(var / n_draws);
    CHECK(std::abs(mean - truth) <= 3.0 * se + 1e-12);
  };

  // closed-form ELBO per gamma slot (prior shape 1, rate 10; q(shape a, mean m)):
  //   log 10 - 10 m + a - log a + log m + lgamma(a) + (1 - a) digamma(a)
  auto gamma_elbo = [&](double a, double m) {
    return std::log(10.0) - 10.0 * m + a - std::log(a) + std::log(m) +
           std::lgamma(a) + (1.0 - a) * oracle_digamma(a);
  };
  for (std::size_t i = 0; i < layout.total(); ++i) {
    if (layout.is_gamma(i)) {
      const double a = v.par1[i], m = v.par2[i];
      const double h = 1e-6;
      const double da = (gamma_elbo(a + h, m) - gamma_elbo(a - h, m)) / (2.0 * h);
      check_within_3se(sum1[i], sq1[i], a * da);          // d/d log shape
      check_within_3se(sum2[i], sq2[i], 1.0 - 10.0 * m);  // d/d log mean
    } else {
      const double mu = v.par1[i], sg = v.par2[i];
      const double s = LatentLayout::prior_std_for(Family::kItemAttr, cfg);
      check_within_3se(sum1[i], sq1[i], -mu / (s * s));
      check_within_3se(sum2[i], sq2[i], 1.0 - sg * sg / (s * s));  // d/d log std
    }
  }
}

TEST_CASE("fit is reproducible and monitors validation") {
  ModelConfig cfg = tiny_config();
  cfg.use_season = false;
  const Catalog cat = tiny_instance_catalog();
  std::vector<Trip> train;
  Rng mk(5);
  for (int i = 0; i < 30; ++i) {
    Trip t = testutil::tiny_trip(
        cat, {static_cast<std::uint32_t>(mk.below(3))},
        static_cast<std::uint32_t>(mk.below(2)));
    if (mk.uniform() < 0.5) {
      t.absolute_week = 2;
      t.week = 2;
      t.price_row = 1;
    }
    t.trip_id = i;
    train.push_back(t);
  }
  std::vector<Trip> validation(train.begin(), train.begin() + 5);

  OptimizerConfig opt;
  opt.batch_trips = 8;
  opt.batch_negatives = 2;
  opt.max_iterations = 120;
  opt.eval_every = 40;
  opt.rng_seed = 99;

  const FitResult a = fit(cat, train, validation, cfg, opt);
  const FitResult b = fit(cat, train, validation, cfg, opt);
  CHECK(a.state.par1 == b.state.par1);
  CHECK(a.state.par2 == b.state.par2);
  CHECK(a.trace.size() == b.trace.size());
  CHECK(a.trace.size() <= 120);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].objective == b.trace[i].objective);
    CHECK(std::isfinite(a.trace[i].objective));
  }
  CHECK(std::isfinite(a.final_validation));

  // gamma parameters stay strictly positive through training
  for (std::size_t i = a.state.layout.gamma_begin(); i < a.state.layout.total(); ++i) {
    CHECK(a.state.par1[i] >= VariationalState::kFloor);
    CHECK(a.state.par2[i] >= VariationalState::kFloor);
  }
}

TEST_CASE("a diverging objective raises an optimization error with the iteration") {
  ModelConfig cfg = tiny_config();
  cfg.use_season = false;
  const Catalog cat = tiny_instance_catalog();
  std::vector<Trip> train = tiny_instance_trips(cat);

  OptimizerConfig opt;
  opt.batch_trips = 2;
  opt.batch_negatives = 2;
  opt.max_iterations = 50;
  opt.step_base = 1e4;  // blows up the log-space updates
  opt.rng_seed = 3;
  try {
    fit(cat, train, {}, cfg, opt);
    FAIL("expected OptimizationError");
  } catch (const OptimizationError& e) {
    CHECK(e.iteration >= 1);
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("the smoothed stochastic objective trends upward after warmup") {
  ToyWorldConfig world;
  world.n_customers_per_segment = 10;
  world.n_trips_per_customer = 100;
  world.rng_seed = 17;
  const Dataset data = generate_world(world);

  ModelConfig cfg;
  cfg.k_items = 4;
  cfg.k_price = 2;
  cfg.use_preferences = true;
  cfg.use_price = true;
  cfg.use_season = false;

  OptimizerConfig opt;
  opt.batch_trips = 50;
  opt.batch_negatives = 8;
  opt.max_iterations = 3000;
  opt.eval_every = 1000;
  opt.rng_seed = 2;
  const DatasetSplit split = split_dataset(data.trips, 2);
  const FitResult result = fit(data.catalog, split.train, split.validation, cfg, opt);
  REQUIRE(result.trace.size() == 3000);

  // block means over 500-iteration windows, first 1000 iterations as warmup
  const int block = 500;
  std::vector<double> means, ses;
  for (std::size_t start = 1000; start + block <= result.trace.size(); start += block) {
    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < block; ++i) {
      const double x = result.trace[start + i].objective;
      m += x;
      m2 += x * x;
    }
    m /= block;
    means.push_back(m);
    ses.push_back(std::sqrt(std::max(0.0, m2 / block - m * m) / block));
  }
  for (std::size_t k = 1; k < means.size(); ++k)
    CHECK(means[k] >= means[k - 1] - 3.0 * (ses[k] + ses[k - 1]));
}
