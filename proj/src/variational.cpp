#include "baskets/variational.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "baskets/errors.hpp"

namespace baskets {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kLog2Pi = 1.8378770664093454836;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double digamma(double x) {
  double r = 0.0;
  while (x < 6.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return r + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
}

bool in_span(std::span<const std::uint32_t> xs, std::uint32_t x) {
  return std::find(xs.begin(), xs.end(), x) != xs.end();
}

// d(log prior - log q)/d latent, one slot
double prior_entropy_grad(const VariationalState& v, const ModelConfig& cfg,
                          Family family, std::size_t slot, double x) {
  if (v.layout.is_gamma(slot)) {
    const double a = std::max(v.par1[slot], VariationalState::kFloor);
    const double m = std::max(v.par2[slot], VariationalState::kFloor);
    const double prior = (cfg.gamma_prior_shape - 1.0) / x - cfg.gamma_prior_rate;
    const double q = (a - 1.0) / x - a / m;
    return prior - q;
  }
  const double s = LatentLayout::prior_std_for(family, cfg);
  const double mu = v.par1[slot];
  const double sigma = std::max(v.par2[slot], VariationalState::kFloor);
  return -x / (s * s) + (x - mu) / (sigma * sigma);
}

// Accumulates w * dPsi(item | basket)/d latents into grad, including the
// selected look-ahead branch when there is one.
void accumulate_utility_grad(const TripContext& ctx, std::uint32_t item,
                             std::span<const std::uint32_t> basket,
                             std::int32_t lookahead_item, double w,
                             std::span<double> grad) {
  const LatentState& s = *ctx.state;
  const ModelConfig& cfg = *ctx.cfg;
  const LatentLayout& L = s.layout;

  auto add_psi = [&](std::uint32_t c, double wc) {
    grad[L.index(Family::kItemPopularity, c)] += wc;
    if (cfg.use_preferences) {
      const double* pref = s.row(Family::kUserPref, ctx.user);
      const double* attr = s.row(Family::kItemAttr, c);
      const std::size_t gp = L.index(Family::kUserPref, ctx.user);
      const std::size_t ga = L.index(Family::kItemAttr, c);
      for (int k = 0; k < cfg.k_items; ++k) {
        grad[gp + k] += wc * attr[k];
        grad[ga + k] += wc * pref[k];
      }
    }
    if (cfg.use_price && c != ctx.checkout) {
      const double lp = ctx.log_norm_price[c];
      if (lp != 0.0) {
        const double* su = s.row(Family::kUserPriceSens, ctx.user);
        const double* sc = s.row(Family::kItemPriceSens, c);
        const std::size_t gu = L.index(Family::kUserPriceSens, ctx.user);
        const std::size_t gc = L.index(Family::kItemPriceSens, c);
        for (int k = 0; k < cfg.k_price; ++k) {
          grad[gu + k] -= wc * lp * sc[k];
          grad[gc + k] -= wc * lp * su[k];
        }
      }
    }
    if (cfg.use_season) {
      const auto week_row = static_cast<std::size_t>(ctx.week - 1);
      const double* wk = s.row(Family::kWeekSeason, week_row);
      const double* is = s.row(Family::kItemSeason, c);
      const std::size_t gw = L.index(Family::kWeekSeason, week_row);
      const std::size_t gi = L.index(Family::kItemSeason, c);
      for (int k = 0; k < cfg.k_season; ++k) {
        grad[gw + k] += wc * is[k];
        grad[gi + k] += wc * wk[k];
      }
    }
  };

  add_psi(item, w);

  if (!basket.empty()) {
    const double scale = w / static_cast<double>(basket.size());
    const std::size_t gi = L.index(Family::kItemInteraction, item);
    const double* rho = s.row(Family::kItemInteraction, item);
    for (std::uint32_t b : basket) {
      const double* attr = s.row(Family::kItemAttr, b);
      const std::size_t ga = L.index(Family::kItemAttr, b);
      for (int k = 0; k < cfg.k_items; ++k) {
        grad[gi + k] += scale * attr[k];
        grad[ga + k] += scale * rho[k];
      }
    }
  }

  if (lookahead_item >= 0) {
    const auto c2 = static_cast<std::uint32_t>(lookahead_item);
    add_psi(c2, w);
    const double inv_i = 1.0 / static_cast<double>(basket.size() + 1);
    const double* rho2 = s.row(Family::kItemInteraction, c2);
    const std::size_t gi2 = L.index(Family::kItemInteraction, c2);
    const std::size_t g_item = L.index(Family::kItemAttr, item);
    const double* attr_item = s.row(Family::kItemAttr, item);
    for (int k = 0; k < cfg.k_items; ++k) {
      grad[gi2 + k] += w * inv_i * attr_item[k];
      grad[g_item + k] += w * inv_i * rho2[k];
    }
    for (std::uint32_t b : basket) {
      const double* attr = s.row(Family::kItemAttr, b);
      const std::size_t ga = L.index(Family::kItemAttr, b);
      for (int k = 0; k < cfg.k_items; ++k) {
        grad[gi2 + k] += w * inv_i * attr[k];
        grad[ga + k] += w * inv_i * rho2[k];
      }
    }
  }
}

// Likelihood part of f for one subsampled trip.
double trip_objective(const LatentState& state, const ModelConfig& cfg,
                      const Catalog& catalog, const Trip& trip,
                      const TripSubsample& sub, double trip_scale,
                      std::span<double> grad) {
  const TripContext ctx = make_trip_context(state, cfg, catalog, trip);
  const double order_w = trip_scale / static_cast<double>(sub.orders.size());
  double value = 0.0;
  for (std::size_t oi = 0; oi < sub.orders.size(); ++oi) {
    const auto& order = sub.orders[oi];
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& negs = sub.negatives[oi][i];
      if (negs.empty()) continue;
      const std::span<const std::uint32_t> prefix(order.data(), i);
      const double avail =
          static_cast<double>(ctx.feasible.size()) - static_cast<double>(i + 1);
      const double w_step = order_w * avail / static_cast<double>(negs.size());
      const UtilityBreakdown target = full_utility_ctx(ctx, order[i], prefix);
      double target_w = 0.0;
      for (std::uint32_t n : negs) {
        const UtilityBreakdown neg = full_utility_ctx(ctx, n, prefix);
        const double delta = target.value - neg.value;
        value += w_step * log_sigmoid(delta);
        const double d = w_step * sigmoid(-delta);
        target_w += d;
        accumulate_utility_grad(ctx, n, prefix, neg.lookahead_item, -d, grad);
      }
      accumulate_utility_grad(ctx, order[i], prefix, target.lookahead_item,
                              target_w, grad);
    }
  }
  return value;
}

}  // namespace

void VariationalState::validate() const {
  if (par1.size() != layout.total() || par2.size() != layout.total())
    throw DomainError("variational parameter arrays do not match the layout");
  for (std::size_t i = 0; i < par1.size(); ++i) {
    if (layout.is_gamma(i)) {
      if (!(par1[i] > 0.0) || !(par2[i] > 0.0))
        throw DomainError("gamma variational parameters must be positive");
    } else if (!(par2[i] > 0.0)) {
      throw DomainError("Gaussian variational stds must be positive");
    }
  }
}

LatentState VariationalState::posterior_mean_state() const {
  LatentState s(layout);
  for (std::size_t i = 0; i < par1.size(); ++i)
    s.values[i] = layout.is_gamma(i) ? par2[i] : par1[i];
  return s;
}

void OptimizerConfig::validate() const {
  if (batch_trips < 1 || batch_negatives < 1 || permutations_per_trip < 1)
    throw DomainError("optimizer batch sizes must be >= 1");
  if (step_base <= 0.0 || step_memory <= 0.0 || step_memory >= 1.0)
    throw DomainError("bad step schedule parameters");
  if (max_iterations < 1 || eval_every < 1 || convergence_checks < 1)
    throw DomainError("bad iteration controls");
  if (threads < 1) throw DomainError("threads must be >= 1");
}

GammaDraw gamma_transform(double shape, double mean, double eps,
                          const double* uniforms, int augmentation) {
  const double ahat = shape + augmentation;
  const double d = ahat - 1.0 / 3.0;
  const double c = 1.0 / (3.0 * std::sqrt(d));
  const double v = 1.0 + c * eps;
  const double v3 = v * v * v;
  const double h = d * v3;
  const double dv_da = -4.5 * c * c * c * eps;
  const double dh_da = v3 + 3.0 * d * v * v * dv_da;

  double log_aug = 0.0;
  double dlog_aug_da = 0.0;
  for (int p = 1; p <= augmentation; ++p) {
    const double denom = shape + p - 1.0;
    const double lu = std::log(uniforms[p - 1]);
    log_aug += lu / denom;
    dlog_aug_da -= lu / (denom * denom);
  }

  GammaDraw out;
  out.value = mean / shape * h * std::exp(log_aug);
  out.dvalue_dshape = out.value * (-1.0 / shape + dh_da / h + dlog_aug_da);
  out.dvalue_dmean = out.value / mean;
  // log pi(eps; shape) = log Gamma(h; ahat, 1) + log dh/deps, acceptance ~ 1
  out.score_dshape = std::log(h) - digamma(ahat) + dh_da * ((ahat - 1.0) / h - 1.0) +
                     0.5 / d + 2.0 * dv_da / v;
  return out;
}

std::pair<LatentState, NoiseDraw> sample_latents(const VariationalState& v,
                                                 Rng& rng) {
  const std::size_t n = v.layout.total();
  const std::size_t gb = v.layout.gamma_begin();
  constexpr int P = VariationalState::kShapeAugmentation;

  LatentState state(v.layout);
  NoiseDraw noise;
  noise.eps.resize(n);
  noise.uniforms.resize((n - gb) * P);
  for (std::size_t i = 0; i < n; ++i) {
    if (!v.layout.is_gamma(i)) {
      const double sigma = std::max(v.par2[i], VariationalState::kFloor);
      noise.eps[i] = rng.normal();
      state.values[i] = v.par1[i] + sigma * noise.eps[i];
      continue;
    }
    const double a = std::max(v.par1[i], VariationalState::kFloor);
    const double m = std::max(v.par2[i], VariationalState::kFloor);
    const double d = a + P - 1.0 / 3.0;
    double eps;
    do {
      eps = rng.normal();
    } while (1.0 + eps / (3.0 * std::sqrt(d)) <= 0.0);
    noise.eps[i] = eps;
    double* u = noise.uniforms.data() + (i - gb) * P;
    for (int p = 0; p < P; ++p) u[p] = rng.uniform_pos();
    state.values[i] = gamma_transform(a, m, eps, u, P).value;
  }
  return {std::move(state), std::move(noise)};
}

double one_vs_each_step_bound(const LatentState& state, const ModelConfig& cfg,
                              const Catalog& catalog, const Trip& trip,
                              int position,
                              std::span<const std::uint32_t> negatives) {
  if (position < 1 || static_cast<std::size_t>(position) > trip.items.size())
    throw DomainError("step position out of range");
  const TripContext ctx = make_trip_context(state, cfg, catalog, trip);
  const std::span<const std::uint32_t> prefix(trip.items.data(),
                                              static_cast<std::size_t>(position - 1));
  const std::uint32_t target = trip.items[static_cast<std::size_t>(position - 1)];
  const double avail =
      static_cast<double>(ctx.feasible.size()) - static_cast<double>(position);
  if (negatives.empty()) {
    if (avail > 0.0)
      throw DomainError("empty negative set while feasible alternatives exist");
    return 0.0;
  }
  for (std::uint32_t n : negatives) {
    if (n == target || in_span(prefix, n))
      throw DomainError("negative item collides with the target or basket prefix");
    if (!std::isfinite(ctx.psi[n]))
      throw DomainError("negative item is not offered in this trip");
  }

  const UtilityBreakdown tgt = full_utility_ctx(ctx, target, prefix);
  double sum = 0.0;
  for (std::uint32_t n : negatives)
    sum += log_sigmoid(tgt.value - full_utility_ctx(ctx, n, prefix).value);
  return avail / static_cast<double>(negatives.size()) * sum;
}

SubsampleDraw draw_subsample(const Catalog& catalog, const std::vector<Trip>& trips,
                             const OptimizerConfig& opt, Rng& rng) {
  SubsampleDraw draw;
  draw.total_trips = trips.size();
  const std::size_t batch =
      std::min<std::size_t>(static_cast<std::size_t>(opt.batch_trips), trips.size());

  std::vector<std::size_t> chosen;
  chosen.reserve(batch);
  if (batch == trips.size()) {
    for (std::size_t i = 0; i < batch; ++i) chosen.push_back(i);
  } else {
    while (chosen.size() < batch) {
      const std::size_t i = rng.below(trips.size());
      if (std::find(chosen.begin(), chosen.end(), i) == chosen.end())
        chosen.push_back(i);
    }
  }

  std::vector<std::uint32_t> feasible;
  std::vector<char> in_prefix;
  for (std::size_t ti : chosen) {
    const Trip& trip = trips[ti];
    TripSubsample sub;
    sub.trip = ti;
    feasible.clear();
    for (std::uint32_t c = 0; c < catalog.n_items(); ++c)
      if (catalog.offered(trip, c)) feasible.push_back(c);

    std::vector<std::uint32_t> base(trip.items.begin(), trip.items.end() - 1);
    for (int r = 0; r < opt.permutations_per_trip; ++r) {
      rng.shuffle(base);
      std::vector<std::uint32_t> order = base;
      order.push_back(catalog.checkout);

      in_prefix.assign(catalog.n_items(), 0);
      std::vector<std::vector<std::uint32_t>> step_negs(order.size());
      for (std::size_t i = 0; i < order.size(); ++i) {
        std::vector<std::uint32_t> cands;
        for (std::uint32_t c : feasible)
          if (!in_prefix[c] && c != order[i]) cands.push_back(c);
        if (cands.size() > static_cast<std::size_t>(opt.batch_negatives)) {
          for (std::size_t j = 0; j < static_cast<std::size_t>(opt.batch_negatives); ++j) {
            const std::size_t pick = j + rng.below(cands.size() - j);
            std::swap(cands[j], cands[pick]);
          }
          cands.resize(static_cast<std::size_t>(opt.batch_negatives));
        }
        step_negs[i] = std::move(cands);
        in_prefix[order[i]] = 1;
      }
      sub.orders.push_back(std::move(order));
      sub.negatives.push_back(std::move(step_negs));
    }
    draw.trips.push_back(std::move(sub));
  }
  return draw;
}

double log_prior(const LatentState& state, const ModelConfig& cfg) {
  const LatentLayout& L = state.layout;
  double ll = 0.0;
  for (Family f : kAllFamilies) {
    const FamilyBlock& b = L.block(f);
    if (!b.active) continue;
    if (L.is_gamma(b.offset)) {
      const double a0 = cfg.gamma_prior_shape;
      const double b0 = cfg.gamma_prior_rate;
      const double norm = a0 * std::log(b0) - std::lgamma(a0);
      for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
        const double x = state.values[i];
        ll += norm + (a0 - 1.0) * std::log(x) - b0 * x;
      }
    } else {
      const double s = LatentLayout::prior_std_for(f, cfg);
      const double norm = -0.5 * kLog2Pi - std::log(s);
      const double inv2s2 = 0.5 / (s * s);
      for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
        const double x = state.values[i];
        ll += norm - x * x * inv2s2;
      }
    }
  }
  return ll;
}

double log_q(const VariationalState& v, const LatentState& state) {
  double ll = 0.0;
  for (std::size_t i = 0; i < v.par1.size(); ++i) {
    const double x = state.values[i];
    if (v.layout.is_gamma(i)) {
      const double a = std::max(v.par1[i], VariationalState::kFloor);
      const double m = std::max(v.par2[i], VariationalState::kFloor);
      const double rate = a / m;
      ll += a * std::log(rate) - std::lgamma(a) + (a - 1.0) * std::log(x) - rate * x;
    } else {
      const double mu = v.par1[i];
      const double sigma = std::max(v.par2[i], VariationalState::kFloor);
      const double z = (x - mu) / sigma;
      ll += -0.5 * kLog2Pi - std::log(sigma) - 0.5 * z * z;
    }
  }
  return ll;
}

FValue estimate_f(const VariationalState& v, const LatentState& state,
                  const Catalog& catalog, const std::vector<Trip>& trips,
                  const ModelConfig& cfg, const SubsampleDraw& subsample,
                  int threads) {
  FValue out;
  out.grad.assign(v.layout.total(), 0.0);
  out.value = log_prior(state, cfg) - log_q(v, state);

  for (Family f : kAllFamilies) {
    const FamilyBlock& b = v.layout.block(f);
    if (!b.active) continue;
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i)
      out.grad[i] += prior_entropy_grad(v, cfg, f, i, state.values[i]);
  }

  if (subsample.trips.empty()) return out;
  const double trip_scale = static_cast<double>(subsample.total_trips) /
                            static_cast<double>(subsample.trips.size());

  const std::size_t n_tasks = subsample.trips.size();
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(n_tasks)));
  if (n_threads == 1) {
    for (const TripSubsample& sub : subsample.trips)
      out.value += trip_objective(state, cfg, catalog, trips[sub.trip], sub,
                                  trip_scale, out.grad);
    return out;
  }

  std::vector<double> values(static_cast<std::size_t>(n_threads), 0.0);
  std::vector<std::vector<double>> grads(
      static_cast<std::size_t>(n_threads),
      std::vector<double>(v.layout.total(), 0.0));
  std::vector<std::thread> pool;
  for (int w = 0; w < n_threads; ++w) {
    pool.emplace_back([&, w]() {
      const std::size_t begin = n_tasks * static_cast<std::size_t>(w) /
                                static_cast<std::size_t>(n_threads);
      const std::size_t end = n_tasks * static_cast<std::size_t>(w + 1) /
                              static_cast<std::size_t>(n_threads);
      for (std::size_t t = begin; t < end; ++t) {
        const TripSubsample& sub = subsample.trips[t];
        values[static_cast<std::size_t>(w)] +=
            trip_objective(state, cfg, catalog, trips[sub.trip], sub, trip_scale,
                           grads[static_cast<std::size_t>(w)]);
      }
    });
  }
  for (auto& th : pool) th.join();
  for (int w = 0; w < n_threads; ++w) {
    out.value += values[static_cast<std::size_t>(w)];
    const auto& g = grads[static_cast<std::size_t>(w)];
    for (std::size_t i = 0; i < g.size(); ++i) out.grad[i] += g[i];
  }
  return out;
}

NuGradient gradient_estimate(const VariationalState& v, const LatentState& state,
                             const NoiseDraw& noise, const FValue& f,
                             double score_baseline) {
  (void)state;  // the draw is reconstructed from the noise and parameters
  const std::size_t n = v.layout.total();
  const std::size_t gb = v.layout.gamma_begin();
  constexpr int P = VariationalState::kShapeAugmentation;
  NuGradient g;
  g.par1.assign(n, 0.0);
  g.par2.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!v.layout.is_gamma(i)) {
      const double sigma = std::max(v.par2[i], VariationalState::kFloor);
      g.par1[i] = f.grad[i];                           // d/d mean
      g.par2[i] = f.grad[i] * noise.eps[i] * sigma;    // d/d log std
    } else {
      const double a = std::max(v.par1[i], VariationalState::kFloor);
      const double m = std::max(v.par2[i], VariationalState::kFloor);
      const GammaDraw gd = gamma_transform(a, m, noise.eps[i],
                                           noise.uniforms.data() + (i - gb) * P, P);
      const double dshape = f.grad[i] * gd.dvalue_dshape +
                            (f.value - score_baseline) * gd.score_dshape;
      g.par1[i] = dshape * a;                          // d/d log shape
      g.par2[i] = f.grad[i] * gd.dvalue_dmean * m;     // d/d log mean
    }
  }
  return g;
}

double bounded_per_item_loglik(const LatentState& state, const ModelConfig& cfg,
                               const Catalog& catalog,
                               std::span<const Trip> trips) {
  double sum = 0.0;
  std::size_t steps = 0;
  std::vector<char> in_prefix;
  for (const Trip& trip : trips) {
    const TripContext ctx = make_trip_context(state, cfg, catalog, trip);
    in_prefix.assign(catalog.n_items(), 0);
    for (std::size_t i = 0; i < trip.items.size(); ++i) {
      const std::span<const std::uint32_t> prefix(trip.items.data(), i);
      const std::uint32_t target = trip.items[i];
      const UtilityBreakdown tgt = full_utility_ctx(ctx, target, prefix);
      double bound = 0.0;
      for (std::uint32_t c : ctx.feasible) {
        if (in_prefix[c] || c == target) continue;
        bound += log_sigmoid(tgt.value - full_utility_ctx(ctx, c, prefix).value);
      }
      sum += bound;
      ++steps;
      in_prefix[target] = 1;
    }
  }
  return steps == 0 ? kNaN : sum / static_cast<double>(steps);
}

FitResult fit(const Catalog& catalog, const std::vector<Trip>& train,
              const std::vector<Trip>& validation, const ModelConfig& cfg,
              const OptimizerConfig& opt) {
  cfg.validate();
  opt.validate();
  if (train.empty()) throw DataError("cannot fit on empty training data");

  const LatentLayout layout(cfg, catalog.n_items(), catalog.n_users());
  Rng root(opt.rng_seed);
  Rng init_rng = root.stream(0);
  Rng iter_rng = root.stream(1);
  Rng val_rng = root.stream(2);

  VariationalState v(layout);
  for (std::size_t i = 0; i < layout.total(); ++i) {
    if (layout.is_gamma(i)) {
      v.par1[i] = 1.0 + 0.01 * init_rng.uniform();
      v.par2[i] = cfg.gamma_prior_shape / cfg.gamma_prior_rate;
    } else {
      v.par1[i] = 0.1 * init_rng.normal();
      v.par2[i] = 0.1;
    }
  }

  std::vector<Trip> val_subsample;
  if (!validation.empty()) {
    std::vector<std::size_t> idx(validation.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    val_rng.shuffle(idx);
    const std::size_t n_val = std::min<std::size_t>(
        static_cast<std::size_t>(opt.validation_subsample), validation.size());
    for (std::size_t i = 0; i < n_val; ++i)
      val_subsample.push_back(validation[idx[i]]);
  }

  const std::size_t n = layout.total();
  std::vector<double> rms1(n, 0.0), rms2(n, 0.0);
  double baseline = 0.0;
  double best_val = -std::numeric_limits<double>::infinity();
  double last_val = kNaN;
  int stale_checks = 0;

  FitResult result;
  result.trace.reserve(static_cast<std::size_t>(opt.max_iterations));
  const auto t0 = std::chrono::steady_clock::now();

  int m = 0;
  for (m = 1; m <= opt.max_iterations; ++m) {
    auto [state, noise] = sample_latents(v, iter_rng);
    const SubsampleDraw sub = draw_subsample(catalog, train, opt, iter_rng);
    const FValue fv = estimate_f(v, state, catalog, train, cfg, sub, opt.threads);
    if (!std::isfinite(fv.value))
      throw OptimizationError("stochastic objective is not finite", m);
    const NuGradient g = gradient_estimate(v, state, noise, fv, baseline);
    baseline = fv.value;

    const double step_m =
        opt.step_base * std::pow(static_cast<double>(m), -opt.step_decay_exponent);
    for (std::size_t i = 0; i < n; ++i) {
      const double g1 = g.par1[i];
      const double g2 = g.par2[i];
      if (m == 1) {
        rms1[i] = g1 * g1;
        rms2[i] = g2 * g2;
      } else {
        rms1[i] = opt.step_memory * rms1[i] + (1.0 - opt.step_memory) * g1 * g1;
        rms2[i] = opt.step_memory * rms2[i] + (1.0 - opt.step_memory) * g2 * g2;
      }
      const double d1 = step_m * g1 / (opt.step_stabilizer + std::sqrt(rms1[i]));
      const double d2 = step_m * g2 / (opt.step_stabilizer + std::sqrt(rms2[i]));
      if (!v.layout.is_gamma(i)) {
        if (std::isfinite(d1)) v.par1[i] += d1;
        if (std::isfinite(d2))
          v.par2[i] = std::max(VariationalState::kFloor, v.par2[i] * std::exp(d2));
      } else {
        if (std::isfinite(d1))
          v.par1[i] = std::max(VariationalState::kFloor, v.par1[i] * std::exp(d1));
        if (std::isfinite(d2))
          v.par2[i] = std::max(VariationalState::kFloor, v.par2[i] * std::exp(d2));
      }
    }

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.trace.push_back(TraceRow{m, fv.value, last_val, elapsed});

    if (!val_subsample.empty() && m % opt.eval_every == 0) {
      const LatentState point = v.posterior_mean_state();
      last_val = bounded_per_item_loglik(point, cfg, catalog, val_subsample);
      result.trace.back().validation = last_val;
      if (last_val > best_val + 1e-6) {
        best_val = last_val;
        stale_checks = 0;
      } else {
        ++stale_checks;
      }
      if (stale_checks >= opt.convergence_checks) {
        result.converged = true;
        break;
      }
    }
  }

  result.iterations_run = std::min(m, opt.max_iterations);
  result.final_validation = last_val;
  result.state = std::move(v);
  return result;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace,
                     const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trace file: " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "iteration,objective_estimate,validation_loglik,elapsed_seconds\n";
  out.precision(17);
  for (const TraceRow& row : trace)
    out << row.iteration << ',' << row.objective << ',' << row.validation << ','
        << row.seconds << "\n";
  if (!out.flush()) throw DataError("failed writing " + path);
}

}  // namespace baskets
