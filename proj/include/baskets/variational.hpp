#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "baskets/catalog.hpp"
#include "baskets/model.hpp"
#include "baskets/rng.hpp"

namespace baskets {

// Mean-field variational parameters over the latent layout. Gaussian-prior
// slots hold (mean, std) in (par1, par2); gamma-prior slots hold (shape, mean).
struct VariationalState {
  static constexpr double kFloor = 1e-5;
  static constexpr int kShapeAugmentation = 10;  // P in the gamma transform

  LatentLayout layout;
  std::vector<double> par1;
  std::vector<double> par2;

  VariationalState() = default;
  explicit VariationalState(const LatentLayout& l)
      : layout(l), par1(l.total(), 0.0), par2(l.total(), 1.0) {}

  void validate() const;
  // Point estimate: Gaussian means and gamma means.
  LatentState posterior_mean_state() const;
};

// Auxiliary noise behind one latent draw: a standard normal per slot, plus
// the shape-augmentation uniforms for every gamma slot.
struct NoiseDraw {
  std::vector<double> eps;
  std::vector<double> uniforms;  // (slot - gamma_begin) * P + p
};

// Transforms noise into a latent draw. Gaussian: mean + std * eps. Gamma:
// rejection-sampler transform at shape + P, scaled down through P uniform
// powers and calibrated so the draw has the configured mean.
std::pair<LatentState, NoiseDraw> sample_latents(const VariationalState& v, Rng& rng);

// Pathwise and score pieces of one gamma draw; shared by the sampler and the
// parameter-gradient chain rule.
struct GammaDraw {
  double value = 0.0;
  double dvalue_dshape = 0.0;
  double dvalue_dmean = 0.0;
  double score_dshape = 0.0;  // d log pi(eps; shape) / d shape
};
GammaDraw gamma_transform(double shape, double mean, double eps,
                          const double* uniforms, int augmentation);

// Subsampled one-vs-each lower bound on the log probability of the choice at
// 1-based `position` of the trip's recorded order. With every feasible
// non-basket alternative as negatives this is the full (deterministic) bound.
double one_vs_each_step_bound(const LatentState& state, const ModelConfig& cfg,
                              const Catalog& catalog, const Trip& trip,
                              int position,
                              std::span<const std::uint32_t> negatives);

// One iteration's subsample: which trips, the sampled basket order(s) per
// trip, and the negative items per order and step.
struct TripSubsample {
  std::size_t trip = 0;                              // index into training trips
  std::vector<std::vector<std::uint32_t>> orders;    // permuted items, checkout last
  std::vector<std::vector<std::vector<std::uint32_t>>> negatives;  // [order][step]
};
struct SubsampleDraw {
  std::vector<TripSubsample> trips;
  std::size_t total_trips = 0;  // T in the likelihood rescaling
};

struct OptimizerConfig {
  int batch_trips = 100;       // trips per iteration
  int batch_negatives = 50;    // cap on negatives per step
  int permutations_per_trip = 1;
  double step_base = 0.1;
  double step_decay_exponent = 0.5 + 1e-16;
  double step_stabilizer = 1e-16;
  double step_memory = 0.9;
  int max_iterations = 20000;
  int eval_every = 1000;
  int convergence_checks = 10;  // patience, in validation checks
  int validation_subsample = 500;
  std::uint64_t rng_seed = 1;
  int threads = 1;

  void validate() const;
};

SubsampleDraw draw_subsample(const Catalog& catalog, const std::vector<Trip>& trips,
                             const OptimizerConfig& opt, Rng& rng);

// Realized objective f = log prior - log q + rescaled one-vs-each sums, and
// its exact gradient with respect to every latent slot. With think-ahead on,
// the gradient flows through the selected look-ahead branch.
struct FValue {
  double value = 0.0;
  std::vector<double> grad;
};
FValue estimate_f(const VariationalState& v, const LatentState& state,
                  const Catalog& catalog, const std::vector<Trip>& trips,
                  const ModelConfig& cfg, const SubsampleDraw& subsample,
                  int threads = 1);

// Chain rule through the sampling transforms, in the optimizer's
// unconstrained coordinates: par1 carries d/d mean (Gaussian) or
// d/d log shape (gamma); par2 carries d/d log std or d/d log mean.
// Gamma shape additionally receives the score correction weighted by
// (f - score_baseline); any constant baseline keeps the estimator unbiased.
struct NuGradient {
  std::vector<double> par1;
  std::vector<double> par2;
};
NuGradient gradient_estimate(const VariationalState& v, const LatentState& state,
                             const NoiseDraw& noise, const FValue& f,
                             double score_baseline = 0.0);

double log_prior(const LatentState& state, const ModelConfig& cfg);
double log_q(const VariationalState& v, const LatentState& state);

// Monitoring metric: mean per-choice full one-vs-each bound along the
// recorded order, at the current posterior means.
double bounded_per_item_loglik(const LatentState& state, const ModelConfig& cfg,
                               const Catalog& catalog,
                               std::span<const Trip> trips);

struct TraceRow {
  int iteration = 0;
  double objective = 0.0;
  double validation = 0.0;  // NaN until the first check
  double seconds = 0.0;
};

struct FitResult {
  VariationalState state;
  std::vector<TraceRow> trace;
  double final_validation = 0.0;
  int iterations_run = 0;
  bool converged = false;
};

// Stochastic ascent with per-coordinate adaptive step sizes, positivity kept
// through log-space updates with a hard floor, and early stopping on the
// validation bound.
FitResult fit(const Catalog& catalog, const std::vector<Trip>& train,
              const std::vector<Trip>& validation, const ModelConfig& cfg,
              const OptimizerConfig& opt);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace,
                     const std::string& header_comment);

}  // namespace baskets
