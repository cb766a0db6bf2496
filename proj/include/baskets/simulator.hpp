#pragma once

#include <cstdint>
#include <string>

#include "baskets/catalog.hpp"

namespace baskets {

// Eight-item world with two customer segments (new parents buy coffee and
// diapers, students buy ramen and candy) and two complementary pairs
// (hot dogs + buns, taco shells + seasoning). Every trip buys exactly one
// full pair; preference items are bought independently depending on price.
struct ToyWorldConfig {
  int n_customers_per_segment = 50;
  int n_trips_per_customer = 1000;
  int n_test_trips_per_customer = 30;

  double p_markup_preference = 0.4;  // per preference item, per trip
  double p_markup_pair = 0.6;        // one uniformly chosen pair item, per trip
  double p_markup_preference_intervention = 0.95;
  double p_markup_pair_intervention = 1.0;

  double p_buy_preferred_low = 0.95;
  double p_buy_preferred_high = 0.1;
  double p_pair_balanced = 0.5;   // first pair, when no pair item is marked up
  double p_pair_cheap = 0.85;     // the fully low-priced pair, otherwise
  double p_pair_expensive = 0.15;

  double low_price = 1.0;
  double high_price = 2.0;
  std::uint64_t rng_seed = 1234;

  void validate() const;
};

// Item ids used by the generated world.
namespace toy {
inline constexpr const char* kCoffee = "coffee";
inline constexpr const char* kDiapers = "diapers";
inline constexpr const char* kRamen = "ramen";
inline constexpr const char* kCandy = "candy";
inline constexpr const char* kHotDogs = "hot_dogs";
inline constexpr const char* kHotDogBuns = "hot_dog_buns";
inline constexpr const char* kTacoShells = "taco_shells";
inline constexpr const char* kTacoSeasoning = "taco_seasoning";
}  // namespace toy

// Training world: every trip gets its own absolute week, so the weekly price
// table carries per-trip prices; calendar weeks cycle 1..52.
Dataset generate_world(const ToyWorldConfig& cfg);

// Intervention test set (n_test_trips_per_customer trips per customer) with
// the intervention markup probabilities; absolute weeks continue after the
// training range. Shares the training catalog registries.
Dataset generate_intervention_test(const ToyWorldConfig& cfg);

}  // namespace baskets
