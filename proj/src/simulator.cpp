#include "baskets/simulator.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "baskets/errors.hpp"
#include "baskets/rng.hpp"

namespace baskets {

namespace {

struct World {
  Catalog catalog;
  std::uint32_t coffee, diapers, ramen, candy;
  std::uint32_t hot_dogs, hot_dog_buns, taco_shells, taco_seasoning;
  std::array<std::array<std::uint32_t, 2>, 2> pairs;
  std::array<std::array<std::uint32_t, 2>, 2> preferred;  // per segment
};

std::string padded(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%02d", prefix, i);
  return buf;
}

World make_world(const ToyWorldConfig& cfg) {
  World w;
  Catalog& cat = w.catalog;
  cat.item_ids = {toy::kCoffee,  toy::kDiapers,    toy::kRamen,      toy::kCandy,
                  toy::kHotDogs, toy::kHotDogBuns, toy::kTacoShells, toy::kTacoSeasoning};
  std::sort(cat.item_ids.begin(), cat.item_ids.end());
  cat.item_ids.push_back("<checkout>");
  cat.checkout = static_cast<std::uint32_t>(cat.item_ids.size() - 1);
  for (std::uint32_t i = 0; i < cat.item_ids.size(); ++i)
    cat.item_index.emplace(cat.item_ids[i], i);

  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < cfg.n_customers_per_segment; ++i)
      cat.user_ids.push_back(padded(s == 0 ? "parent" : "student", i));
  std::sort(cat.user_ids.begin(), cat.user_ids.end());
  for (std::uint32_t u = 0; u < cat.user_ids.size(); ++u)
    cat.user_index.emplace(cat.user_ids[u], u);

  w.coffee = cat.item_index.at(toy::kCoffee);
  w.diapers = cat.item_index.at(toy::kDiapers);
  w.ramen = cat.item_index.at(toy::kRamen);
  w.candy = cat.item_index.at(toy::kCandy);
  w.hot_dogs = cat.item_index.at(toy::kHotDogs);
  w.hot_dog_buns = cat.item_index.at(toy::kHotDogBuns);
  w.taco_shells = cat.item_index.at(toy::kTacoShells);
  w.taco_seasoning = cat.item_index.at(toy::kTacoSeasoning);
  w.pairs = {{{w.hot_dogs, w.hot_dog_buns}, {w.taco_shells, w.taco_seasoning}}};
  w.preferred = {{{w.coffee, w.diapers}, {w.ramen, w.candy}}};
  return w;
}

bool is_parent(const Catalog& cat, std::uint32_t user) {
  return cat.user_ids[user].rfind("parent", 0) == 0;
}

Dataset generate(const ToyWorldConfig& cfg, int trips_per_customer,
                 double p_markup_pref, double p_markup_pair, int abs_week_offset,
                 std::uint64_t stream) {
  World w = make_world(cfg);
  Catalog& cat = w.catalog;
  const std::size_t n_items = cat.n_items();

  Rng rng = Rng(cfg.rng_seed).stream(stream);
  std::vector<Trip> trips;
  trips.reserve(cat.n_users() * static_cast<std::size_t>(trips_per_customer));

  const std::array<std::uint32_t, 4> pair_items = {w.hot_dogs, w.hot_dog_buns,
                                                   w.taco_shells, w.taco_seasoning};
  int abs_week = abs_week_offset;
  for (std::uint32_t u = 0; u < cat.n_users(); ++u) {
    const int segment = is_parent(cat, u) ? 0 : 1;
    for (int k = 0; k < trips_per_customer; ++k) {
      ++abs_week;
      std::vector<double> prices(n_items, 0.0);
      for (std::uint32_t c = 0; c < n_items; ++c)
        if (c != cat.checkout) prices[c] = cfg.low_price;
      for (std::uint32_t c : {w.coffee, w.diapers, w.ramen, w.candy})
        if (rng.uniform() < p_markup_pref) prices[c] = cfg.high_price;
      std::int32_t marked_pair_item = -1;
      if (rng.uniform() < p_markup_pair) {
        const std::uint32_t pick = pair_items[rng.below(pair_items.size())];
        prices[pick] = cfg.high_price;
        marked_pair_item = static_cast<std::int32_t>(pick);
      }

      std::vector<std::uint32_t> bought;
      for (std::uint32_t c : w.preferred[static_cast<std::size_t>(segment)]) {
        const double p = prices[c] > cfg.low_price ? cfg.p_buy_preferred_high
                                                   : cfg.p_buy_preferred_low;
        if (rng.uniform() < p) bought.push_back(c);
      }

      int chosen_pair;
      if (marked_pair_item < 0) {
        chosen_pair = rng.uniform() < cfg.p_pair_balanced ? 0 : 1;
      } else {
        const int expensive =
            (static_cast<std::uint32_t>(marked_pair_item) == w.hot_dogs ||
             static_cast<std::uint32_t>(marked_pair_item) == w.hot_dog_buns)
                ? 0
                : 1;
        chosen_pair = rng.uniform() < cfg.p_pair_cheap ? 1 - expensive : expensive;
      }
      bought.push_back(w.pairs[static_cast<std::size_t>(chosen_pair)][0]);
      bought.push_back(w.pairs[static_cast<std::size_t>(chosen_pair)][1]);

      rng.shuffle(bought);
      bought.push_back(cat.checkout);

      Trip t;
      t.trip_id = abs_week;  // one trip per absolute week
      t.user = u;
      t.absolute_week = abs_week;
      t.week = calendar_week(abs_week);
      t.price_row = static_cast<std::int32_t>(cat.week_prices.size());
      t.items = std::move(bought);
      cat.week_row.emplace(abs_week, t.price_row);
      cat.week_prices.push_back(std::move(prices));
      trips.push_back(std::move(t));
    }
  }

  cat.min_abs_week = abs_week_offset + 1;
  cat.max_abs_week = abs_week;

  cat.mean_price.assign(n_items, 0.0);
  std::vector<int> count(n_items, 0);
  for (const auto& row : cat.week_prices)
    for (std::size_t c = 0; c < n_items; ++c)
      if (row[c] > 0.0) {
        cat.mean_price[c] += row[c];
        ++count[c];
      }
  for (std::size_t c = 0; c < n_items; ++c)
    if (count[c] > 0) cat.mean_price[c] /= count[c];

  std::map<int, std::vector<int>> month_counts;
  for (const auto& [week, row_idx] : cat.week_row) {
    const int m = month_block(week);
    auto& mean =
        cat.month_mean_price.try_emplace(m, std::vector<double>(n_items, 0.0))
            .first->second;
    auto& cnt = month_counts.try_emplace(m, std::vector<int>(n_items, 0)).first->second;
    const auto& row = cat.week_prices[static_cast<std::size_t>(row_idx)];
    for (std::size_t c = 0; c < n_items; ++c)
      if (row[c] > 0.0) {
        mean[c] += row[c];
        ++cnt[c];
      }
  }
  for (auto& [m, mean] : cat.month_mean_price) {
    const auto& cnt = month_counts.at(m);
    for (std::size_t c = 0; c < n_items; ++c)
      if (cnt[c] > 0) mean[c] /= cnt[c];
  }

  return Dataset{std::move(cat), std::move(trips)};
}

}  // namespace

void ToyWorldConfig::validate() const {
  if (n_customers_per_segment < 1 || n_trips_per_customer < 1 ||
      n_test_trips_per_customer < 1)
    throw DomainError("toy world sizes must be >= 1");
  for (double p : {p_markup_preference, p_markup_pair,
                   p_markup_preference_intervention, p_markup_pair_intervention,
                   p_buy_preferred_low, p_buy_preferred_high, p_pair_balanced,
                   p_pair_cheap, p_pair_expensive})
    if (p < 0.0 || p > 1.0) throw DomainError("toy world probabilities must be in [0, 1]");
  if (low_price <= 0.0 || high_price <= low_price)
    throw DomainError("toy world prices must satisfy 0 < low < high");
}

Dataset generate_world(const ToyWorldConfig& cfg) {
  cfg.validate();
  return generate(cfg, cfg.n_trips_per_customer, cfg.p_markup_preference,
                  cfg.p_markup_pair, 0, /*stream=*/11);
}

Dataset generate_intervention_test(const ToyWorldConfig& cfg) {
  cfg.validate();
  const int train_total = 2 * cfg.n_customers_per_segment * cfg.n_trips_per_customer;
  return generate(cfg, cfg.n_test_trips_per_customer,
                  cfg.p_markup_preference_intervention, cfg.p_markup_pair_intervention,
                  train_total, /*stream=*/12);
}

}  // namespace baskets
