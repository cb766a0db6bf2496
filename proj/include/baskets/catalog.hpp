#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace baskets {

// Calendar week in 1..52 derived from the chronological week counter.
inline int calendar_week(int abs_week) { return (abs_week - 1) % 52 + 1; }

// Four-week month blocks used for per-month average prices.
inline int month_block(int abs_week) { return (abs_week - 1) / 4 + 1; }

// One shopping event. `items` is in recorded order and always ends with the
// checkout index; `price_row` points into Catalog::week_prices.
struct Trip {
  std::int64_t trip_id = 0;
  std::uint32_t user = 0;
  int week = 1;  // calendar week, 1..52
  int absolute_week = 0;
  std::int32_t price_row = -1;
  std::vector<std::uint32_t> items;

  std::size_t n_purchases() const { return items.empty() ? 0 : items.size() - 1; }
};

// Immutable registries plus the week-by-item price table. Item and user
// indices are dense and assigned in sorted id order, so the same set of ids
// always produces the same indexing; checkout is appended last.
struct Catalog {
  std::vector<std::string> item_ids;  // checkout last
  std::vector<std::string> user_ids;
  std::unordered_map<std::string, std::uint32_t> item_index;
  std::unordered_map<std::string, std::uint32_t> user_index;
  std::uint32_t checkout = 0;

  std::vector<double> mean_price;  // per item; 0 when never priced (checkout)
  std::map<int, std::vector<double>> month_mean_price;  // month block -> per item
  std::vector<std::vector<double>> week_prices;         // price row -> per item, 0 = not offered
  std::unordered_map<int, std::int32_t> week_row;       // absolute week -> price row
  int min_abs_week = 0;
  int max_abs_week = 0;

  std::size_t n_items() const { return item_ids.size(); }
  std::size_t n_users() const { return user_ids.size(); }

  double price(const Trip& t, std::uint32_t item) const {
    if (t.price_row < 0) return 0.0;
    return week_prices[static_cast<std::size_t>(t.price_row)][item];
  }
  // checkout is always available; other items only when priced that week
  bool offered(const Trip& t, std::uint32_t item) const {
    return item == checkout || price(t, item) > 0.0;
  }
  std::optional<std::uint32_t> find_item(const std::string& id) const {
    auto it = item_index.find(id);
    if (it == item_index.end()) return std::nullopt;
    return it->second;
  }

  // FNV-1a over the identity maps (item ids in index order, then user ids).
  // Prices are deliberately excluded: a checkpoint stays compatible with
  // test data that shares the registries but carries different prices.
  std::uint64_t hash() const;
};

struct Dataset {
  Catalog catalog;
  std::vector<Trip> trips;
};

// Parses the trips and prices CSV files (formats documented in README.md),
// appends checkout to every basket, and computes per-item mean and per-month
// mean prices over the file's observations.
Dataset load_dataset(const std::string& trips_path, const std::string& prices_path);

// Same parse, but against an existing catalog: registries, indices, and the
// reference's mean_price are reused (so normalized prices keep their training
// baseline); the price table and per-month means come from the given files.
// Unknown item or user ids raise CompatibilityError.
Dataset load_dataset_with_catalog(const std::string& trips_path,
                                  const std::string& prices_path,
                                  const Catalog& reference);

// Inverse of load_dataset, same CSV formats. Checkout rows are not written.
void write_dataset(const Catalog& catalog, const std::vector<Trip>& trips,
                   const std::string& trips_path, const std::string& prices_path);

// log of trip price over the item's mean price; zero at the mean.
double normalized_log_price(const Catalog& catalog, const Trip& trip,
                            std::uint32_t item);

struct DatasetSplit {
  std::vector<Trip> train;
  std::vector<Trip> validation;
  std::vector<Trip> test;
};

// Chronological test split (final 8 absolute weeks) plus a seeded random 5%
// of the remaining trips as validation. Requires at least 9 distinct weeks.
DatasetSplit split_dataset(const std::vector<Trip>& trips, std::uint64_t seed);

// (index into the scored trip vector, target item)
using EvalPair = std::pair<std::size_t, std::uint32_t>;

// All (trip, purchased item) pairs of `test_trips`.
std::vector<EvalPair> all_eval_pairs(const Catalog& catalog,
                                     const std::vector<Trip>& test_trips);

// For each threshold x, the (trip, item) pairs whose trip price deviates from
// the item's per-month mean price by more than x (fractional). Sets are
// nested: a larger threshold selects a subset of a smaller one.
std::vector<std::vector<EvalPair>> build_skewed_test_sets(
    const Catalog& catalog, const std::vector<Trip>& test_trips,
    const std::vector<double>& thresholds);

}  // namespace baskets
