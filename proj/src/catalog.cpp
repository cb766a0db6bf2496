#include "baskets/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "baskets/errors.hpp"
#include "baskets/rng.hpp"

namespace baskets {

namespace {

constexpr const char* kTripsHeader = "trip_id,user_id,abs_week,item_id";
constexpr const char* kPricesHeader = "abs_week,item_id,price";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

long long parse_int(const std::string& s, const std::string& file, int line_no) {
  if (s.empty()) throw ParseError(file + ":" + std::to_string(line_no) + ": empty integer field");
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size())
    throw ParseError(file + ":" + std::to_string(line_no) + ": bad integer '" + s + "'");
  return v;
}

double parse_real(const std::string& s, const std::string& file, int line_no) {
  if (s.empty()) throw ParseError(file + ":" + std::to_string(line_no) + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v))
    throw ParseError(file + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

struct TripRow {
  long long trip_id;
  std::string user_id;
  int abs_week;
  std::string item_id;
};

struct PriceRow {
  int abs_week;
  std::string item_id;
  double price;
};

std::vector<TripRow> read_trip_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trips file: " + path);
  std::string line;
  if (!std::getline(in, line) || split_fields(line) != split_fields(kTripsHeader))
    throw ParseError(path + ":1: expected header '" + kTripsHeader + "'");
  std::vector<TripRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 4)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                       std::to_string(f.size()));
    TripRow r;
    r.trip_id = parse_int(f[0], path, line_no);
    r.user_id = f[1];
    r.abs_week = static_cast<int>(parse_int(f[2], path, line_no));
    r.item_id = f[3];
    if (r.abs_week < 1)
      throw ParseError(path + ":" + std::to_string(line_no) + ": abs_week must be >= 1");
    if (r.user_id.empty() || r.item_id.empty())
      throw ParseError(path + ":" + std::to_string(line_no) + ": empty id field");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("empty dataset: no purchases in " + path);
  return rows;
}

std::vector<PriceRow> read_price_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prices file: " + path);
  std::string line;
  if (!std::getline(in, line) || split_fields(line) != split_fields(kPricesHeader))
    throw ParseError(path + ":1: expected header '" + kPricesHeader + "'");
  std::vector<PriceRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 3)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 3 fields, got " +
                       std::to_string(f.size()));
    PriceRow r;
    r.abs_week = static_cast<int>(parse_int(f[0], path, line_no));
    r.item_id = f[1];
    r.price = parse_real(f[2], path, line_no);
    if (r.abs_week < 1)
      throw ParseError(path + ":" + std::to_string(line_no) + ": abs_week must be >= 1");
    if (r.price <= 0.0)
      throw ParseError(path + ":" + std::to_string(line_no) + ": price must be positive");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("empty dataset: no prices in " + path);
  return rows;
}

// Shared tail of both load paths: builds the price table, per-item means,
// month means, and the trips themselves against fixed registries.
Dataset assemble(Catalog catalog, const std::vector<TripRow>& trip_rows,
                 const std::vector<PriceRow>& price_rows,
                 const std::string& trips_path, bool keep_reference_means) {
  const std::size_t n_items = catalog.n_items();

  catalog.week_prices.clear();
  catalog.week_row.clear();
  for (const auto& r : price_rows) {
    auto [it, inserted] = catalog.week_row.try_emplace(
        r.abs_week, static_cast<std::int32_t>(catalog.week_prices.size()));
    if (inserted) catalog.week_prices.emplace_back(n_items, 0.0);
    auto& row = catalog.week_prices[static_cast<std::size_t>(it->second)];
    const std::uint32_t item = catalog.item_index.at(r.item_id);
    if (row[item] > 0.0)
      throw DataError("duplicate price for item '" + r.item_id + "' in week " +
                      std::to_string(r.abs_week));
    row[item] = r.price;
  }

  if (!keep_reference_means) {
    catalog.mean_price.assign(n_items, 0.0);
    std::vector<int> count(n_items, 0);
    for (const auto& row : catalog.week_prices)
      for (std::size_t c = 0; c < n_items; ++c)
        if (row[c] > 0.0) {
          catalog.mean_price[c] += row[c];
          ++count[c];
        }
    for (std::size_t c = 0; c < n_items; ++c)
      if (count[c] > 0) catalog.mean_price[c] /= count[c];
  }

  catalog.month_mean_price.clear();
  {
    std::map<int, std::pair<std::vector<double>, std::vector<int>>> acc;
    for (const auto& [week, row_idx] : catalog.week_row) {
      const int m = month_block(week);
      auto& [sum, cnt] = acc
                             .try_emplace(m, std::vector<double>(n_items, 0.0),
                                          std::vector<int>(n_items, 0))
                             .first->second;
      const auto& row = catalog.week_prices[static_cast<std::size_t>(row_idx)];
      for (std::size_t c = 0; c < n_items; ++c)
        if (row[c] > 0.0) {
          sum[c] += row[c];
          ++cnt[c];
        }
    }
    for (auto& [m, sc] : acc) {
      auto& [sum, cnt] = sc;
      std::vector<double> mean(n_items, 0.0);
      for (std::size_t c = 0; c < n_items; ++c)
        if (cnt[c] > 0) mean[c] = sum[c] / cnt[c];
      catalog.month_mean_price.emplace(m, std::move(mean));
    }
  }

  // group purchase rows into trips, in order of first appearance
  std::vector<Trip> trips;
  std::unordered_map<long long, std::size_t> trip_of_id;
  for (const auto& r : trip_rows) {
    auto [it, inserted] = trip_of_id.try_emplace(r.trip_id, trips.size());
    if (inserted) {
      Trip t;
      t.trip_id = r.trip_id;
      t.user = catalog.user_index.at(r.user_id);
      t.absolute_week = r.abs_week;
      t.week = calendar_week(r.abs_week);
      auto w = catalog.week_row.find(r.abs_week);
      t.price_row = (w == catalog.week_row.end()) ? -1 : w->second;
      trips.push_back(std::move(t));
    }
    Trip& t = trips[it->second];
    if (catalog.user_index.at(r.user_id) != t.user || r.abs_week != t.absolute_week)
      throw DataError("trip " + std::to_string(r.trip_id) +
                      ": inconsistent user or week across rows in " + trips_path);
    const std::uint32_t item = catalog.item_index.at(r.item_id);
    if (std::find(t.items.begin(), t.items.end(), item) != t.items.end())
      throw DataError("trip " + std::to_string(r.trip_id) + ": item '" + r.item_id +
                      "' purchased twice");
    t.items.push_back(item);
  }

  catalog.min_abs_week = trips.front().absolute_week;
  catalog.max_abs_week = trips.front().absolute_week;
  for (auto& t : trips) {
    catalog.min_abs_week = std::min(catalog.min_abs_week, t.absolute_week);
    catalog.max_abs_week = std::max(catalog.max_abs_week, t.absolute_week);
    for (std::uint32_t item : t.items)
      if (!(t.price_row >= 0 &&
            catalog.week_prices[static_cast<std::size_t>(t.price_row)][item] > 0.0))
        throw DataError("trip " + std::to_string(t.trip_id) + ": purchased item '" +
                        catalog.item_ids[item] + "' has no price in week " +
                        std::to_string(t.absolute_week));
    t.items.push_back(catalog.checkout);
  }

  return Dataset{std::move(catalog), std::move(trips)};
}

}  // namespace

std::uint64_t Catalog::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  };
  for (const auto& id : item_ids) feed(id);
  feed("|users|");
  for (const auto& id : user_ids) feed(id);
  return h;
}

Dataset load_dataset(const std::string& trips_path, const std::string& prices_path) {
  const auto trip_rows = read_trip_rows(trips_path);
  const auto price_rows = read_price_rows(prices_path);

  std::set<std::string> items, users;
  for (const auto& r : trip_rows) {
    items.insert(r.item_id);
    users.insert(r.user_id);
  }
  for (const auto& r : price_rows) items.insert(r.item_id);

  Catalog catalog;
  catalog.item_ids.assign(items.begin(), items.end());
  catalog.item_ids.push_back("<checkout>");
  catalog.checkout = static_cast<std::uint32_t>(catalog.item_ids.size() - 1);
  catalog.user_ids.assign(users.begin(), users.end());
  for (std::uint32_t i = 0; i < catalog.item_ids.size(); ++i)
    catalog.item_index.emplace(catalog.item_ids[i], i);
  for (std::uint32_t u = 0; u < catalog.user_ids.size(); ++u)
    catalog.user_index.emplace(catalog.user_ids[u], u);
  if (catalog.item_index.size() != catalog.item_ids.size())
    throw DataError("reserved item id '<checkout>' appears in the input");

  return assemble(std::move(catalog), trip_rows, price_rows, trips_path,
                  /*keep_reference_means=*/false);
}

Dataset load_dataset_with_catalog(const std::string& trips_path,
                                  const std::string& prices_path,
                                  const Catalog& reference) {
  const auto trip_rows = read_trip_rows(trips_path);
  const auto price_rows = read_price_rows(prices_path);

  for (const auto& r : trip_rows) {
    if (!reference.item_index.count(r.item_id))
      throw CompatibilityError("item '" + r.item_id + "' not in the checkpoint catalog");
    if (!reference.user_index.count(r.user_id))
      throw CompatibilityError("user '" + r.user_id + "' not in the checkpoint catalog");
  }
  for (const auto& r : price_rows)
    if (!reference.item_index.count(r.item_id))
      throw CompatibilityError("item '" + r.item_id + "' not in the checkpoint catalog");

  Catalog catalog;
  catalog.item_ids = reference.item_ids;
  catalog.user_ids = reference.user_ids;
  catalog.item_index = reference.item_index;
  catalog.user_index = reference.user_index;
  catalog.checkout = reference.checkout;
  catalog.mean_price = reference.mean_price;

  return assemble(std::move(catalog), trip_rows, price_rows, trips_path,
                  /*keep_reference_means=*/true);
}

void write_dataset(const Catalog& catalog, const std::vector<Trip>& trips,
                   const std::string& trips_path, const std::string& prices_path) {
  std::ofstream tf(trips_path);
  if (!tf) throw DataError("cannot write trips file: " + trips_path);
  tf << kTripsHeader << "\n";
  for (const auto& t : trips)
    for (std::uint32_t item : t.items) {
      if (item == catalog.checkout) continue;
      tf << t.trip_id << ',' << catalog.user_ids[t.user] << ',' << t.absolute_week
         << ',' << catalog.item_ids[item] << "\n";
    }
  if (!tf.flush()) throw DataError("failed writing " + trips_path);

  std::ofstream pf(prices_path);
  if (!pf) throw DataError("cannot write prices file: " + prices_path);
  pf.precision(17);
  pf << kPricesHeader << "\n";
  std::vector<int> weeks;
  weeks.reserve(catalog.week_row.size());
  for (const auto& [w, row] : catalog.week_row) weeks.push_back(w);
  std::sort(weeks.begin(), weeks.end());
  for (int w : weeks) {
    const auto& row = catalog.week_prices[static_cast<std::size_t>(catalog.week_row.at(w))];
    for (std::size_t c = 0; c < row.size(); ++c)
      if (row[c] > 0.0)
        pf << w << ',' << catalog.item_ids[c] << ',' << row[c] << "\n";
  }
  if (!pf.flush()) throw DataError("failed writing " + prices_path);
}

double normalized_log_price(const Catalog& catalog, const Trip& trip,
                            std::uint32_t item) {
  const double r = catalog.price(trip, item);
  if (r <= 0.0)
    throw DomainError("item '" + catalog.item_ids[item] +
                      "' has no positive price in trip " + std::to_string(trip.trip_id));
  const double mean = catalog.mean_price[item];
  if (mean <= 0.0)
    throw DomainError("item '" + catalog.item_ids[item] + "' has no mean price");
  return std::log(r / mean);
}

DatasetSplit split_dataset(const std::vector<Trip>& trips, std::uint64_t seed) {
  if (trips.empty()) throw DataError("cannot split an empty trip list");
  std::set<int> weeks;
  for (const auto& t : trips) weeks.insert(t.absolute_week);
  if (weeks.size() < 9)
    throw SizeError("need at least 9 distinct absolute weeks to split, got " +
                    std::to_string(weeks.size()));
  const int cutoff = *weeks.rbegin() - 8;  // final 8 weeks ~ two months

  DatasetSplit split;
  std::vector<std::size_t> remaining;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    if (trips[i].absolute_week > cutoff)
      split.test.push_back(trips[i]);
    else
      remaining.push_back(i);
  }

  Rng rng(mix64(seed ^ 0x51171c0ffee00ULL));
  std::vector<std::size_t> order = remaining;
  rng.shuffle(order);
  const std::size_t n_val = order.size() / 20;  // 5%
  std::vector<bool> is_val(trips.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (std::size_t i : remaining)
    (is_val[i] ? split.validation : split.train).push_back(trips[i]);
  return split;
}

std::vector<EvalPair> all_eval_pairs(const Catalog& catalog,
                                     const std::vector<Trip>& test_trips) {
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < test_trips.size(); ++i)
    for (std::uint32_t item : test_trips[i].items)
      if (item != catalog.checkout) pairs.emplace_back(i, item);
  return pairs;
}

std::vector<std::vector<EvalPair>> build_skewed_test_sets(
    const Catalog& catalog, const std::vector<Trip>& test_trips,
    const std::vector<double>& thresholds) {
  for (double x : thresholds)
    if (x <= 0.0) throw DomainError("skew threshold must be positive");

  std::vector<std::vector<EvalPair>> sets(thresholds.size());
  for (std::size_t i = 0; i < test_trips.size(); ++i) {
    const Trip& t = test_trips[i];
    const auto month = catalog.month_mean_price.find(month_block(t.absolute_week));
    for (std::uint32_t item : t.items) {
      if (item == catalog.checkout) continue;
      if (month == catalog.month_mean_price.end()) continue;
      const double mean = month->second[item];
      if (mean <= 0.0) continue;
      const double deviation = std::abs(catalog.price(t, item) / mean - 1.0);
      for (std::size_t k = 0; k < thresholds.size(); ++k)
        if (deviation > thresholds[k]) sets[k].emplace_back(i, item);
    }
  }
  return sets;
}

}  // namespace baskets
