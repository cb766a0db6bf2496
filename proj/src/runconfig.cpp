#include "baskets/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "baskets/errors.hpp"

namespace baskets {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Setter {
  std::function<void(const std::string&)> apply;
};

void expect_bool(const std::string& v, bool& out, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes")
    out = true;
  else if (v == "false" || v == "0" || v == "no")
    out = false;
  else
    throw ParseError(where + ": expected a boolean, got '" + v + "'");
}

void expect_int(const std::string& v, int& out, const std::string& where) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw ParseError(where + ": expected an integer, got '" + v + "'");
  out = static_cast<int>(x);
}

void expect_u64(const std::string& v, std::uint64_t& out, const std::string& where) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw ParseError(where + ": expected an unsigned integer, got '" + v + "'");
  out = x;
}

void expect_real(const std::string& v, double& out, const std::string& where) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    throw ParseError(where + ": expected a number, got '" + v + "'");
  out = x;
}

std::map<std::string, std::map<std::string, Setter>> build_schema(RunConfig& c) {
  std::map<std::string, std::map<std::string, Setter>> schema;
  auto add = [&schema](const std::string& section, const std::string& key,
                       std::function<void(const std::string&, const std::string&)> f) {
    const std::string where = section + "." + key;
    schema[section][key] = Setter{[f, where](const std::string& v) { f(v, where); }};
  };

  auto& m = c.model;
  add("model", "k_items", [&m](const std::string& v, const std::string& w) { expect_int(v, m.k_items, w); });
  add("model", "k_price", [&m](const std::string& v, const std::string& w) { expect_int(v, m.k_price, w); });
  add("model", "k_season", [&m](const std::string& v, const std::string& w) { expect_int(v, m.k_season, w); });
  add("model", "use_preferences", [&m](const std::string& v, const std::string& w) { expect_bool(v, m.use_preferences, w); });
  add("model", "use_price", [&m](const std::string& v, const std::string& w) { expect_bool(v, m.use_price, w); });
  add("model", "use_season", [&m](const std::string& v, const std::string& w) { expect_bool(v, m.use_season, w); });
  add("model", "think_ahead", [&m](const std::string& v, const std::string& w) { expect_bool(v, m.think_ahead, w); });
  add("model", "prior_std", [&m](const std::string& v, const std::string& w) { expect_real(v, m.prior_std, w); });
  add("model", "prior_std_season", [&m](const std::string& v, const std::string& w) { expect_real(v, m.prior_std_season, w); });
  add("model", "gamma_prior_shape", [&m](const std::string& v, const std::string& w) { expect_real(v, m.gamma_prior_shape, w); });
  add("model", "gamma_prior_rate", [&m](const std::string& v, const std::string& w) { expect_real(v, m.gamma_prior_rate, w); });
  add("model", "exact_permutation_cap", [&m](const std::string& v, const std::string& w) { expect_int(v, m.exact_permutation_cap, w); });
  add("model", "think_ahead_top_m", [&m](const std::string& v, const std::string& w) { expect_int(v, m.think_ahead_top_m, w); });

  auto& o = c.optimizer;
  add("optimizer", "batch_trips", [&o](const std::string& v, const std::string& w) { expect_int(v, o.batch_trips, w); });
  add("optimizer", "batch_negatives", [&o](const std::string& v, const std::string& w) { expect_int(v, o.batch_negatives, w); });
  add("optimizer", "permutations_per_trip", [&o](const std::string& v, const std::string& w) { expect_int(v, o.permutations_per_trip, w); });
  add("optimizer", "step_base", [&o](const std::string& v, const std::string& w) { expect_real(v, o.step_base, w); });
  add("optimizer", "step_decay_exponent", [&o](const std::string& v, const std::string& w) { expect_real(v, o.step_decay_exponent, w); });
  add("optimizer", "step_stabilizer", [&o](const std::string& v, const std::string& w) { expect_real(v, o.step_stabilizer, w); });
  add("optimizer", "step_memory", [&o](const std::string& v, const std::string& w) { expect_real(v, o.step_memory, w); });
  add("optimizer", "max_iterations", [&o](const std::string& v, const std::string& w) { expect_int(v, o.max_iterations, w); });
  add("optimizer", "eval_every", [&o](const std::string& v, const std::string& w) { expect_int(v, o.eval_every, w); });
  add("optimizer", "convergence_checks", [&o](const std::string& v, const std::string& w) { expect_int(v, o.convergence_checks, w); });
  add("optimizer", "validation_subsample", [&o](const std::string& v, const std::string& w) { expect_int(v, o.validation_subsample, w); });
  add("optimizer", "rng_seed", [&o](const std::string& v, const std::string& w) { expect_u64(v, o.rng_seed, w); });
  add("optimizer", "threads", [&o](const std::string& v, const std::string& w) { expect_int(v, o.threads, w); });

  auto& s = c.simulate;
  add("simulate", "n_customers_per_segment", [&s](const std::string& v, const std::string& w) { expect_int(v, s.n_customers_per_segment, w); });
  add("simulate", "n_trips_per_customer", [&s](const std::string& v, const std::string& w) { expect_int(v, s.n_trips_per_customer, w); });
  add("simulate", "n_test_trips_per_customer", [&s](const std::string& v, const std::string& w) { expect_int(v, s.n_test_trips_per_customer, w); });
  add("simulate", "p_markup_preference", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_markup_preference, w); });
  add("simulate", "p_markup_pair", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_markup_pair, w); });
  add("simulate", "p_markup_preference_intervention", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_markup_preference_intervention, w); });
  add("simulate", "p_markup_pair_intervention", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_markup_pair_intervention, w); });
  add("simulate", "p_buy_preferred_low", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_buy_preferred_low, w); });
  add("simulate", "p_buy_preferred_high", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_buy_preferred_high, w); });
  add("simulate", "p_pair_balanced", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_pair_balanced, w); });
  add("simulate", "p_pair_cheap", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_pair_cheap, w); });
  add("simulate", "p_pair_expensive", [&s](const std::string& v, const std::string& w) { expect_real(v, s.p_pair_expensive, w); });
  add("simulate", "low_price", [&s](const std::string& v, const std::string& w) { expect_real(v, s.low_price, w); });
  add("simulate", "high_price", [&s](const std::string& v, const std::string& w) { expect_real(v, s.high_price, w); });
  add("simulate", "rng_seed", [&s](const std::string& v, const std::string& w) { expect_u64(v, s.rng_seed, w); });

  auto& p = c.paths;
  add("paths", "data_dir", [&p](const std::string& v, const std::string&) { p.data_dir = v; });
  add("paths", "out_dir", [&p](const std::string& v, const std::string&) { p.out_dir = v; });
  add("paths", "checkpoint", [&p](const std::string& v, const std::string&) { p.checkpoint = v; });

  return schema;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);

  RunConfig config;
  auto schema = build_schema(config);

  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path + ":" + std::to_string(line_no);
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError(where + ": unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (!schema.count(section))
        throw ParseError(where + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (section.empty()) throw ParseError(where + ": key outside any section");
    auto& keys = schema.at(section);
    auto it = keys.find(key);
    if (it == keys.end())
      throw ParseError(where + ": unknown key '" + key + "' in section [" + section + "]");
    it->second.apply(value);
  }
  return config;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  out.precision(17);
  out << "[model]\n"
      << "k_items = " << model.k_items << "\n"
      << "k_price = " << model.k_price << "\n"
      << "k_season = " << model.k_season << "\n"
      << "use_preferences = " << (model.use_preferences ? "true" : "false") << "\n"
      << "use_price = " << (model.use_price ? "true" : "false") << "\n"
      << "use_season = " << (model.use_season ? "true" : "false") << "\n"
      << "think_ahead = " << (model.think_ahead ? "true" : "false") << "\n"
      << "prior_std = " << model.prior_std << "\n"
      << "prior_std_season = " << model.prior_std_season << "\n"
      << "gamma_prior_shape = " << model.gamma_prior_shape << "\n"
      << "gamma_prior_rate = " << model.gamma_prior_rate << "\n"
      << "exact_permutation_cap = " << model.exact_permutation_cap << "\n"
      << "think_ahead_top_m = " << model.think_ahead_top_m << "\n";
  out << "[optimizer]\n"
      << "batch_trips = " << optimizer.batch_trips << "\n"
      << "batch_negatives = " << optimizer.batch_negatives << "\n"
      << "permutations_per_trip = " << optimizer.permutations_per_trip << "\n"
      << "step_base = " << optimizer.step_base << "\n"
      << "step_decay_exponent = " << optimizer.step_decay_exponent << "\n"
      << "step_stabilizer = " << optimizer.step_stabilizer << "\n"
      << "step_memory = " << optimizer.step_memory << "\n"
      << "max_iterations = " << optimizer.max_iterations << "\n"
      << "eval_every = " << optimizer.eval_every << "\n"
      << "convergence_checks = " << optimizer.convergence_checks << "\n"
      << "validation_subsample = " << optimizer.validation_subsample << "\n"
      << "rng_seed = " << optimizer.rng_seed << "\n"
      << "threads = " << optimizer.threads << "\n";
  out << "[simulate]\n"
      << "n_customers_per_segment = " << simulate.n_customers_per_segment << "\n"
      << "n_trips_per_customer = " << simulate.n_trips_per_customer << "\n"
      << "n_test_trips_per_customer = " << simulate.n_test_trips_per_customer << "\n"
      << "p_markup_preference = " << simulate.p_markup_preference << "\n"
      << "p_markup_pair = " << simulate.p_markup_pair << "\n"
      << "p_markup_preference_intervention = " << simulate.p_markup_preference_intervention << "\n"
      << "p_markup_pair_intervention = " << simulate.p_markup_pair_intervention << "\n"
      << "p_buy_preferred_low = " << simulate.p_buy_preferred_low << "\n"
      << "p_buy_preferred_high = " << simulate.p_buy_preferred_high << "\n"
      << "p_pair_balanced = " << simulate.p_pair_balanced << "\n"
      << "p_pair_cheap = " << simulate.p_pair_cheap << "\n"
      << "p_pair_expensive = " << simulate.p_pair_expensive << "\n"
      << "low_price = " << simulate.low_price << "\n"
      << "high_price = " << simulate.high_price << "\n"
      << "rng_seed = " << simulate.rng_seed << "\n";
  out << "[paths]\n"
      << "data_dir = " << paths.data_dir << "\n"
      << "out_dir = " << paths.out_dir << "\n"
      << "checkpoint = " << paths.checkpoint << "\n";
  return out.str();
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace baskets
