#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "baskets/catalog.hpp"
#include "baskets/checkpoint.hpp"
#include "baskets/errors.hpp"
#include "baskets/metrics.hpp"
#include "baskets/model.hpp"
#include "baskets/runconfig.hpp"
#include "baskets/simulator.hpp"
#include "baskets/variational.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace baskets;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitOptimization = 3;
constexpr int kExitCompatibility = 4;

std::string hex64(std::uint64_t x) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string stamp(std::uint64_t config_hash, std::uint64_t seed) {
  return "config_hash=" + hex64(config_hash) + " seed=" + std::to_string(seed);
}

int run_simulate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t* seed_override) {
  RunConfig config = load_run_config(config_path);
  if (seed_override) config.simulate.rng_seed = *seed_override;
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  const Dataset train = generate_world(config.simulate);
  const Dataset test = generate_intervention_test(config.simulate);

  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  write_dataset(train.catalog, train.trips, path("train_trips.csv"),
                path("train_prices.csv"));
  write_dataset(test.catalog, test.trips, path("test_trips.csv"),
                path("test_prices.csv"));

  json manifest{
      {"seed", config.simulate.rng_seed},
      {"config_hash", hex64(config.hash())},
      {"train_trips", train.trips.size()},
      {"test_trips", test.trips.size()},
      {"items", train.catalog.n_items()},
      {"users", train.catalog.n_users()},
      {"catalog_hash", hex64(train.catalog.hash())},
      {"files", json::array({"train_trips.csv", "train_prices.csv", "test_trips.csv",
                             "test_prices.csv"})},
  };
  std::ofstream mf(path("manifest.json"));
  if (!mf || !(mf << manifest.dump(2) << "\n").flush())
    throw DataError("cannot write manifest.json under " + out_dir);

  std::cout << "simulated " << train.trips.size() << " training trips and "
            << test.trips.size() << " intervention test trips into " << out_dir
            << "\n";
  return kExitOk;
}

int run_fit(const std::string& config_path, const std::string& data_dir,
            const std::string& checkpoint_path, std::uint64_t* seed_override,
            int* threads_override, int* max_iter_override) {
  RunConfig config = load_run_config(config_path);
  if (seed_override) config.optimizer.rng_seed = *seed_override;
  if (threads_override) config.optimizer.threads = *threads_override;
  if (max_iter_override) config.optimizer.max_iterations = *max_iter_override;

  const auto trips_path = (fs::path(data_dir) / "train_trips.csv").string();
  const auto prices_path = (fs::path(data_dir) / "train_prices.csv").string();
  const Dataset data = load_dataset(trips_path, prices_path);
  const DatasetSplit split = split_dataset(data.trips, config.optimizer.rng_seed);

  std::cout << "loaded " << data.trips.size() << " trips (" << split.train.size()
            << " train / " << split.validation.size() << " validation / "
            << split.test.size() << " chronological test), "
            << data.catalog.n_items() << " items, " << data.catalog.n_users()
            << " users\n";

  const FitResult result =
      fit(data.catalog, split.train, split.validation, config.model, config.optimizer);

  Checkpoint ckpt;
  ckpt.config = config.model;
  ckpt.catalog = data.catalog;
  ckpt.catalog.week_prices.clear();
  ckpt.catalog.week_row.clear();
  ckpt.catalog.month_mean_price.clear();
  ckpt.state = result.state;
  ckpt.catalog_hash = data.catalog.hash();
  ckpt.config_hash = config.hash();
  ckpt.seed = config.optimizer.rng_seed;
  save_checkpoint(checkpoint_path, ckpt);
  write_trace_csv(checkpoint_path + ".trace.csv", result.trace,
                  stamp(config.hash(), config.optimizer.rng_seed));

  std::cout << "fit " << (result.converged ? "converged" : "stopped") << " after "
            << result.iterations_run << " iterations; final validation objective "
            << "(per-item bound) = " << result.final_validation << "\n"
            << "checkpoint written to " << checkpoint_path << "\n";
  return kExitOk;
}

struct EvalColumn {
  std::string label;
  ScoreStats stats;
};

void print_table(const std::string& title, const std::vector<EvalColumn>& columns) {
  std::cout << title << "\n";
  std::printf("  %-16s %10s %12s %14s\n", "column", "count", "mean", "bootstrap_std");
  for (const auto& col : columns) {
    std::printf("  %-16s %10zu %12.4f %14.4f\n", col.label.c_str(), col.stats.count,
                col.stats.mean, col.stats.bootstrap_std);
    if (col.stats.count == 0)
      std::printf("  %-16s            (empty set; mean undefined)\n", "");
  }
}

int run_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::vector<double>& skew_percents,
             const std::vector<std::string>& modes, const std::string& out_dir,
             std::uint64_t seed) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const auto trips_path = (fs::path(data_dir) / "test_trips.csv").string();
  const auto prices_path = (fs::path(data_dir) / "test_prices.csv").string();
  const Dataset data = load_dataset_with_catalog(trips_path, prices_path, ckpt.catalog);
  if (data.catalog.hash() != ckpt.catalog_hash)
    throw CompatibilityError("catalog hash mismatch between checkpoint and test data");

  const PosteriorSummary summary = summarize(ckpt.state, ckpt.config);

  std::vector<EvalColumn> columns;
  const std::vector<EvalPair> all_pairs = all_eval_pairs(data.catalog, data.trips);
  columns.push_back({"all", heldout_conditional_loglik(summary, data.catalog,
                                                       data.trips, all_pairs, seed)});
  if (!skew_percents.empty()) {
    std::vector<double> thresholds;
    for (double p : skew_percents) thresholds.push_back(p / 100.0);
    const auto sets = build_skewed_test_sets(data.catalog, data.trips, thresholds);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      char label[32];
      std::snprintf(label, sizeof(label), "price_%g%%", skew_percents[i]);
      columns.push_back({label, heldout_conditional_loglik(summary, data.catalog,
                                                           data.trips, sets[i], seed)});
    }
  }

  std::vector<EvalColumn> basket_columns;
  for (const std::string& mode : modes) {
    if (mode == "triplets")
      basket_columns.push_back(
          {"triplets", heldout_basket_loglik(summary, data.catalog, data.trips,
                                             BasketScoreMode::kTriplets, seed)});
    else if (mode == "basket")
      basket_columns.push_back(
          {"whole_basket", heldout_basket_loglik(summary, data.catalog, data.trips,
                                                 BasketScoreMode::kWholeBasket, seed)});
    else if (mode == "trip")
      basket_columns.push_back(
          {"per_trip", heldout_trip_loglik(summary, data.catalog, data.trips, seed)});
    else
      throw DomainError("unknown eval mode '" + mode + "' (use triplets|basket|trip)");
  }

  print_table("held-out conditional log-likelihood per item", columns);
  if (!basket_columns.empty())
    print_table("held-out sequential log-likelihood", basket_columns);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const auto csv_path = (fs::path(out_dir) / "eval_results.csv").string();
  std::ofstream out(csv_path);
  if (!out) throw DataError("cannot write " + csv_path);
  out << "# " << stamp(ckpt.config_hash, seed) << "\n";
  out << "metric,column,count,mean,bootstrap_std,skipped\n";
  out.precision(10);
  for (const auto& col : columns)
    out << "conditional," << col.label << ',' << col.stats.count << ','
        << col.stats.mean << ',' << col.stats.bootstrap_std << ','
        << col.stats.skipped << "\n";
  for (const auto& col : basket_columns)
    out << "sequential," << col.label << ',' << col.stats.count << ','
        << col.stats.mean << ',' << col.stats.bootstrap_std << ','
        << col.stats.skipped << "\n";
  if (!out.flush()) throw DataError("failed writing " + csv_path);
  std::cout << "results written to " << csv_path << "\n";
  return kExitOk;
}

int run_metrics(const std::string& checkpoint_path, const std::string& items_arg,
                int all_pairs_top, int top_n, const std::string& out_dir,
                std::uint64_t seed) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Catalog& catalog = ckpt.catalog;
  const PosteriorSummary summary = summarize(ckpt.state, ckpt.config);

  std::vector<std::uint32_t> queries;
  if (all_pairs_top > 0) {
    for (std::uint32_t c = 0; c < catalog.n_items(); ++c)
      if (c != catalog.checkout) queries.push_back(c);
    top_n = all_pairs_top;
  } else {
    std::string rest = items_arg;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string id = rest.substr(0, comma);
      rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
      if (id.empty()) continue;
      const auto idx = catalog.find_item(id);
      if (!idx || *idx == catalog.checkout) {
        std::cerr << "error: unknown item '" << id << "'";
        std::vector<std::string> near;
        for (const auto& cand : catalog.item_ids)
          if (cand.find(id) != std::string::npos && cand != "<checkout>")
            near.push_back(cand);
        if (!near.empty()) {
          std::cerr << "; close matches:";
          for (std::size_t i = 0; i < near.size() && i < 5; ++i)
            std::cerr << ' ' << near[i];
        }
        std::cerr << "\n";
        return kExitInput;
      }
      queries.push_back(*idx);
    }
    if (queries.empty()) {
      std::cerr << "error: no query items given (use --items or --all-pairs-top)\n";
      return kExitInput;
    }
  }

  struct Scored {
    std::uint32_t item;
    double score;
  };
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const auto comp_path = (fs::path(out_dir) / "metrics_complementarity.csv").string();
  const auto exch_path = (fs::path(out_dir) / "metrics_exchangeability.csv").string();
  std::ofstream comp_csv(comp_path), exch_csv(exch_path);
  if (!comp_csv || !exch_csv) throw DataError("cannot write metrics CSVs under " + out_dir);
  comp_csv << "# " << stamp(ckpt.config_hash, seed) << "\npair,complementarity\n";
  exch_csv << "# " << stamp(ckpt.config_hash, seed) << "\npair,exchangeability\n";
  comp_csv.precision(10);
  exch_csv.precision(10);

  for (std::uint32_t q : queries) {
    std::vector<Scored> comp, exch;
    for (std::uint32_t c = 0; c < catalog.n_items(); ++c) {
      if (c == q || c == catalog.checkout) continue;
      comp.push_back({c, complementarity(summary, catalog, q, c)});
      exch.push_back({c, exchangeability(summary, catalog, q, c)});
    }
    std::stable_sort(comp.begin(), comp.end(),
                     [](const Scored& x, const Scored& y) { return x.score > y.score; });
    std::stable_sort(exch.begin(), exch.end(),
                     [](const Scored& x, const Scored& y) { return x.score < y.score; });
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(top_n),
                                                comp.size());
    std::cout << catalog.item_ids[q] << "\n";
    for (std::size_t i = 0; i < n; ++i) {
      std::printf("  complement   %-24s %8.3f | exchangeable %-24s %8.4f\n",
                  catalog.item_ids[comp[i].item].c_str(), comp[i].score,
                  catalog.item_ids[exch[i].item].c_str(), exch[i].score);
      comp_csv << catalog.item_ids[q] << ':' << catalog.item_ids[comp[i].item] << ','
               << comp[i].score << "\n";
      exch_csv << catalog.item_ids[q] << ':' << catalog.item_ids[exch[i].item] << ','
               << exch[i].score << "\n";
    }
  }
  std::cout << "attribute/interaction symmetry gap: "
            << symmetry_gap(summary.point, catalog.checkout) << "\n";
  if (!comp_csv.flush() || !exch_csv.flush())
    throw DataError("failed writing metrics CSVs under " + out_dir);
  std::cout << "metrics written to " << comp_path << " and " << exch_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential market-basket choice model: simulate, fit, evaluate"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir = ".", checkpoint_path, items_arg;
  std::vector<double> skew_percents;
  std::vector<std::string> modes;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0, max_iterations = 0, all_pairs_top = 0, top_n = 3;

  auto* simulate = app.add_subcommand("simulate", "generate the toy world CSVs");
  simulate->add_option("--config", config_path, "run configuration file")->required();
  simulate->add_option("--out", out_dir, "output directory")->required();
  simulate->add_option("--seed", seed, "override [simulate] rng_seed")
      ->each([&](const std::string&) { seed_given = true; });

  auto* fit_cmd = app.add_subcommand("fit", "fit the model to a dataset");
  fit_cmd->add_option("--config", config_path, "run configuration file")->required();
  fit_cmd->add_option("--data-dir", data_dir, "directory with train_*.csv")->required();
  fit_cmd->add_option("--checkpoint", checkpoint_path, "output checkpoint path")
      ->required();
  fit_cmd->add_option("--seed", seed, "override [optimizer] rng_seed")
      ->each([&](const std::string&) { seed_given = true; });
  fit_cmd->add_option("--threads", threads, "worker threads for the engine");
  fit_cmd->add_option("--max-iterations", max_iterations, "iteration cap override");

  auto* eval_cmd = app.add_subcommand("eval", "held-out evaluation tables");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "fitted checkpoint")->required();
  eval_cmd->add_option("--data-dir", data_dir, "directory with test_*.csv")->required();
  eval_cmd->add_option("--skew", skew_percents,
                       "price deviation thresholds in percent, e.g. 2.5,5,15")
      ->delimiter(',');
  eval_cmd->add_option("--mode", modes, "extra tables: triplets, basket, trip");
  eval_cmd->add_option("--out", out_dir, "output directory for CSV results");
  eval_cmd->add_option("--seed", seed, "bootstrap seed");

  auto* metrics_cmd = app.add_subcommand("metrics", "complementarity and exchangeability");
  metrics_cmd->add_option("--checkpoint", checkpoint_path, "fitted checkpoint")
      ->required();
  metrics_cmd->add_option("--items", items_arg, "comma-separated query item ids");
  metrics_cmd->add_option("--all-pairs-top", all_pairs_top,
                          "rank the top N partners for every item");
  metrics_cmd->add_option("--top", top_n, "partners per query (default 3)");
  metrics_cmd->add_option("--out", out_dir, "output directory for CSV results");
  metrics_cmd->add_option("--seed", seed, "stamped into output headers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed())
      return run_simulate(config_path, out_dir, seed_given ? &seed : nullptr);
    if (fit_cmd->parsed())
      return run_fit(config_path, data_dir, checkpoint_path,
                     seed_given ? &seed : nullptr, threads > 0 ? &threads : nullptr,
                     max_iterations > 0 ? &max_iterations : nullptr);
    if (eval_cmd->parsed())
      return run_eval(checkpoint_path, data_dir, skew_percents, modes, out_dir, seed);
    if (metrics_cmd->parsed())
      return run_metrics(checkpoint_path, items_arg, all_pairs_top, top_n, out_dir,
                         seed);
  } catch (const OptimizationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOptimization;
  } catch (const CompatibilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompatibility;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}
