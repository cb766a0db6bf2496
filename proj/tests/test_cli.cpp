#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = BASKETS_CLI_PATH;

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() /
           ("baskets_cli_" + std::to_string(::getpid()));
    fs::create_directories(root);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  std::string dir(const std::string& name) const {
    fs::create_directories(root / name);
    return (root / name).string();
  }
  std::string file(const std::string& name) const { return (root / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_config(const std::string& path) {
  std::ofstream out(path);
  out << "[model]\n"
         "k_items = 4\n"
         "k_price = 2\n"
         "use_preferences = true\n"
         "use_price = true\n"
         "use_season = false\n"
         "think_ahead = false\n"
         "[optimizer]\n"
         "batch_trips = 20\n"
         "batch_negatives = 8\n"
         "max_iterations = 300\n"
         "eval_every = 100\n"
         "rng_seed = 7\n"
         "[simulate]\n"
         "n_customers_per_segment = 3\n"
         "n_trips_per_customer = 40\n"
         "n_test_trips_per_customer = 10\n"
         "rng_seed = 5\n";
}

}  // namespace

TEST_CASE("simulate, fit, eval, and metrics round-trip through the CLI") {
  Workspace ws;
  const std::string config = ws.file("run.ini");
  write_config(config);
  const std::string data = ws.dir("data");

  REQUIRE(run("simulate --config " + config + " --out " + data) == 0);
  for (const char* name : {"train_trips.csv", "train_prices.csv", "test_trips.csv",
                           "test_prices.csv", "manifest.json"})
    CHECK(fs::exists(fs::path(data) / name));

  SUBCASE("simulate is byte-deterministic under the same seed") {
    const std::string data2 = ws.dir("data2");
    REQUIRE(run("simulate --config " + config + " --out " + data2) == 0);
    for (const char* name : {"train_trips.csv", "train_prices.csv", "test_trips.csv",
                             "test_prices.csv"})
      CHECK(slurp((fs::path(data) / name).string()) ==
            slurp((fs::path(data2) / name).string()));
  }

  SUBCASE("fit produces a checkpoint and a bounded trace, then eval and metrics run") {
    const std::string ckpt = ws.file("model.ckpt");
    REQUIRE(run("fit --config " + config + " --data-dir " + data +
                " --checkpoint " + ckpt) == 0);
    CHECK(fs::exists(ckpt));
    REQUIRE(fs::exists(ckpt + ".trace.csv"));
    {
      std::ifstream trace(ckpt + ".trace.csv");
      std::string line;
      int rows = 0;
      while (std::getline(trace, line))
        if (!line.empty() && line[0] != '#' && line[0] != 'i') ++rows;
      CHECK(rows <= 300);
      CHECK(rows > 0);
    }

    const std::string out = ws.dir("out");
    CHECK(run("eval --checkpoint " + ckpt + " --data-dir " + data +
              " --skew 2.5,5,15 --mode basket --mode trip --out " + out) == 0);
    CHECK(fs::exists(fs::path(out) / "eval_results.csv"));
    const std::string results = slurp((fs::path(out) / "eval_results.csv").string());
    CHECK(results.find("conditional,all") != std::string::npos);
    CHECK(results.find("price_2.5%") != std::string::npos);

    CHECK(run("metrics --checkpoint " + ckpt + " --items hot_dogs --out " + out) == 0);
    CHECK(fs::exists(fs::path(out) / "metrics_complementarity.csv"));
    CHECK(fs::exists(fs::path(out) / "metrics_exchangeability.csv"));

    SUBCASE("unknown and excluded query items exit with the input-error code") {
      CHECK(run("metrics --checkpoint " + ckpt + " --items no_such_item --out " +
                out) == 2);
      CHECK(run("metrics --checkpoint " + ckpt + " --items '<checkout>' --out " +
                out) == 2);
    }
    SUBCASE("fit respects --max-iterations") {
      const std::string ckpt2 = ws.file("short.ckpt");
      REQUIRE(run("fit --config " + config + " --data-dir " + data +
                  " --checkpoint " + ckpt2 + " --max-iterations 10") == 0);
      std::ifstream trace(ckpt2 + ".trace.csv");
      std::string line;
      int rows = 0;
      while (std::getline(trace, line))
        if (!line.empty() && line[0] != '#' && line[0] != 'i') ++rows;
      CHECK(rows <= 10);
    }
  }
}

TEST_CASE("missing inputs exit with the input-error code") {
  Workspace ws;
  const std::string config = ws.file("run.ini");
  write_config(config);
  CHECK(run("fit --config " + config + " --data-dir " + ws.dir("nothing") +
            " --checkpoint " + ws.file("x.ckpt")) == 2);
  CHECK(run("simulate --config " + ws.file("missing.ini") + " --out " +
            ws.dir("o")) == 2);
  CHECK(run("eval --checkpoint " + ws.file("missing.ckpt") + " --data-dir " +
            ws.dir("nothing")) == 2);
}

TEST_CASE("unwritable output directory exits with the input-error code") {
  Workspace ws;
  const std::string config = ws.file("run.ini");
  write_config(config);
  CHECK(run("simulate --config " + config + " --out /proc/invalid/output") == 2);
}
