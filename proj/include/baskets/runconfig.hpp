#pragma once

#include <cstdint>
#include <string>

#include "baskets/model.hpp"
#include "baskets/simulator.hpp"
#include "baskets/variational.hpp"

namespace baskets {

// Parsed configuration file with [model], [optimizer], [simulate], and
// [paths] sections. Unknown sections or keys are rejected.
struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  ToyWorldConfig simulate;
  struct Paths {
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint;
  } paths;

  // FNV hash of the canonical key=value dump; stamped into output files.
  std::uint64_t hash() const;
  std::string dump() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace baskets
