#pragma once

#include <cstdint>
#include <string>

#include "baskets/catalog.hpp"
#include "baskets/model.hpp"
#include "baskets/variational.hpp"

namespace baskets {

// Fitted-model container: model configuration, the catalog identity maps and
// training mean prices, and the variational parameter arrays. The on-disk
// format is a little-endian binary layout documented in README.md (magic
// string, version, named sections with shape headers, 64-bit floats).
struct Checkpoint {
  ModelConfig config;
  Catalog catalog;  // registries and mean_price only; no price table
  VariationalState state;
  std::uint64_t catalog_hash = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace baskets
