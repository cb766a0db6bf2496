#include "baskets/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "baskets/errors.hpp"

namespace baskets {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'B', 'S', 'K', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian; big-endian hosts are unsupported");

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw CompatibilityError("truncated checkpoint: " + path);
  return v;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
  const auto len = read_pod<std::uint64_t>(in, path);
  std::string s(len, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(len)))
    throw CompatibilityError("truncated checkpoint: " + path);
  return s;
}

void write_array(std::ofstream& out, const std::string& name,
                 const std::vector<double>& data) {
  write_string(out, name);
  write_pod<std::uint8_t>(out, 1);  // kind: f64 array
  write_pod<std::uint32_t>(out, 1);
  write_pod<std::uint64_t>(out, data.size());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
}

void write_json(std::ofstream& out, const std::string& name, const json& j) {
  write_string(out, name);
  write_pod<std::uint8_t>(out, 0);  // kind: json text
  write_string(out, j.dump());
}

json config_to_json(const ModelConfig& c) {
  return json{{"k_items", c.k_items},
              {"k_price", c.k_price},
              {"k_season", c.k_season},
              {"use_preferences", c.use_preferences},
              {"use_price", c.use_price},
              {"use_season", c.use_season},
              {"think_ahead", c.think_ahead},
              {"prior_std", c.prior_std},
              {"prior_std_season", c.prior_std_season},
              {"gamma_prior_shape", c.gamma_prior_shape},
              {"gamma_prior_rate", c.gamma_prior_rate},
              {"exact_permutation_cap", c.exact_permutation_cap},
              {"think_ahead_top_m", c.think_ahead_top_m}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.k_items = j.at("k_items").get<int>();
  c.k_price = j.at("k_price").get<int>();
  c.k_season = j.at("k_season").get<int>();
  c.use_preferences = j.at("use_preferences").get<bool>();
  c.use_price = j.at("use_price").get<bool>();
  c.use_season = j.at("use_season").get<bool>();
  c.think_ahead = j.at("think_ahead").get<bool>();
  c.prior_std = j.at("prior_std").get<double>();
  c.prior_std_season = j.at("prior_std_season").get<double>();
  c.gamma_prior_shape = j.at("gamma_prior_shape").get<double>();
  c.gamma_prior_rate = j.at("gamma_prior_rate").get<double>();
  c.exact_permutation_cap = j.at("exact_permutation_cap").get<int>();
  c.think_ahead_top_m = j.at("think_ahead_top_m").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, ckpt.catalog_hash);
  write_pod<std::uint64_t>(out, ckpt.config_hash);
  write_pod<std::uint64_t>(out, ckpt.seed);

  write_pod<std::uint32_t>(out, 4);  // section count
  write_json(out, "model_config", config_to_json(ckpt.config));
  write_json(out, "catalog",
             json{{"item_ids", ckpt.catalog.item_ids},
                  {"user_ids", ckpt.catalog.user_ids},
                  {"mean_price", ckpt.catalog.mean_price},
                  {"min_abs_week", ckpt.catalog.min_abs_week},
                  {"max_abs_week", ckpt.catalog.max_abs_week}});
  write_array(out, "par1", ckpt.state.par1);
  write_array(out, "par2", ckpt.state.par2);
  if (!out.flush()) throw DataError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CompatibilityError("not a checkpoint file: " + path);
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw CompatibilityError("unsupported checkpoint version " +
                             std::to_string(version) + " in " + path);

  Checkpoint ckpt;
  ckpt.catalog_hash = read_pod<std::uint64_t>(in, path);
  ckpt.config_hash = read_pod<std::uint64_t>(in, path);
  ckpt.seed = read_pod<std::uint64_t>(in, path);

  const auto n_sections = read_pod<std::uint32_t>(in, path);
  json config_json, catalog_json;
  std::vector<double> par1, par2;
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const std::string name = read_string(in, path);
    const auto kind = read_pod<std::uint8_t>(in, path);
    if (kind == 0) {
      json j;
      try {
        j = json::parse(read_string(in, path));
      } catch (const json::exception& e) {
        throw CompatibilityError("corrupt checkpoint section '" + name + "': " +
                                 e.what());
      }
      if (name == "model_config")
        config_json = std::move(j);
      else if (name == "catalog")
        catalog_json = std::move(j);
    } else if (kind == 1) {
      const auto ndim = read_pod<std::uint32_t>(in, path);
      std::size_t total = 1;
      for (std::uint32_t d = 0; d < ndim; ++d)
        total *= static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
      std::vector<double> data(total);
      if (!in.read(reinterpret_cast<char*>(data.data()),
                   static_cast<std::streamsize>(total * sizeof(double))))
        throw CompatibilityError("truncated checkpoint: " + path);
      if (name == "par1")
        par1 = std::move(data);
      else if (name == "par2")
        par2 = std::move(data);
    } else {
      throw CompatibilityError("unknown checkpoint section kind in " + path);
    }
  }
  if (config_json.is_null() || catalog_json.is_null() || par1.empty() || par2.empty())
    throw CompatibilityError("checkpoint is missing required sections: " + path);

  try {
    ckpt.config = config_from_json(config_json);
    ckpt.catalog.item_ids = catalog_json.at("item_ids").get<std::vector<std::string>>();
    ckpt.catalog.user_ids = catalog_json.at("user_ids").get<std::vector<std::string>>();
    ckpt.catalog.mean_price = catalog_json.at("mean_price").get<std::vector<double>>();
    ckpt.catalog.min_abs_week = catalog_json.at("min_abs_week").get<int>();
    ckpt.catalog.max_abs_week = catalog_json.at("max_abs_week").get<int>();
  } catch (const json::exception& e) {
    throw CompatibilityError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  ckpt.catalog.checkout = static_cast<std::uint32_t>(ckpt.catalog.item_ids.size() - 1);
  for (std::uint32_t i = 0; i < ckpt.catalog.item_ids.size(); ++i)
    ckpt.catalog.item_index.emplace(ckpt.catalog.item_ids[i], i);
  for (std::uint32_t u = 0; u < ckpt.catalog.user_ids.size(); ++u)
    ckpt.catalog.user_index.emplace(ckpt.catalog.user_ids[u], u);

  if (ckpt.catalog.hash() != ckpt.catalog_hash)
    throw CompatibilityError("checkpoint catalog hash mismatch: " + path);

  const LatentLayout layout(ckpt.config, ckpt.catalog.n_items(),
                            ckpt.catalog.n_users());
  if (par1.size() != layout.total() || par2.size() != layout.total())
    throw CompatibilityError("checkpoint arrays do not match the model layout: " + path);
  ckpt.state.layout = layout;
  ckpt.state.par1 = std::move(par1);
  ckpt.state.par2 = std::move(par2);
  ckpt.state.validate();
  return ckpt;
}

}  // namespace baskets
