#pragma once

// Command-line surface. run_cli() is the whole program minus process setup,
// so commands can be exercised in-process by tests.
//
// Exit codes: 0 success, 1 a simulate property failed, 2 usage/config,
// 3 provider, 4 numerical.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgs/backends.hpp"
#include "vgs/data.hpp"
#include "vgs/search.hpp"
#include "vgs/simlab.hpp"
#include "vgs/value.hpp"

namespace vgs {

struct HttpSection {
  ProviderConfig provider;
  std::optional<std::string> auth_token_env;  ///< variable holding the bearer token
  std::size_t dim = 0;                        ///< embedding sections only
};

struct SimSection {
  std::string suite = "trap";  ///< trap | canonical-trap | chain | random
  std::size_t images = 4;
  std::optional<std::uint64_t> seed;  ///< defaults to the global seed
  std::optional<std::filesystem::path> mdp_file;
  std::size_t extra_dims = 8;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string provider_kind = "sim";  ///< sim | http
  SimSection sim;
  std::optional<HttpSection> policy;
  std::optional<HttpSection> embedding;
  std::optional<HttpSection> judge;

  SearchConfig search;
  BestOfNConfig bon;

  TrainConfig train;
  Architecture architecture = Architecture::tabular;
  std::size_t hidden_dim = 256;

  BuildOptions data;
  std::optional<std::filesystem::path> abbreviations_file;

  std::optional<std::filesystem::path> lexicon;
  std::optional<std::filesystem::path> annotations;
  std::optional<std::filesystem::path> rubric;

  /// Relative paths in the file are resolved against its directory.
  static RunConfig load(const std::optional<std::filesystem::path>& path);
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

  /// Propagates the global seed into sections that did not set their own
  /// and checks every invariant, including that referenced paths exist.
  void finalize();

  nlohmann::json to_json() const;
  std::string hash() const;  ///< SHA-256 of to_json().dump()
};

struct Providers {
  std::shared_ptr<PolicyProvider> policy;
  std::shared_ptr<EmbeddingProvider> embedder;
  std::shared_ptr<const sim::SimWorld> world;  ///< sim only
  std::uint64_t env_seed = 0;                  ///< sim only
};

std::shared_ptr<sim::SimWorld> make_sim_world(const RunConfig& cfg);
Providers make_providers(const RunConfig& cfg);

/// Writes manifest.json into `out_dir`, listing `artifacts` (relative to
/// out_dir) with their SHA-256 digests.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command, const std::string& config_hash,
                    const std::vector<std::filesystem::path>& artifacts);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vgs
