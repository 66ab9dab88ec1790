#ifndef GROUNDER_TOOLS_APP_HPP_
#define GROUNDER_TOOLS_APP_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "grounder/grounding.hpp"
#include "grounder/trainer.hpp"

namespace grounder::app {

// Everything a command can read from a --config file. Flags override the
// matching fields after the file is loaded.
struct RunConfig {
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> lexicon;
  std::optional<std::filesystem::path> entity_model;
  std::optional<std::filesystem::path> attribute_model;
  std::optional<std::filesystem::path> color_model;
  std::optional<std::filesystem::path> manifest;
  std::uint64_t seed = 1;
  std::optional<int> threads;  // unset falls back to GROUNDER_THREADS, then 1
  TrainConfig train;
  GroundingConfig grounding;
};

// Keys: the path fields above, "seed", "threads", "train" (TrainConfig
// field names) and "grounding" (sim_threshold, reject_below_threshold and
// the ProposalConfig field names). Relative paths resolve against base_dir.
// Throws ConfigError on an unknown key or a value of the wrong type.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Worker count from the config, else GROUNDER_THREADS, else 1. Throws
// ConfigError on a malformed or non-positive environment value.
int resolve_threads(const RunConfig& cfg);

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};
// Sketch, FFT, scoring and gradient property checks on small seeded
// instances.
std::vector<SelfCheck> run_selftest(std::uint64_t seed);

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// args excludes the program name. Normal output goes to out, diagnostics and
// usage text to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace grounder::app

#endif  // GROUNDER_TOOLS_APP_HPP_
