#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qf/error.hpp"

namespace qf {

// Config file: one JSON object.
//
//   {
//     "language": "eng_Latn",
//     "seed": 7,
//     "workdir": "${OUT}/run",
//     "inputs": {"corpus": "data/web.jsonl", ...},
//     "stages": [{"id": "...", "type": "...", ...}, ...]
//   }
//
// "${NAME}" is replaced by the environment variable NAME anywhere in a string.
// Relative paths resolve against the config file's directory. Inside stage
// blocks, "$name" refers to a declared input and "@stage" / "@stage.output"
// to another stage's output; these references define the execution order.
//
// Stage types and their outputs (first listed is the default for "@stage"):
//   build-trainset  train heldout report
//   embed-handoff   <one per entry of "corpora"> requests
//   train-ngram     model report
//   train-mlp       model report
//   build-refs      refs report
//   score           scores report
//   plan            plan report
//   filter          corpus report
//   mix             corpus report
//   decontaminate   corpus index report
//   stats           report csv

struct StageConfig {
  std::string id;
  std::string type;
  nlohmann::json params;                // the stage block minus id/type, references unresolved
  std::vector<std::string> depends_on;  // stage ids
  std::map<std::string, std::filesystem::path> outputs;
};

struct PipelineConfig {
  std::filesystem::path source;
  std::filesystem::path base_dir;
  std::filesystem::path workdir;
  std::string language;
  std::uint64_t seed = 0;
  std::map<std::string, std::filesystem::path> inputs;
  std::vector<StageConfig> stages;  // dependency order
  std::string config_hash;

  const StageConfig& stage(const std::string& id) const;
};

// Parses, interpolates, checks references and orders stages. Throws
// ConfigError for unknown stage types or keys, undeclared or missing paths,
// dangling references and cycles.
PipelineConfig parse_config(const nlohmann::json& raw, const std::filesystem::path& base_dir,
                            std::optional<std::uint64_t> seed_override = std::nullopt);
PipelineConfig validate_config(const std::filesystem::path& path,
                               std::optional<std::uint64_t> seed_override = std::nullopt);

// Replaces ${NAME}; ConfigError if NAME is unset.
std::string interpolate_env(const std::string& s);

// Raised when embeddings requested from the external encoder are not present yet.
class EmbeddingsPending : public StageError {
 public:
  using StageError::StageError;
};

struct RunOptions {
  std::size_t jobs = 1;
  bool dry_run = false;
  std::ostream* log = nullptr;
};

enum class StageStatus { pending, executed, skipped, failed, planned };
const char* stage_status_name(StageStatus s);

struct OutputRecord {
  std::filesystem::path path;
  std::string hash;
  std::optional<std::uint64_t> docs;
  std::optional<std::uint64_t> tokens;
};

struct StageRecord {
  std::string id;
  std::string type;
  StageStatus status = StageStatus::pending;
  std::string skip_key;
  std::map<std::string, std::string> inputs;  // path -> content hash
  std::map<std::string, OutputRecord> outputs;
  double seconds = 0.0;
  std::string error;
};

struct RunManifest {
  std::string config_hash;
  std::filesystem::path config;
  std::string status;  // ok | failed | dry-run
  std::vector<StageRecord> stages;

  nlohmann::json to_json() const;
  const StageRecord& stage(const std::string& id) const;
};

// Executes stages in order, skipping any whose inputs, config hash and outputs
// are unchanged since its last successful run. Writes <workdir>/run_manifest.json
// even when a stage fails; the failure is then rethrown.
RunManifest run_pipeline(const PipelineConfig& cfg, const RunOptions& opts = {});

}  // namespace qf
