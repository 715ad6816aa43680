#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace qf {

enum class Label { negative = 0, positive = 1 };

const char* label_name(Label l);
Label parse_label(const std::string& s);

struct LabeledSample {
  std::string id;
  std::string text;
  Label label = Label::positive;
  std::string source;
};

enum class RejectReason { no_text_fields, contains_unk, invalid_utf8 };

const char* reject_reason_name(RejectReason r);

struct Rejection {
  RejectReason reason;
};

// A positive dataset: line-delimited JSON records whose `fields` are joined,
// in the declared order, by single newlines. A field may hold a string or an
// array of strings (conversation messages, also joined by newlines).
struct PositiveSource {
  std::string name;
  std::filesystem::path path;
  std::vector<std::string> fields{"text"};
  std::string id_field = "id";
};

struct TrainsetSpec {
  std::string lang;
  std::vector<PositiveSource> positive_sources;
  std::filesystem::path negative_corpus;
  std::uint64_t cap_per_class = 80000;
  double heldout_fraction = 0.05;
  std::uint64_t seed = 0;
};

// Pre-processing for one positive record.
std::variant<LabeledSample, Rejection> preprocess_positive(const nlohmann::json& raw,
                                                           const std::vector<std::string>& fields,
                                                           const std::string& source, const std::string& id);

struct SourceStats {
  std::uint64_t records = 0;
  std::uint64_t accepted = 0;
  std::map<std::string, std::uint64_t> rejected;  // reason -> count
  std::uint64_t sampled = 0;

  std::uint64_t rejected_total() const;
  double rejection_rate() const;
};

struct TrainsetReport {
  std::string lang;
  std::uint64_t seed = 0;
  std::uint64_t cap_per_class = 0;
  std::map<std::string, SourceStats> sources;
  std::uint64_t positive_candidates = 0;
  std::uint64_t positives = 0;
  std::uint64_t negative_candidates = 0;
  std::uint64_t negatives = 0;
  std::uint64_t train_count = 0;
  std::uint64_t heldout_count = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

struct TrainsetOutputs {
  std::filesystem::path train;
  std::filesystem::path heldout;
  std::filesystem::path report;
};

// Samples up to cap_per_class surviving positives (pooled over sources) and
// min(cap, available) negatives (reservoir sampled, no pre-processing), splits
// heldout_fraction of each class into the held-out file, and writes both as
// document files with "label" and "source" meta keys.
TrainsetReport build_trainset(const TrainsetSpec& spec, const TrainsetOutputs& out);

// Inverse of the output format: label/source meta keys back into samples.
std::vector<LabeledSample> read_labeled_samples(const std::filesystem::path& path);

}  // namespace qf
