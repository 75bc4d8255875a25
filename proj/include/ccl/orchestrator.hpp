#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "ccl/corpus.hpp"
#include "ccl/pipeline.hpp"
#include "ccl/sampler.hpp"

namespace ccl::orchestrator {

// Run configuration: one JSON document with nested sections. Missing keys
// take the defaults from default_config(); relative paths are resolved
// against the directory of the file they were read from.
struct Config {
  Json doc;
  std::filesystem::path base_dir;

  // Sets a dotted key ("train.learning_rate"). The value is parsed as JSON
  // when it parses, otherwise stored as a string.
  void set(const std::string& dotted_key, const std::string& value);
  const Json& at(const std::string& dotted_key) const;

  std::filesystem::path path(const std::string& dotted_key) const;
  std::filesystem::path run_dir() const;

  // Throws ValidationError on unknown sections/keys or out-of-range values.
  void validate() const;
};

Json default_config();
Config load_config(const std::filesystem::path& file);
Config config_from_json(const Json& doc, std::filesystem::path base_dir);

// Typed views of the config sections.
pipeline::ConstructParams construct_params(const Config& cfg);
guidance::AdaptParams adapt_params(const Config& cfg);
pipeline::AdaptMode adapt_mode(const Config& cfg);
pipeline::TrainParams train_params(const Config& cfg, pipeline::Method method, pipeline::Strategy strategy);
std::unique_ptr<sampler::Solver> make_solver(const Config& cfg);

// Hash of the sections that determine an output, for manifests.
std::string config_hash(const Config& cfg, const std::string& stage);

struct CommandResult {
  std::uint64_t requests = 0;  // generation requests issued
  bool reused = false;         // outputs were already up to date
  Json summary;
};

// `solver` overrides the configured solver when given.
CommandResult cmd_construct(const Config& cfg, sampler::Solver* solver = nullptr);
CommandResult cmd_adapt(const Config& cfg, sampler::Solver* solver = nullptr);
CommandResult cmd_train(const Config& cfg, pipeline::Method method, pipeline::Strategy strategy);

struct Report {
  Json json;
  std::string text;
  bool partial = false;
};

Report cmd_report(const std::filesystem::path& run_dir);

// Layout of a run directory.
namespace layout {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kConstructDir = "construct";
inline constexpr const char* kSamples = "construct/samples.jsonl";
inline constexpr const char* kProgress = "construct/progress.jsonl";
inline constexpr const char* kCurriculum = "construct/curriculum.json";
inline constexpr const char* kAdaptDir = "adapt";
inline constexpr const char* kAdaptCorpus = "adapt/corpus.jsonl";
inline constexpr const char* kAdaptManifest = "adapt/adaptation.json";
inline constexpr const char* kAdaptCurriculum = "adapt/curriculum.json";
inline constexpr const char* kDiscarded = "adapt/discarded.jsonl";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kReportText = "report.txt";
std::filesystem::path train_dir(const std::filesystem::path& run_dir, pipeline::Method m, pipeline::Strategy s);
}  // namespace layout

}  // namespace ccl::orchestrator
