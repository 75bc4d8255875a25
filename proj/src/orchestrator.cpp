#include "ccl/orchestrator.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ccl/curriculum.hpp"
#include "ccl/error.hpp"
#include "ccl/hash.hpp"

namespace fs = std::filesystem;

namespace ccl::orchestrator {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_key(const std::string& dotted) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : dotted) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  for (const auto& p : parts)
    if (p.empty()) throw ValidationError("bad config key \"" + dotted + "\"");
  return parts;
}

// Values must have the same JSON type as the default; any number may stand in
// for a float default.
void check_against(const Json& value, const Json& def, const std::string& where) {
  if (def.is_object()) {
    if (!value.is_object()) throw ValidationError("config \"" + where + "\" must be an object");
    for (const auto& [k, v] : value.items()) {
      const std::string key = where.empty() ? k : where + "." + k;
      if (!def.contains(k)) throw ValidationError("unknown config key \"" + key + "\"");
      check_against(v, def.at(k), key);
    }
    return;
  }
  const bool ok = def.is_number_float()      ? value.is_number()
                  : def.is_number_unsigned() ? value.is_number_unsigned()
                  : def.is_number_integer()  ? value.is_number_integer()
                  : def.is_boolean()         ? value.is_boolean()
                  : def.is_string()          ? value.is_string()
                                             : true;
  if (!ok) throw ValidationError("config \"" + where + "\" has the wrong type (expected " + def.type_name() + ")");
}

std::size_t as_size(const Json& j) { return j.get<std::size_t>(); }

const char* kMethods[] = {"sft", "grpo"};
const char* kStrategies[] = {"ccl", "uniform"};

}  // namespace

// --- config -------------------------------------------------------------------

Json default_config() {
  return Json{
      {"seed", 0u},
      {"run_dir", "run"},
      {"corpus", ""},
      {"heldout", ""},
      {"solver",
       {{"kind", "simulated"},
        {"skill", 3.0},
        {"hint_gain", 6.0},
        {"noise_seed", 0u},
        {"base_url", ""},
        {"model_name", ""},
        {"api_key_env", "CCL_API_KEY"},
        {"temperature", 0.7},
        {"top_p", 0.95},
        {"max_tokens", 1024u},
        {"timeout_ms", 60000u},
        {"max_concurrent", 8u},
        {"max_attempts", 3u},
        {"backoff_ms", 200u}}},
      {"construct", {{"n_samples", 16u}, {"buckets", 3u}}},
      {"adapt", {{"mode", "adapt"}, {"tau", 0.25}, {"alpha", 0.5}, {"n_probe", 16u}}},
      {"train",
       {{"data", "auto"},
        {"review_ratio", 0.2},
        {"learning_rate", 50.0},
        {"batch_size", 32u},
        {"max_len", 16u},
        {"grpo_steps", 300u},
        {"clip_epsilon", 0.2},
        {"kl_beta", 0.04},
        {"group_size", 7u},
        {"inner_updates", 1u},
        {"reset_ref_per_stage", true},
        {"sft_epochs_per_stage", 3u},
        {"modulus", 10u},
        {"max_row_norm", 30.0}}},
  };
}

Config config_from_json(const Json& doc, fs::path base_dir) {
  Config cfg;
  cfg.doc = default_config();
  check_against(doc, cfg.doc, "");
  cfg.doc.merge_patch(doc);
  cfg.base_dir = std::move(base_dir);
  cfg.validate();
  return cfg;
}

Config load_config(const fs::path& file) {
  if (!fs::exists(file)) throw IoError("config file " + file.string() + " does not exist");
  return config_from_json(read_json(file), fs::absolute(file).parent_path());
}

void Config::set(const std::string& dotted_key, const std::string& value) {
  const auto parts = split_key(dotted_key);
  Json parsed;
  try {
    parsed = Json::parse(value);
  } catch (const Json::parse_error&) {
    parsed = value;
  }
  const Json defaults = default_config();
  const Json* def = &defaults;
  Json* node = &doc;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!def->is_object() || !def->contains(parts[i]))
      throw ValidationError("unknown config key \"" + dotted_key + "\"");
    def = &def->at(parts[i]);
    node = &(*node)[parts[i]];
  }
  // Plain strings such as "1e" stay strings; a string default keeps a
  // numeric-looking value as text.
  if (def->is_string() && !parsed.is_string()) parsed = value;
  check_against(parsed, *def, dotted_key);
  *node = parsed;
}

const Json& Config::at(const std::string& dotted_key) const {
  const Json* node = &doc;
  for (const auto& p : split_key(dotted_key)) {
    if (!node->is_object() || !node->contains(p)) throw ValidationError("unknown config key \"" + dotted_key + "\"");
    node = &node->at(p);
  }
  return *node;
}

fs::path Config::path(const std::string& dotted_key) const {
  const auto s = at(dotted_key).get<std::string>();
  if (s.empty()) return {};
  fs::path p(s);
  return p.is_absolute() ? p : base_dir / p;
}

fs::path Config::run_dir() const { return path("run_dir"); }

void Config::validate() const {
  check_against(doc, default_config(), "");
  const std::string kind = at("solver.kind").get<std::string>();
  if (kind != "simulated" && kind != "endpoint")
    throw ValidationError("solver.kind must be \"simulated\" or \"endpoint\"");
  if (at("run_dir").get<std::string>().empty()) throw ValidationError("run_dir must not be empty");
  const std::string data = at("train.data").get<std::string>();
  if (data != "auto" && data != "original" && data != "adapted")
    throw ValidationError("train.data must be auto, original or adapted");
  adapt_mode(*this);
  adapt_params(*this).validate();
  if (as_size(at("construct.n_samples")) < 1) throw ValidationError("construct.n_samples must be >= 1");
  if (as_size(at("construct.buckets")) < 1) throw ValidationError("construct.buckets must be >= 1");
  train_params(*this, pipeline::Method::grpo, pipeline::Strategy::ccl).validate();
  train_params(*this, pipeline::Method::sft, pipeline::Strategy::ccl).validate();
  if (at("train.modulus").get<int>() < 2) throw ValidationError("train.modulus must be >= 2");
  if (!(at("train.max_row_norm").get<double>() > 0)) throw ValidationError("train.max_row_norm must be > 0");
}

pipeline::ConstructParams construct_params(const Config& cfg) {
  pipeline::ConstructParams p;
  p.n_samples = as_size(cfg.at("construct.n_samples"));
  p.buckets = as_size(cfg.at("construct.buckets"));
  p.seed = cfg.at("seed").get<std::uint64_t>();
  return p;
}

guidance::AdaptParams adapt_params(const Config& cfg) {
  guidance::AdaptParams p;
  p.tau = cfg.at("adapt.tau").get<double>();
  p.alpha = cfg.at("adapt.alpha").get<double>();
  p.n_probe = as_size(cfg.at("adapt.n_probe"));
  return p;
}

pipeline::AdaptMode adapt_mode(const Config& cfg) {
  return pipeline::adapt_mode_from_string(cfg.at("adapt.mode").get<std::string>());
}

pipeline::TrainParams train_params(const Config& cfg, pipeline::Method method, pipeline::Strategy strategy) {
  pipeline::TrainParams p;
  p.method = method;
  p.strategy = strategy;
  p.review_ratio = cfg.at("train.review_ratio").get<double>();
  p.learning_rate = cfg.at("train.learning_rate").get<double>();
  p.batch_size = as_size(cfg.at("train.batch_size"));
  p.max_len = as_size(cfg.at("train.max_len"));
  p.seed = cfg.at("seed").get<std::uint64_t>();
  p.grpo_steps = as_size(cfg.at("train.grpo_steps"));
  p.grpo.clip_epsilon = cfg.at("train.clip_epsilon").get<double>();
  p.grpo.kl_beta = cfg.at("train.kl_beta").get<double>();
  p.grpo.group_size = as_size(cfg.at("train.group_size"));
  p.inner_updates = as_size(cfg.at("train.inner_updates"));
  p.reset_ref_per_stage = cfg.at("train.reset_ref_per_stage").get<bool>();
  p.sft_epochs_per_stage = as_size(cfg.at("train.sft_epochs_per_stage"));
  return p;
}

std::unique_ptr<sampler::Solver> make_solver(const Config& cfg) {
  const auto& s = cfg.at("solver");
  if (s.at("kind") == "simulated") {
    sampler::SimulatedSolverConfig sc;
    sc.skill = s.at("skill").get<double>();
    sc.hint_gain = s.at("hint_gain").get<double>();
    sc.noise_seed = s.at("noise_seed").get<std::uint64_t>();
    return std::make_unique<sampler::SimulatedSolver>(sc);
  }
  sampler::EndpointConfig ec;
  ec.base_url = s.at("base_url").get<std::string>();
  ec.model_name = s.at("model_name").get<std::string>();
  ec.api_key_env = s.at("api_key_env").get<std::string>();
  if (const char* key = std::getenv(ec.api_key_env.c_str())) ec.api_key = key;
  ec.temperature = s.at("temperature").get<double>();
  ec.top_p = s.at("top_p").get<double>();
  ec.max_tokens = s.at("max_tokens").get<int>();
  ec.n_samples = static_cast<int>(as_size(cfg.at("construct.n_samples")));
  ec.request_timeout = std::chrono::milliseconds(s.at("timeout_ms").get<std::int64_t>());
  ec.max_concurrent = s.at("max_concurrent").get<int>();
  ec.max_attempts = s.at("max_attempts").get<int>();
  ec.backoff = std::chrono::milliseconds(s.at("backoff_ms").get<std::int64_t>());
  return std::make_unique<sampler::EndpointSolver>(ec);
}

std::string config_hash(const Config& cfg, const std::string& stage) {
  Json subset{{"seed", cfg.at("seed")}, {"solver", cfg.at("solver")}, {"construct", cfg.at("construct")}};
  if (stage == "adapt" || stage == "train") subset["adapt"] = cfg.at("adapt");
  if (stage == "train") {
    subset["train"] = cfg.at("train");
    subset["heldout"] = cfg.at("heldout");
  }
  return sha256_hex(subset.dump());
}

namespace layout {
fs::path train_dir(const fs::path& run_dir, pipeline::Method m, pipeline::Strategy s) {
  return run_dir / "train" / (pipeline::to_string(m) + "-" + pipeline::to_string(s));
}
}  // namespace layout

// --- construct ----------------------------------------------------------------

namespace {

std::vector<Problem> load_corpus(const Config& cfg) {
  const auto path = cfg.path("corpus");
  if (path.empty()) throw ValidationError("config key \"corpus\" is not set");
  return read_corpus(path);
}

void write_config_copy(const Config& cfg) { write_json(cfg.run_dir() / layout::kConfig, cfg.doc); }

Json require_manifest(const fs::path& run, const char* rel, const char* producer) {
  const auto p = run / rel;
  if (!fs::exists(p)) throw ValidationError("missing " + p.string() + " (run \"" + producer + "\" first)");
  return read_json(p);
}

}  // namespace

CommandResult cmd_construct(const Config& cfg, sampler::Solver* solver) {
  cfg.validate();
  const fs::path run = cfg.run_dir();
  const auto corpus = load_corpus(cfg);
  for (const auto& p : corpus) validate(p);
  const std::string corpus_sha = sha256_file(cfg.path("corpus"));
  const std::string cfg_sha = config_hash(cfg, "construct");
  const auto params = construct_params(cfg);
  if (params.buckets > corpus.size())
    throw ValidationError("cannot split " + std::to_string(corpus.size()) + " problems into " +
                          std::to_string(params.buckets) + " buckets");

  fs::create_directories(run / layout::kConstructDir);
  write_config_copy(cfg);

  CommandResult result;
  const fs::path manifest_path = run / layout::kCurriculum;
  if (fs::exists(manifest_path) && fs::exists(run / layout::kSamples)) {
    const Json m = read_json(manifest_path);
    if (m.value("corpus_sha256", "") == corpus_sha && m.value("config_sha256", "") == cfg_sha &&
        m.value("samples_sha256", "") == sha256_file(run / layout::kSamples)) {
      result.reused = true;
      result.summary = m.at("partition");
      return result;
    }
  }

  // Completed problems from an interrupted run with the same inputs.
  const fs::path progress = run / layout::kProgress;
  const Json header{{"corpus_sha256", corpus_sha}, {"config_sha256", cfg_sha}};
  std::vector<SampleRecord> done;
  bool resume = false;
  if (fs::exists(progress)) {
    const auto rows = read_jsonl(progress);
    if (!rows.empty() && rows.front() == header) {
      resume = true;
      for (std::size_t i = 1; i < rows.size(); ++i) done.push_back(sample_record_from_json(rows[i]));
    }
  }
  if (!resume) write_jsonl({header}, progress);

  std::unique_ptr<sampler::Solver> owned;
  if (!solver) {
    owned = make_solver(cfg);
    solver = owned.get();
  }
  const std::uint64_t before = solver->requests_issued();
  pipeline::ConstructResult built;
  try {
    built = pipeline::construct(corpus, *solver, params, done,
                                [&](const SampleRecord& r) { append_jsonl(to_json(r), progress); });
  } catch (const TransportError& e) {
    const std::size_t finished = read_jsonl(progress).size() - 1;
    throw TransportError("sampling stopped with " + std::to_string(finished) + " of " +
                             std::to_string(corpus.size()) + " problems done (" + e.what() +
                             "); rerun to resume",
                         finished);
  }
  result.requests = solver->requests_issued() - before;

  write_samples(built.records, run / layout::kSamples);
  const auto report = curriculum::partition_report(built.dataset, built.records);
  Json manifest{{"corpus_sha256", corpus_sha},
                {"config_sha256", cfg_sha},
                {"samples_sha256", sha256_file(run / layout::kSamples)},
                {"seed", params.seed},
                {"n_samples", params.n_samples},
                {"buckets", params.buckets},
                {"curriculum", curriculum::to_json(built.dataset)},
                {"partition", report.to_json()}};
  write_json(manifest_path, manifest);
  result.summary = manifest.at("partition");
  return result;
}

// --- adapt ----------------------------------------------------------------------

CommandResult cmd_adapt(const Config& cfg, sampler::Solver* solver) {
  cfg.validate();
  const fs::path run = cfg.run_dir();
  const Json construct_manifest = require_manifest(run, layout::kCurriculum, "construct");
  const auto corpus = load_corpus(cfg);
  if (construct_manifest.at("corpus_sha256") != sha256_file(cfg.path("corpus")))
    throw IntegrityError("corpus changed since construct; rerun construct");
  const std::string construct_sha = sha256_file(run / layout::kCurriculum);
  const std::string cfg_sha = config_hash(cfg, "adapt");
  const auto mode = adapt_mode(cfg);
  const auto params = adapt_params(cfg);
  fs::create_directories(run / layout::kAdaptDir);
  write_config_copy(cfg);

  CommandResult result;
  const fs::path manifest_path = run / layout::kAdaptManifest;
  if (fs::exists(manifest_path) && fs::exists(run / layout::kAdaptCorpus) && fs::exists(run / layout::kAdaptCurriculum)) {
    const Json m = read_json(manifest_path);
    if (m.value("config_sha256", "") == cfg_sha && m.value("construct_sha256", "") == construct_sha) {
      result.reused = true;
      result.summary = m.at("counts");
      return result;
    }
  }

  const auto dataset = curriculum::dataset_from_json(construct_manifest.at("curriculum"));
  std::unique_ptr<sampler::Solver> owned;
  if (!solver) {
    owned = make_solver(cfg);
    solver = owned.get();
  }
  const std::uint64_t before = solver->requests_issued();
  const auto adapted = pipeline::adapt(corpus, dataset, *solver, mode, params);
  result.requests = solver->requests_issued() - before;

  std::vector<std::string> ids;
  for (const auto& p : corpus) ids.push_back(p.id);
  curriculum::validate_dataset(adapted.dataset, ids);

  Json entries = Json::array();
  std::map<std::string, std::size_t> counts{{"adapted", 0}, {"already_solvable", 0}, {"discarded", 0}};
  for (const auto& e : adapted.entries) {
    entries.push_back(pipeline::to_json(e));
    ++counts[guidance::to_string(e.verdict)];
  }
  Json counts_json(counts);
  counts_json["examined"] = adapted.entries.size();
  counts_json["kept"] = adapted.problems.size();

  write_corpus(adapted.problems, run / layout::kAdaptCorpus);
  write_corpus(adapted.discarded, run / layout::kDiscarded);
  write_json(run / layout::kAdaptCurriculum,
             Json{{"config_sha256", cfg_sha}, {"curriculum", curriculum::to_json(adapted.dataset)}});
  write_json(manifest_path, Json{{"mode", pipeline::to_string(mode)},
                                 {"tau", params.tau},
                                 {"alpha", params.alpha},
                                 {"n_probe", params.n_probe},
                                 {"config_sha256", cfg_sha},
                                 {"construct_sha256", construct_sha},
                                 {"corpus_sha256", sha256_file(run / layout::kAdaptCorpus)},
                                 {"counts", counts_json},
                                 {"entries", entries}});
  result.summary = counts_json;
  return result;
}

// --- train ----------------------------------------------------------------------

CommandResult cmd_train(const Config& cfg, pipeline::Method method, pipeline::Strategy strategy) {
  cfg.validate();
  const fs::path run = cfg.run_dir();
  const Json construct_manifest = require_manifest(run, layout::kCurriculum, "construct");

  std::string data = cfg.at("train.data").get<std::string>();
  if (data == "auto")
    data = strategy == pipeline::Strategy::ccl && fs::exists(run / layout::kAdaptManifest) ? "adapted" : "original";

  std::vector<Problem> problems;
  CurriculumDataset dataset;
  if (data == "adapted") {
    require_manifest(run, layout::kAdaptManifest, "adapt");
    problems = read_corpus(run / layout::kAdaptCorpus);
    dataset = curriculum::dataset_from_json(read_json(run / layout::kAdaptCurriculum).at("curriculum"));
  } else {
    problems = load_corpus(cfg);
    if (construct_manifest.at("corpus_sha256") != sha256_file(cfg.path("corpus")))
      throw IntegrityError("corpus changed since construct; rerun construct");
    dataset = curriculum::dataset_from_json(construct_manifest.at("curriculum"));
  }

  const auto heldout_path = cfg.path("heldout");
  if (heldout_path.empty()) throw ValidationError("config key \"heldout\" is not set");
  pipeline::HeldOut heldout;
  heldout.problems = read_corpus(heldout_path);

  const auto params = train_params(cfg, method, strategy);
  const auto sets = pipeline::stage_sets(dataset, params);
  const auto steps = pipeline::stage_steps(sets, params, dataset);
  const std::string cfg_sha = config_hash(cfg, "train");
  write_config_copy(cfg);

  const fs::path dir = layout::train_dir(run, method, strategy);
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());

  Json status{{"state", "running"}, {"method", pipeline::to_string(method)},
              {"strategy", pipeline::to_string(strategy)}, {"stages", sets.size()}};
  write_json(dir / "status.json", status);

  toy::SoftmaxPolicy initial(cfg.at("train.modulus").get<int>(), cfg.at("train.max_row_norm").get<double>());
  initial.lineage.push_back("init uniform seed " + std::to_string(params.seed));

  const fs::path metrics = dir / "metrics.jsonl";
  write_text(metrics, "");
  Json checkpoints = Json::array();
  std::string last_good = "initial";
  pipeline::TrainResult res;
  try {
    res = pipeline::train(
        initial, problems, dataset, params, heldout, [&](const Json& row) { append_jsonl(row, metrics); },
        [&](std::size_t stage, const toy::SoftmaxPolicy& policy) {
          const std::string file = "stage_" + std::to_string(stage) + ".ckpt";
          toy::save_policy(policy, dir / file);
          checkpoints.push_back({{"stage", stage}, {"file", file}, {"sha256", sha256_file(dir / file)}});
          last_good = file;
          status["completed_stages"] = stage;
          write_json(dir / "status.json", status);
        });
  } catch (const NumericError& e) {
    status["state"] = "failed";
    status["error"] = e.what();
    status["last_good_checkpoint"] = last_good;
    write_json(dir / "status.json", status);
    throw NumericError(std::string(e.what()) + " (last good checkpoint: " + last_good + ")");
  }

  Json evals = Json::array();
  for (const auto& ev : res.evals)
    evals.push_back({{"point", ev.stage}, {"heldout_accuracy", ev.heldout_accuracy}});
  Json set_sizes = Json::array();
  for (const auto& s : sets) set_sizes.push_back(s.size());
  Json manifest{{"method", pipeline::to_string(method)},
                {"strategy", pipeline::to_string(strategy)},
                {"data", data},
                {"config_sha256", cfg_sha},
                {"stage_set_sizes", set_sizes},
                {"stage_steps", steps},
                {"optimizer_steps", res.optimizer_steps},
                {"sampled_responses", res.sampled_responses},
                {"heldout_size", heldout.problems.size()},
                {"evals", evals},
                {"final_heldout_accuracy", res.evals.empty() ? 0.0 : res.evals.back().heldout_accuracy},
                {"checkpoints", checkpoints},
                {"lineage", res.policy.lineage},
                {"metrics_sha256", sha256_file(metrics)}};
  write_json(dir / "train_manifest.json", manifest);
  status["state"] = "complete";
  write_json(dir / "status.json", status);

  CommandResult result;
  result.summary = manifest;
  return result;
}

// --- report ---------------------------------------------------------------------

Report cmd_report(const fs::path& run_dir) {
  std::vector<std::string> expected;
  for (const char* m : kMethods)
    for (const char* s : kStrategies) expected.push_back(std::string("train/") + m + "-" + s + "/metrics.jsonl");

  struct RunInfo {
    std::string name;
    std::string state;
    std::vector<double> curve;
    std::optional<double> final_acc;
    std::size_t steps = 0;
    std::size_t sampled = 0;
  };
  std::vector<RunInfo> runs;
  for (const char* m : kMethods) {
    for (const char* s : kStrategies) {
      const fs::path dir = run_dir / "train" / (std::string(m) + "-" + s);
      if (!fs::exists(dir / "metrics.jsonl")) continue;
      RunInfo info;
      info.name = std::string(m) + "-" + s;
      info.state = fs::exists(dir / "status.json") ? read_json(dir / "status.json").value("state", "unknown") : "unknown";
      for (const auto& row : read_jsonl(dir / "metrics.jsonl")) {
        if (row.value("kind", "") == "eval") info.curve.push_back(row.at("heldout_accuracy").get<double>());
        if (row.value("kind", "") == "step") ++info.steps;
      }
      if (info.state == "complete" && fs::exists(dir / "train_manifest.json")) {
        const Json m = read_json(dir / "train_manifest.json");
        info.final_acc = m.at("final_heldout_accuracy").get<double>();
        info.sampled = m.at("sampled_responses").get<std::size_t>();
      }
      runs.push_back(std::move(info));
    }
  }
  if (runs.empty()) {
    std::string msg = "no training logs in " + run_dir.string() + "; expected at least one of:";
    for (const auto& e : expected) msg += "\n  " + e;
    throw ValidationError(msg);
  }

  Report report;
  std::ostringstream text;
  text << std::fixed << std::setprecision(4);
  Json jruns = Json::array();
  for (const auto& r : runs) {
    if (r.state != "complete") report.partial = true;
    Json jr{{"run", r.name}, {"state", r.state}, {"heldout_curve", r.curve}, {"optimizer_steps", r.steps}};
    if (r.final_acc) {
      jr["final_heldout_accuracy"] = *r.final_acc;
      jr["sampled_responses"] = r.sampled;
    }
    jruns.push_back(jr);
  }
  if (report.partial) text << "PARTIAL REPORT: some runs are not complete\n\n";

  text << "run            state      steps  held-out accuracy per stage\n";
  for (const auto& r : runs) {
    text << std::left << std::setw(15) << r.name << std::setw(11) << r.state << std::right << std::setw(5) << r.steps
         << " ";
    for (double a : r.curve) text << " " << a;
    text << '\n';
  }

  Json comparisons = Json::array();
  for (const char* m : kMethods) {
    const RunInfo* c = nullptr;
    const RunInfo* u = nullptr;
    for (const auto& r : runs) {
      if (r.name == std::string(m) + "-ccl") c = &r;
      if (r.name == std::string(m) + "-uniform") u = &r;
    }
    if (!c || !u || !c->final_acc || !u->final_acc) continue;
    const double delta = 100.0 * (*c->final_acc - *u->final_acc);
    comparisons.push_back({{"method", m},
                           {"ccl", *c->final_acc},
                           {"uniform", *u->final_acc},
                           {"delta_points", delta}});
  }
  if (!comparisons.empty()) {
    text << "\nmethod  uniform    ccl        delta (points)\n";
    for (const auto& c : comparisons)
      text << std::left << std::setw(8) << c.at("method").get<std::string>() << std::right
           << c.at("uniform").get<double>() << "     " << c.at("ccl").get<double>() << "     " << std::showpos
           << std::setprecision(2) << c.at("delta_points").get<double>() << std::noshowpos << std::setprecision(4)
           << '\n';
  }

  report.json = Json{{"partial", report.partial}, {"runs", jruns}, {"comparisons", comparisons}};

  if (fs::exists(run_dir / layout::kCurriculum)) {
    const Json m = read_json(run_dir / layout::kCurriculum);
    report.json["partition"] = m.at("partition");
    text << "\nbucket  count  mean_acc\n";
    for (const auto& b : m.at("partition").at("buckets"))
      text << std::setw(6) << b.at("bucket").get<std::size_t>() << std::setw(7) << b.at("count").get<std::size_t>()
           << std::setw(10) << b.at("mean_accuracy").get<double>() << '\n';
  }
  if (fs::exists(run_dir / layout::kAdaptManifest)) {
    const Json m = read_json(run_dir / layout::kAdaptManifest);
    Json a{{"mode", m.at("mode")}, {"tau", m.at("tau")}, {"alpha", m.at("alpha")}, {"counts", m.at("counts")}};
    report.json["adaptation"] = a;
    const auto& c = m.at("counts");
    text << "\nadaptation (" << m.at("mode").get<std::string>() << ", tau " << m.at("tau").get<double>() << ", alpha "
         << m.at("alpha").get<double>() << "): examined " << c.at("examined").get<std::size_t>() << ", adapted "
         << c.at("adapted").get<std::size_t>() << ", already solvable " << c.at("already_solvable").get<std::size_t>()
         << ", discarded " << c.at("discarded").get<std::size_t>() << '\n';
  }

  report.text = text.str();
  write_json(run_dir / layout::kReportJson, report.json);
  write_text(run_dir / layout::kReportText, report.text);
  return report;
}

}  // namespace ccl::orchestrator
