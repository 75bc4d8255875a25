#include <doctest.h>

#include "ccl/error.hpp"
#include "ccl/hash.hpp"
#include "ccl/orchestrator.hpp"
#include "ccl/toylearner.hpp"
#include "helpers.hpp"

using namespace ccl;
using namespace ccl::orchestrator;
using testing::slurp;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

// Counts calls and fails with a transport error on call `fail_on` (0: never).
class CountingSolver final : public sampler::Solver {
 public:
  CountingSolver(sampler::SimulatedSolverConfig cfg, int fail_on) : inner_(cfg), fail_on_(fail_on) {}
  std::vector<Response> sample(const Problem& p, std::size_t n, std::span<const std::string> hint) override {
    if (++calls_ == fail_on_) throw TransportError("connection reset", 0);
    requests_ += n;
    return inner_.sample(p, n, hint);
  }

 private:
  sampler::SimulatedSolver inner_;
  int fail_on_;
  int calls_ = 0;
};

struct Fixture {
  TempDir dir{"orch"};

  Fixture() {
    toy::TaskGenConfig g;
    g.seed = 21;
    g.count = 60;
    write_corpus(toy::gen_tasks(g), dir / "corpus.jsonl");
    g.seed = 22;
    g.count = 30;
    g.id_prefix = "held";
    write_corpus(toy::gen_tasks(g), dir / "heldout.jsonl");
  }

  Config config(Json extra = Json::object()) const {
    Json doc{{"seed", 3u},
             {"run_dir", "run"},
             {"corpus", "corpus.jsonl"},
             {"heldout", "heldout.jsonl"},
             {"construct", {{"n_samples", 8u}}},
             {"train", {{"grpo_steps", 9u}, {"batch_size", 8u}}}};
    doc.merge_patch(extra);
    return config_from_json(doc, dir.path());
  }

  fs::path run() const { return dir / "run"; }
};

}  // namespace

TEST_SUITE("orchestrator") {
  TEST_CASE("config keys are checked") {
    Fixture f;
    CHECK_THROWS_AS(f.config({{"trian", {{"batch_size", 4u}}}}), ValidationError);
    CHECK_THROWS_AS(f.config({{"train", {{"batchsize", 4u}}}}), ValidationError);
    CHECK_THROWS_AS(f.config({{"train", {{"batch_size", "four"}}}}), ValidationError);
    CHECK_THROWS_AS(f.config({{"adapt", {{"tau", 0.0}}}}), ValidationError);
    CHECK_THROWS_AS(f.config({{"adapt", {{"mode", "keep"}}}}), ValidationError);
    CHECK_THROWS_AS(f.config({{"solver", {{"kind", "oracle"}}}}), ValidationError);

    auto cfg = f.config();
    cfg.set("train.learning_rate", "20");
    CHECK(cfg.at("train.learning_rate") == 20);
    cfg.set("adapt.mode", "discard");
    CHECK(adapt_mode(cfg) == pipeline::AdaptMode::discard);
    cfg.set("run_dir", "123");
    CHECK(cfg.at("run_dir") == "123");
    CHECK_THROWS_AS(cfg.set("train.nope", "1"), ValidationError);
    CHECK_THROWS_AS(cfg.set("train..x", "1"), ValidationError);
    CHECK_THROWS_AS(cfg.set("construct.n_samples", "-3"), ValidationError);
    cfg.set("construct.n_samples", "0");
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    CHECK(cfg.path("corpus") == f.dir / "corpus.jsonl");
    CHECK(construct_params(f.config()).n_samples == 8);
    CHECK(train_params(f.config(), pipeline::Method::sft, pipeline::Strategy::uniform).batch_size == 8);
  }

  TEST_CASE("config files load relative to their directory") {
    Fixture f;
    testing::spit(f.dir / "c.json", R"({"corpus": "corpus.jsonl", "seed": 5})");
    auto cfg = load_config(f.dir / "c.json");
    CHECK(cfg.path("corpus") == f.dir / "corpus.jsonl");
    CHECK(cfg.at("seed") == 5);
    CHECK_THROWS_AS(load_config(f.dir / "missing.json"), IoError);
    testing::spit(f.dir / "bad.json", "{");
    CHECK_THROWS_AS(load_config(f.dir / "bad.json"), ValidationError);
  }

  TEST_CASE("construct reruns are byte-identical and free") {
    Fixture f;
    const auto cfg = f.config();
    auto first = cmd_construct(cfg);
    CHECK(first.requests == 60 * 8);
    CHECK_FALSE(first.reused);
    const auto manifest = slurp(f.run() / layout::kCurriculum);
    const auto samples = slurp(f.run() / layout::kSamples);

    auto second = cmd_construct(cfg);
    CHECK(second.reused);
    CHECK(second.requests == 0);
    CHECK(slurp(f.run() / layout::kCurriculum) == manifest);
    CHECK(slurp(f.run() / layout::kSamples) == samples);

    // a fresh directory with the same inputs gives the same bytes
    auto other = f.config({{"run_dir", "run2"}});
    cmd_construct(other);
    CHECK(slurp(f.dir / "run2" / layout::kCurriculum) == manifest);
    CHECK(slurp(f.dir / "run2" / layout::kSamples) == samples);

    const Json m = Json::parse(manifest);
    CHECK(m.at("corpus_sha256") == sha256_file(f.dir / "corpus.jsonl"));
    CHECK(m.at("partition").at("buckets").size() == 3);
  }

  TEST_CASE("a corpus without golden answers fails before sampling") {
    Fixture f;
    testing::spit(f.dir / "corpus.jsonl",
                  R"({"id":"a","question":"q","solution_steps":["1"],"golden_answer":""})" "\n");
    CountingSolver solver({3.0, 6.0, 0}, 0);
    CHECK_THROWS_AS(cmd_construct(f.config(), &solver), ValidationError);
    CHECK(solver.requests_issued() == 0);
  }

  TEST_CASE("interrupted construct resumes to the uninterrupted result") {
    Fixture f;
    const auto clean_cfg = f.config({{"run_dir", "clean"}});
    cmd_construct(clean_cfg);

    const auto cfg = f.config();
    CountingSolver flaky({3.0, 6.0, 0}, 25);
    try {
      cmd_construct(cfg, &flaky);
      FAIL("expected a transport error");
    } catch (const TransportError& e) {
      CHECK(e.completed == 24);
    }
    CHECK_FALSE(fs::exists(f.run() / layout::kCurriculum));
    CountingSolver healthy({3.0, 6.0, 0}, 0);
    auto resumed = cmd_construct(cfg, &healthy);
    CHECK(resumed.requests == (60 - 24) * 8);
    CHECK(slurp(f.run() / layout::kCurriculum) == slurp(f.dir / "clean" / layout::kCurriculum));
    CHECK(slurp(f.run() / layout::kSamples) == slurp(f.dir / "clean" / layout::kSamples));
  }

  TEST_CASE("changed config restarts the progress log") {
    Fixture f;
    CountingSolver flaky({3.0, 6.0, 0}, 10);
    CHECK_THROWS_AS(cmd_construct(f.config(), &flaky), TransportError);
    auto changed = f.config({{"construct", {{"n_samples", 4u}}}});
    auto r = cmd_construct(changed);
    CHECK(r.requests == 60 * 4);
  }

  TEST_CASE("adapt writes its manifests and checks the corpus hash") {
    Fixture f;
    CHECK_THROWS_AS(cmd_adapt(f.config()), ValidationError);  // construct first
    cmd_construct(f.config());
    for (const char* mode : {"retain", "discard", "adapt"}) {
      auto cfg = f.config({{"adapt", {{"mode", mode}}}});
      auto r = cmd_adapt(cfg);
      CHECK_FALSE(r.reused);
      const Json m = Json::parse(slurp(f.run() / layout::kAdaptManifest));
      CHECK(m.at("mode") == mode);
      CHECK(m.at("counts").at("kept").get<std::size_t>() + m.at("counts").at("discarded").get<std::size_t>() == 60);
      CHECK(read_corpus(f.run() / layout::kAdaptCorpus).size() == m.at("counts").at("kept").get<std::size_t>());
      CHECK(cmd_adapt(cfg).reused);
      if (std::string(mode) == "retain") CHECK(r.requests == 0);
    }
    auto corpus = read_corpus(f.dir / "corpus.jsonl");
    corpus.pop_back();
    write_corpus(corpus, f.dir / "corpus.jsonl");
    CHECK_THROWS_AS(cmd_adapt(f.config()), IntegrityError);
  }

  TEST_CASE("train writes metrics, checkpoints and status") {
    Fixture f;
    cmd_construct(f.config());
    cmd_adapt(f.config());
    for (auto strategy : {pipeline::Strategy::ccl, pipeline::Strategy::uniform}) {
      auto r = cmd_train(f.config(), pipeline::Method::grpo, strategy);
      const auto dir = layout::train_dir(f.run(), pipeline::Method::grpo, strategy);
      const Json status = Json::parse(slurp(dir / "status.json"));
      CHECK(status.at("state") == "complete");
      const Json m = Json::parse(slurp(dir / "train_manifest.json"));
      CHECK(m.at("optimizer_steps") == 9);
      CHECK(m.at("data") == (strategy == pipeline::Strategy::ccl ? "adapted" : "original"));
      CHECK(m.at("evals").size() == 3);
      CHECK(m.at("metrics_sha256") == sha256_file(dir / "metrics.jsonl"));
      for (const auto& c : m.at("checkpoints")) {
        const auto file = dir / c.at("file").get<std::string>();
        CHECK(c.at("sha256") == sha256_file(file));
        CHECK_NOTHROW(toy::load_policy(file));
      }
      CHECK(r.summary == m);
    }
    CHECK_THROWS_AS(cmd_train(f.config({{"heldout", ""}}), pipeline::Method::sft, pipeline::Strategy::ccl),
                    ValidationError);
  }

  TEST_CASE("report compares strategies and flags partial runs") {
    Fixture f;
    CHECK_THROWS_AS(cmd_report(f.run()), ValidationError);
    cmd_construct(f.config());
    cmd_adapt(f.config());
    cmd_train(f.config(), pipeline::Method::grpo, pipeline::Strategy::ccl);
    cmd_train(f.config(), pipeline::Method::grpo, pipeline::Strategy::uniform);
    auto rep = cmd_report(f.run());
    CHECK_FALSE(rep.partial);
    REQUIRE(rep.json.at("comparisons").size() == 1);
    const auto& c = rep.json.at("comparisons")[0];
    CHECK(c.at("delta_points").get<double>() ==
          doctest::Approx(100.0 * (c.at("ccl").get<double>() - c.at("uniform").get<double>())));
    CHECK(rep.text.find("grpo-ccl") != std::string::npos);
    CHECK(rep.text.find("adaptation (adapt") != std::string::npos);
    CHECK(fs::exists(f.run() / layout::kReportJson));
    CHECK(slurp(f.run() / layout::kReportText) == rep.text);

    // an unfinished run makes the report partial
    const auto dir = layout::train_dir(f.run(), pipeline::Method::sft, pipeline::Strategy::ccl);
    fs::create_directories(dir);
    testing::spit(dir / "metrics.jsonl", "");
    testing::spit(dir / "status.json", R"({"state":"running"})");
    auto partial = cmd_report(f.run());
    CHECK(partial.partial);
    CHECK(partial.text.rfind("PARTIAL", 0) == 0);
  }
}
