#include "ccl/ccl.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <string>

#include "ccl/error.hpp"
#include "ccl/orchestrator.hpp"
#include "ccl/toylearner.hpp"

struct ccl_run {
  ccl::orchestrator::Config cfg;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename F>
ccl_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return CCL_OK;
  } catch (const ccl::Error& e) {
    g_last_error = e.what();
    return static_cast<ccl_status>(static_cast<int>(e.kind()));
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return CCL_ERR_IO;
  } catch (const ccl::Json::exception& e) {
    g_last_error = e.what();
    return CCL_ERR_VALIDATION;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CCL_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return CCL_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) throw ccl::ValidationError(std::string(what) + " must not be NULL");
}

void emit(char** out, const ccl::Json& j) {
  if (out) *out = dup_string(j.dump());
}

}  // namespace

extern "C" {

const char* ccl_version(void) { return "0.1.0"; }

const char* ccl_last_error(void) { return g_last_error.c_str(); }

ccl_status ccl_run_open(const char* config_path, ccl_run** out) {
  return guarded([&] {
    need(config_path, "config_path");
    need(out, "out");
    *out = nullptr;
    auto cfg = ccl::orchestrator::load_config(config_path);
    *out = new ccl_run{std::move(cfg)};
  });
}

void ccl_run_close(ccl_run* run) { delete run; }

ccl_status ccl_run_set(ccl_run* run, const char* key, const char* value) {
  return guarded([&] {
    need(run, "run");
    need(key, "key");
    need(value, "value");
    auto copy = run->cfg;
    copy.set(key, value);
    copy.validate();
    run->cfg = std::move(copy);
  });
}

ccl_status ccl_run_config_json(const ccl_run* run, char** json_out) {
  return guarded([&] {
    need(run, "run");
    need(json_out, "json_out");
    *json_out = dup_string(run->cfg.doc.dump(2));
  });
}

ccl_status ccl_run_construct(ccl_run* run, uint64_t* requests_out, char** summary_out) {
  return guarded([&] {
    need(run, "run");
    const auto r = ccl::orchestrator::cmd_construct(run->cfg);
    if (requests_out) *requests_out = r.requests;
    emit(summary_out, ccl::Json{{"reused", r.reused}, {"requests", r.requests}, {"partition", r.summary}});
  });
}

ccl_status ccl_run_adapt(ccl_run* run, uint64_t* requests_out, char** summary_out) {
  return guarded([&] {
    need(run, "run");
    const auto r = ccl::orchestrator::cmd_adapt(run->cfg);
    if (requests_out) *requests_out = r.requests;
    emit(summary_out, ccl::Json{{"reused", r.reused}, {"requests", r.requests}, {"counts", r.summary}});
  });
}

ccl_status ccl_run_train(ccl_run* run, const char* method, const char* strategy, char** summary_out) {
  return guarded([&] {
    need(run, "run");
    need(method, "method");
    need(strategy, "strategy");
    const auto r = ccl::orchestrator::cmd_train(run->cfg, ccl::pipeline::method_from_string(method),
                                                ccl::pipeline::strategy_from_string(strategy));
    emit(summary_out, r.summary);
  });
}

ccl_status ccl_report(const char* run_dir, char** text_out, int* partial_out) {
  return guarded([&] {
    need(run_dir, "run_dir");
    const auto r = ccl::orchestrator::cmd_report(run_dir);
    if (text_out) *text_out = dup_string(r.text);
    if (partial_out) *partial_out = r.partial ? 1 : 0;
  });
}

ccl_status ccl_gen_tasks(const char* out_path, uint64_t seed, size_t count, size_t k_min, size_t k_max, int modulus,
                         const char* id_prefix) {
  return guarded([&] {
    need(out_path, "out_path");
    ccl::toy::TaskGenConfig cfg;
    cfg.seed = seed;
    cfg.count = count;
    cfg.k_min = k_min;
    cfg.k_max = k_max;
    cfg.modulus = modulus;
    if (id_prefix) cfg.id_prefix = id_prefix;
    const auto problems = ccl::toy::gen_tasks(cfg);
    const std::filesystem::path p(out_path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    ccl::write_corpus(problems, p);
  });
}

void ccl_string_free(char* s) { std::free(s); }

}  // extern "C"
