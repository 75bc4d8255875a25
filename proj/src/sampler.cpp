#include "ccl/sampler.hpp"

#include <cmath>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "ccl/error.hpp"
#include "ccl/grader.hpp"
#include "ccl/guidance.hpp"
#include "ccl/hash.hpp"

namespace ccl::sampler {

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ValidationError("endpoint base_url is empty");
  if (model_name.empty()) throw ValidationError("endpoint model_name is empty");
  if (!(temperature >= 0.0)) throw ValidationError("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("top_p must be in (0, 1]");
  if (max_tokens < 1) throw ValidationError("max_tokens must be positive");
  if (n_samples < 1) throw ValidationError("n_samples must be positive");
  if (max_concurrent < 1) throw ValidationError("max_concurrent must be positive");
  if (max_attempts < 1) throw ValidationError("max_attempts must be positive");
  if (request_timeout.count() <= 0) throw ValidationError("request_timeout must be positive");
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double problem_difficulty(const Problem& problem) {
  if (auto it = problem.source_tags.find("difficulty"); it != problem.source_tags.end()) {
    if (it->is_number()) return it->get<double>();
    if (it->is_string()) {
      const auto& s = it->get_ref<const std::string&>();
      char* end = nullptr;
      const double d = std::strtod(s.c_str(), &end);
      if (end != s.c_str() && *end == '\0') return d;
    }
  }
  return static_cast<double>(problem.solution_steps.size());
}

// --- simulated solver -------------------------------------------------------

SimulatedSolver::SimulatedSolver(SimulatedSolverConfig cfg) : cfg_(cfg) {
  if (!(cfg_.hint_gain > 0.0)) throw ValidationError("hint_gain must be > 0");
  if (!std::isfinite(cfg_.skill)) throw ValidationError("skill must be finite");
}

double SimulatedSolver::success_probability(const Problem& problem, std::size_t hint_steps) const {
  const double k = static_cast<double>(problem.solution_steps.size());
  const double fraction = static_cast<double>(hint_steps) / k;
  return logistic(cfg_.skill - problem_difficulty(problem) + cfg_.hint_gain * fraction);
}

namespace {

std::string wrong_answer(const std::string& golden, std::uint64_t h) {
  const auto gold = grader::normalize(golden);
  const std::uint64_t offset = 1 + h % 9;
  if (gold.is_numeric()) {
    const auto wrong = gold.to_rational() + grader::BigRational(offset);
    const auto num = boost::multiprecision::numerator(wrong);
    const auto den = boost::multiprecision::denominator(wrong);
    return den == 1 ? num.str() : num.str() + "/" + den.str();
  }
  return "not " + golden + " (" + std::to_string(offset) + ")";
}

}  // namespace

std::vector<Response> SimulatedSolver::sample(const Problem& problem, std::size_t n,
                                              std::span<const std::string> hint_prefix) {
  if (n < 1) throw ValidationError("n must be >= 1");
  if (hint_prefix.size() >= problem.solution_steps.size())
    throw ValidationError("hint prefix must be shorter than the solution");
  const double p = success_probability(problem, hint_prefix.size());
  const std::uint64_t base = hash_combine(hash_combine(cfg_.noise_seed, fnv1a64(problem.id)), hint_prefix.size());
  std::vector<Response> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::uint64_t h = hash_combine(base, j);
    const bool ok = unit_interval(h) < p;
    const std::string answer = ok ? problem.golden_answer : wrong_answer(problem.golden_answer, splitmix64(h));
    Response r;
    r.text = "<think>simulated reasoning</think><answer>" + answer + "</answer>";
    r.finish_reason = FinishReason::stop;
    out.push_back(std::move(r));
  }
  requests_ += n;
  return out;
}

// --- HTTP endpoint ----------------------------------------------------------

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

struct DrawResult {
  bool done = false;
  Response response;
};

enum class AttemptStatus { ok, http_error, retryable_http, transport };

}  // namespace

Json chat_request_body(const EndpointConfig& cfg, const Problem& problem,
                       std::span<const std::string> hint_prefix) {
  const auto prompt = guidance::build_hinted_prompt(problem.question, hint_prefix);
  Json messages = Json::array();
  for (const auto& m : prompt.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return Json{{"model", cfg.model_name},
              {"messages", messages},
              {"temperature", cfg.temperature},
              {"top_p", cfg.top_p},
              {"n", 1},
              {"max_tokens", cfg.max_tokens}};
}

EndpointSolver::EndpointSolver(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.api_key.empty() && !cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) cfg_.api_key = key;
  }
  cfg_.validate();
}

std::vector<Response> EndpointSolver::sample(const Problem& problem, std::size_t n,
                                             std::span<const std::string> hint_prefix) {
  if (n < 1) throw ValidationError("n must be >= 1");
  if (hint_prefix.size() >= problem.solution_steps.size())
    throw ValidationError("hint prefix must be shorter than the solution");

  // Greedy decoding: one request stands for every draw.
  if (cfg_.temperature == 0.0 && n > 1) {
    auto one = sample(problem, 1, hint_prefix);
    return std::vector<Response>(n, one.front());
  }

  const auto url = split_url(cfg_.base_url);
  const std::string body = chat_request_body(cfg_, problem, hint_prefix).dump();
  const std::string endpoint = url.path + "/chat/completions";

  std::vector<DrawResult> results(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mu;
  std::string transport_message;

  auto worker = [&] {
    httplib::Client client(url.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.request_timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.request_timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    for (;;) {
      if (failed.load()) return;
      const std::size_t j = next.fetch_add(1);
      if (j >= n) return;

      Response resp;
      AttemptStatus status = AttemptStatus::transport;
      std::string last_error;
      for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff * (1 << (attempt - 1)));
        ++requests_;
        auto res = client.Post(endpoint, headers, body, "application/json");
        if (!res) {
          status = AttemptStatus::transport;
          last_error = httplib::to_string(res.error());
          continue;
        }
        if (res->status >= 500) {
          status = AttemptStatus::retryable_http;
          last_error = "HTTP " + std::to_string(res->status);
          continue;
        }
        if (res->status != 200) {
          status = AttemptStatus::http_error;
          last_error = "HTTP " + std::to_string(res->status);
          break;
        }
        try {
          const auto reply = Json::parse(res->body);
          const auto& choice = reply.at("choices").at(0);
          const auto& content = choice.at("message").at("content");
          resp.text = content.is_string() ? content.get<std::string>() : std::string();
          const auto fr = choice.value("finish_reason", Json("stop"));
          resp.finish_reason = (fr.is_string() && fr.get<std::string>() == "length") ? FinishReason::length
                                                                                       : FinishReason::stop;
          status = AttemptStatus::ok;
        } catch (const Json::exception& e) {
          status = AttemptStatus::http_error;
          last_error = std::string("malformed reply: ") + e.what();
        }
        break;
      }

      if (status == AttemptStatus::transport) {
        std::lock_guard lock(error_mu);
        if (!failed.exchange(true)) transport_message = last_error;
        return;
      }
      if (status != AttemptStatus::ok) {
        resp = Response{};
        resp.text = last_error;
        resp.finish_reason = FinishReason::error;
      }
      results[j].response = std::move(resp);
      results[j].done = true;
    }
  };

  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(cfg_.max_concurrent));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  if (failed.load()) {
    std::size_t completed = 0;
    for (const auto& r : results) completed += r.done ? 1 : 0;
    throw TransportError("endpoint " + cfg_.base_url + " unreachable after " + std::to_string(cfg_.max_attempts) +
                             " attempts: " + transport_message,
                         completed);
  }
  std::vector<Response> out;
  out.reserve(n);
  for (auto& r : results) out.push_back(std::move(r.response));
  return out;
}

// --- free functions ---------------------------------------------------------

std::vector<Response> sample_responses(Solver& solver, const Problem& problem, std::size_t n,
                                       std::span<const std::string> hint_prefix) {
  if (n < 1) throw ValidationError("n must be >= 1");
  for (std::size_t i = 0; i < hint_prefix.size(); ++i) {
    if (i >= problem.solution_steps.size() || hint_prefix[i] != problem.solution_steps[i])
      throw ValidationError("hint is not a prefix of the solution of \"" + problem.id + "\"");
  }
  auto out = solver.sample(problem, n, hint_prefix);
  if (out.size() != n) throw ValidationError("solver returned the wrong number of responses");
  return out;
}

Accuracy probe_accuracy(Solver& solver, const Problem& problem,
                        std::span<const std::string> hint_prefix, std::size_t n_probe) {
  if (n_probe < 1) throw ValidationError("n_probe must be >= 1");
  auto responses = sample_responses(solver, problem, n_probe, hint_prefix);
  return grader::accuracy(responses, grader::normalize(problem.golden_answer));
}

}  // namespace ccl::sampler
