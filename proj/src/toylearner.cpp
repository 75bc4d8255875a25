#include "ccl/toylearner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "ccl/error.hpp"
#include "ccl/grader.hpp"
#include "ccl/hash.hpp"
#include "ccl/random.hpp"

namespace ccl::toy {

// --- tasks ------------------------------------------------------------------

int apply(const Op& op, int value, int modulus) {
  const long long v = op.kind == OpKind::add ? static_cast<long long>(value) + op.operand
                                             : static_cast<long long>(value) * op.operand;
  return static_cast<int>(((v % modulus) + modulus) % modulus);
}

std::vector<int> ToyTask::trace() const {
  std::vector<int> out;
  int v = start;
  for (const auto& op : ops) {
    v = apply(op, v, modulus);
    out.push_back(v);
  }
  return out;
}

std::string ToyTask::chain_text() const {
  std::string s = std::to_string(start);
  for (const auto& op : ops) s += std::string(" ") + (op.kind == OpKind::add ? "+" : "*") + std::to_string(op.operand);
  return s;
}

std::string ToyTask::question() const {
  return "Evaluate left to right modulo " + std::to_string(modulus) + ": " + chain_text();
}

Problem ToyTask::to_problem(std::string id) const {
  Problem p;
  p.id = std::move(id);
  p.question = question();
  for (int v : trace()) p.solution_steps.push_back(std::to_string(v));
  p.golden_answer = p.solution_steps.back();
  p.source_tags = Json{{"family", "modchain"},
                       {"modulus", modulus},
                       {"chain", chain_text()},
                       {"difficulty", ops.size()}};
  return p;
}

namespace {

ToyTask parse_chain(const std::string& chain, int modulus) {
  ToyTask task;
  task.modulus = modulus;
  std::istringstream in(chain);
  std::string tok;
  if (!(in >> tok)) throw ValidationError("empty chain");
  task.start = std::stoi(tok);
  while (in >> tok) {
    if (tok.size() < 2 || (tok[0] != '+' && tok[0] != '*')) throw ValidationError("bad chain token \"" + tok + "\"");
    Op op;
    op.kind = tok[0] == '+' ? OpKind::add : OpKind::mul;
    op.operand = std::stoi(tok.substr(1));
    if (op.operand < 0 || op.operand >= modulus) throw ValidationError("operand out of range in \"" + chain + "\"");
    task.ops.push_back(op);
  }
  if (task.start < 0 || task.start >= modulus) throw ValidationError("start value out of range in \"" + chain + "\"");
  if (task.ops.empty()) throw ValidationError("chain without operations");
  return task;
}

}  // namespace

ToyTask parse_task(const Problem& problem) {
  const auto& tags = problem.source_tags;
  try {
    if (tags.contains("chain") && tags.contains("modulus"))
      return parse_chain(tags.at("chain").get<std::string>(), tags.at("modulus").get<int>());
  } catch (const Json::exception& e) {
    throw ValidationError("problem \"" + problem.id + "\": " + e.what());
  }
  static const std::regex form(R"(modulo (\d+): ([0-9+* ]+)$)");
  std::smatch m;
  if (std::regex_search(problem.question, m, form)) return parse_chain(m[2].str(), std::stoi(m[1].str()));
  throw ValidationError("problem \"" + problem.id + "\" is not a modular-chain task");
}

std::vector<Problem> gen_tasks(const TaskGenConfig& cfg) {
  if (cfg.k_min < 1 || cfg.k_min > cfg.k_max) throw ValidationError("need 1 <= k_min <= k_max");
  if (cfg.modulus < 2) throw ValidationError("modulus must be >= 2");
  if (cfg.count < 1) throw ValidationError("count must be >= 1");
  Rng rng(cfg.seed);
  const std::uint64_t span = cfg.k_max - cfg.k_min + 1;
  const bool has_mul = cfg.modulus > 2;
  std::vector<Problem> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    ToyTask task;
    task.modulus = cfg.modulus;
    task.start = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.modulus)));
    const std::size_t k = cfg.k_min + static_cast<std::size_t>(rng.below(span));
    for (std::size_t j = 0; j < k; ++j) {
      Op op;
      op.kind = (has_mul && rng.below(2) == 1) ? OpKind::mul : OpKind::add;
      // add: 1..m-1, mul: 2..m-1
      op.operand = op.kind == OpKind::add ? 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.modulus - 1)))
                                          : 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.modulus - 2)));
      task.ops.push_back(op);
    }
    out.push_back(task.to_problem(cfg.id_prefix + "-" + std::to_string(i)));
  }
  return out;
}

// --- policy -----------------------------------------------------------------

namespace {

constexpr std::size_t kStructural = static_cast<std::size_t>(Structural::count);

// One feature row per (state, op kind, operand), with S = m + 1 states (the
// extra one for "not a residue"); exactly one row is active per position.
std::size_t num_states(int m) { return static_cast<std::size_t>(m) + 1; }
std::size_t step_feature(int m, int state, const Op& op) {
  return (static_cast<std::size_t>(state) * 2 + static_cast<std::size_t>(op.kind)) * static_cast<std::size_t>(m) +
         static_cast<std::size_t>(op.operand);
}
std::size_t feature_count(int m) { return 2 * num_states(m) * static_cast<std::size_t>(m); }

// Log-softmax of row f.
void log_distribution(const SoftmaxPolicy& policy, std::size_t f, std::vector<double>& out) {
  const std::size_t V = policy.vocab_size();
  out.resize(V);
  double mx = -INFINITY;
  for (std::size_t v = 0; v < V; ++v) {
    out[v] = policy.weight(f, v);
    mx = std::max(mx, out[v]);
  }
  double z = 0.0;
  for (std::size_t v = 0; v < V; ++v) z += std::exp(out[v] - mx);
  const double lz = mx + std::log(z);
  for (auto& x : out) x -= lz;
}

int next_state(const SoftmaxPolicy& policy, std::int32_t token) {
  return token >= 0 && token < policy.modulus() ? token : policy.modulus();
}

std::size_t position_feature(const SoftmaxPolicy& policy, const ToyPrompt& prompt, std::size_t t, int state) {
  return step_feature(policy.modulus(), state, prompt.ops[t]);
}

void check_length(const ToyPrompt& prompt, const rl::TokenSeq& tokens) {
  if (tokens.empty() || tokens.size() > prompt.ops.size())
    throw ValidationError("response length does not fit the prompt");
}

void check_prompt(const SoftmaxPolicy& policy, const ToyPrompt& prompt) {
  if (prompt.modulus != policy.modulus())
    throw ValidationError("task modulus " + std::to_string(prompt.modulus) + " does not match policy modulus " +
                          std::to_string(policy.modulus()));
  if (prompt.ops.empty()) throw ValidationError("prompt has no operations left");
}

}  // namespace

SoftmaxPolicy::SoftmaxPolicy(int modulus, double max_row_norm)
    : modulus_(modulus),
      vocab_(static_cast<std::size_t>(modulus) + kStructural),
      features_(feature_count(modulus)),
      max_row_norm_(max_row_norm),
      weights_(features_ * vocab_, 0.0) {
  if (modulus < 2) throw ValidationError("modulus must be >= 2");
  if (!(max_row_norm > 0.0)) throw ValidationError("max_row_norm must be > 0");
}

std::string SoftmaxPolicy::token_text(std::int32_t token) const {
  if (token >= 0 && token < modulus_) return std::to_string(token);
  static constexpr const char* names[] = {"+", "*", "<think>", "</think>", "<answer>", "</answer>"};
  const auto s = static_cast<std::size_t>(token - modulus_);
  if (token < 0 || s >= kStructural) throw ValidationError("token " + std::to_string(token) + " outside vocabulary");
  return names[s];
}

void SoftmaxPolicy::apply_norm_guard() {
  for (std::size_t f = 0; f < features_; ++f) {
    // scaled by the largest entry so the squares cannot overflow
    double big = 0.0;
    for (std::size_t v = 0; v < vocab_; ++v) big = std::max(big, std::abs(weight(f, v)));
    if (big == 0.0) continue;
    double sq = 0.0;
    for (std::size_t v = 0; v < vocab_; ++v) sq += (weight(f, v) / big) * (weight(f, v) / big);
    const double norm = big * std::sqrt(sq);
    if (norm > max_row_norm_) {
      const double s = max_row_norm_ / norm;
      for (std::size_t v = 0; v < vocab_; ++v) weight(f, v) *= s;
    }
  }
}

ToyPrompt make_prompt(const Problem& problem, std::span<const std::string> hint_prefix) {
  const ToyTask task = parse_task(problem);
  if (hint_prefix.size() >= task.ops.size())
    throw ValidationError("hint covers the whole solution of \"" + problem.id + "\"");
  ToyPrompt prompt;
  prompt.modulus = task.modulus;
  prompt.state = task.start;
  if (!hint_prefix.empty()) {
    const auto& last = hint_prefix.back();
    int v = -1;
    auto [ptr, ec] = std::from_chars(last.data(), last.data() + last.size(), v);
    prompt.state = (ec == std::errc() && ptr == last.data() + last.size() && v >= 0 && v < task.modulus)
                       ? v
                       : task.modulus;
  }
  prompt.ops.assign(task.ops.begin() + static_cast<std::ptrdiff_t>(hint_prefix.size()), task.ops.end());
  return prompt;
}

std::string render_response(const SoftmaxPolicy& policy, const rl::TokenSeq& tokens) {
  std::string text = "<think>";
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t) text += ' ';
    text += policy.token_text(tokens[t]);
  }
  text += "</think><answer>";
  if (!tokens.empty()) text += policy.token_text(tokens.back());
  text += "</answer>";
  return text;
}

PolicySample policy_sample(const SoftmaxPolicy& policy, const ToyPrompt& prompt, const SampleOptions& opts) {
  check_prompt(policy, prompt);
  if (opts.max_len < 1) throw ValidationError("max_len must be >= 1");
  const std::size_t n_steps = std::min(prompt.ops.size(), opts.max_len);
  Rng rng(opts.seed);
  PolicySample out;
  std::vector<double> logp;
  int state = prompt.state;
  for (std::size_t t = 0; t < n_steps; ++t) {
    log_distribution(policy, position_feature(policy, prompt, t, state), logp);
    std::size_t pick = 0;
    if (opts.greedy) {
      pick = static_cast<std::size_t>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    } else {
      const double u = rng.uniform();
      double acc = 0.0;
      pick = logp.size() - 1;
      for (std::size_t v = 0; v < logp.size(); ++v) {
        acc += std::exp(logp[v]);
        if (u < acc) {
          pick = v;
          break;
        }
      }
    }
    const auto token = static_cast<std::int32_t>(pick);
    out.tokens.push_back(token);
    out.logps.push_back(logp[pick]);
    state = next_state(policy, token);
  }
  out.response.text = render_response(policy, out.tokens);
  out.response.finish_reason = prompt.ops.size() > opts.max_len ? FinishReason::length : FinishReason::stop;
  return out;
}

std::vector<std::vector<double>> policy_distributions(const SoftmaxPolicy& policy, const ToyPrompt& prompt,
                                                      const rl::TokenSeq& tokens) {
  check_prompt(policy, prompt);
  check_length(prompt, tokens);
  std::vector<std::vector<double>> out(tokens.size());
  int state = prompt.state;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= policy.vocab_size())
      throw ValidationError("token " + std::to_string(tokens[t]) + " outside vocabulary");
    log_distribution(policy, position_feature(policy, prompt, t, state), out[t]);
    for (auto& x : out[t]) x = std::exp(x);
    state = next_state(policy, tokens[t]);
  }
  return out;
}

rl::TokenLogProbs policy_logprob(const SoftmaxPolicy& policy, const ToyPrompt& prompt, const rl::TokenSeq& tokens) {
  check_prompt(policy, prompt);
  check_length(prompt, tokens);
  rl::TokenLogProbs out;
  out.reserve(tokens.size());
  std::vector<double> logp;
  int state = prompt.state;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= policy.vocab_size())
      throw ValidationError("token " + std::to_string(tokens[t]) + " outside vocabulary");
    log_distribution(policy, position_feature(policy, prompt, t, state), logp);
    out.push_back(logp[static_cast<std::size_t>(tokens[t])]);
    state = next_state(policy, tokens[t]);
  }
  return out;
}

rl::TokenSeq target_tokens(const SoftmaxPolicy& policy, const Problem& problem) {
  rl::TokenSeq out;
  for (const auto& step : problem.remaining_steps()) {
    const int v = std::stoi(step);
    if (v < 0 || v >= policy.modulus()) throw ValidationError("solution value out of range in \"" + problem.id + "\"");
    out.push_back(v);
  }
  return out;
}

std::vector<double> weight_gradient(const SoftmaxPolicy& policy, std::span<const LogProbGrad> batch) {
  const std::size_t V = policy.vocab_size();
  std::vector<double> grad(policy.weights().size(), 0.0);
  std::vector<double> logp;
  for (const auto& item : batch) {
    check_prompt(policy, item.prompt);
    if (item.dlogp.size() != item.tokens.size()) throw ValidationError("gradient is not aligned with the response");
    check_length(item.prompt, item.tokens);
    int state = item.prompt.state;
    for (std::size_t t = 0; t < item.tokens.size(); ++t) {
      const double g = item.dlogp[t];
      if (!std::isfinite(g)) throw NumericError("non-finite log-prob gradient at position " + std::to_string(t));
      const std::size_t f = position_feature(policy, item.prompt, t, state);
      const auto token = static_cast<std::size_t>(item.tokens[t]);
      if (token >= V) throw ValidationError("token outside vocabulary");
      if (g != 0.0) {
        log_distribution(policy, f, logp);
        // d log p(token) / d logit_v = [v == token] - p_v
        for (std::size_t v = 0; v < V; ++v) {
          const double d = g * ((v == token ? 1.0 : 0.0) - std::exp(logp[v]));
          grad[f * V + v] += d;
        }
      }
      state = next_state(policy, item.tokens[t]);
    }
  }
  return grad;
}

SoftmaxPolicy policy_step(const SoftmaxPolicy& policy, std::span<const LogProbGrad> batch, double learning_rate) {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) throw ValidationError("learning rate must be >= 0");
  const auto grad = weight_gradient(policy, batch);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericError("non-finite weight gradient at index " + std::to_string(i));
  }
  SoftmaxPolicy next = policy;
  auto w = next.weights();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    w[i] -= learning_rate * grad[i];
    if (!std::isfinite(w[i])) throw NumericError("weight " + std::to_string(i) + " overflowed during the update");
  }
  next.apply_norm_guard();
  return next;
}

double greedy_accuracy(const SoftmaxPolicy& policy, std::span<const Problem> problems, std::size_t max_len) {
  if (problems.empty()) return 0.0;
  std::size_t correct = 0;
  SampleOptions opts;
  opts.greedy = true;
  opts.max_len = max_len;
  for (const auto& p : problems) {
    const auto s = policy_sample(policy, make_prompt(p), opts);
    correct += rl::accuracy_reward(s.response.text, grader::normalize(p.golden_answer)) == 1 ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(problems.size());
}

// --- checkpoints ------------------------------------------------------------

namespace {
constexpr const char* kMagic = "ccl-softmax-policy v1";
}

std::string serialize_policy(const SoftmaxPolicy& policy) {
  std::ostringstream out;
  out << kMagic << '\n';
  out << "modulus " << policy.modulus() << '\n';
  out << "max_row_norm " << Json(policy.max_row_norm()).dump() << '\n';
  out << "shape " << policy.feature_dim() << ' ' << policy.vocab_size() << '\n';
  out << "lineage " << Json(policy.lineage).dump() << '\n';
  char buf[32];
  for (std::size_t f = 0; f < policy.feature_dim(); ++f) {
    for (std::size_t v = 0; v < policy.vocab_size(); ++v) {
      std::snprintf(buf, sizeof buf, "%.17g", policy.weight(f, v));
      out << (v ? " " : "") << buf;
    }
    out << '\n';
  }
  return out.str();
}

SoftmaxPolicy deserialize_policy(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != kMagic) throw ValidationError("not a policy checkpoint");
  auto field = [&](const char* name) {
    std::getline(in, line);
    const std::string prefix = std::string(name) + " ";
    if (line.rfind(prefix, 0) != 0) throw ValidationError("checkpoint: expected \"" + std::string(name) + "\"");
    return line.substr(prefix.size());
  };
  const int modulus = std::stoi(field("modulus"));
  const double max_norm = Json::parse(field("max_row_norm")).get<double>();
  std::istringstream shape(field("shape"));
  std::size_t rows = 0, cols = 0;
  shape >> rows >> cols;
  SoftmaxPolicy policy(modulus, max_norm);
  if (rows != policy.feature_dim() || cols != policy.vocab_size())
    throw ValidationError("checkpoint shape does not match modulus " + std::to_string(modulus));
  policy.lineage = Json::parse(field("lineage")).get<std::vector<std::string>>();
  for (std::size_t f = 0; f < rows; ++f) {
    for (std::size_t v = 0; v < cols; ++v) {
      std::string tok;
      if (!(in >> tok)) throw ValidationError("checkpoint truncated");
      policy.weight(f, v) = std::strtod(tok.c_str(), nullptr);
      if (!std::isfinite(policy.weight(f, v))) throw NumericError("checkpoint holds a non-finite weight");
    }
  }
  return policy;
}

void save_policy(const SoftmaxPolicy& policy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << serialize_policy(policy);
  if (!out) throw IoError("write failed for " + path.string());
}

SoftmaxPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_policy(buf.str());
}

// --- solver adapter ---------------------------------------------------------

PolicySolver::PolicySolver(SoftmaxPolicy policy, std::uint64_t seed, std::size_t max_len)
    : policy_(std::move(policy)), seed_(seed), max_len_(max_len) {}

std::vector<Response> PolicySolver::sample(const Problem& problem, std::size_t n,
                                           std::span<const std::string> hint_prefix) {
  const auto prompt = make_prompt(problem, hint_prefix);
  const std::uint64_t base = hash_combine(hash_combine(seed_, fnv1a64(problem.id)), hint_prefix.size());
  std::vector<Response> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    SampleOptions opts;
    opts.max_len = max_len_;
    opts.seed = hash_combine(base, j);
    out.push_back(policy_sample(policy_, prompt, opts).response);
  }
  requests_ += n;
  return out;
}

}  // namespace ccl::toy
