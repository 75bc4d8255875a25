#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "ccl/error.hpp"
#include "ccl/sampler.hpp"
#include "helpers.hpp"

using namespace ccl;
using namespace ccl::sampler;
using testing::make_problem;

namespace {

Problem with_difficulty(double d, std::size_t k = 4, const std::string& id = "p") {
  std::vector<std::string> steps;
  for (std::size_t i = 0; i < k; ++i) steps.push_back("s" + std::to_string(i));
  auto p = make_problem(id, steps, "12");
  p.source_tags["difficulty"] = d;
  return p;
}

double success_rate(SimulatedSolver& solver, const Problem& p, std::size_t hint, std::size_t n) {
  std::span<const std::string> h(p.solution_steps.data(), hint);
  return probe_accuracy(solver, p, h, n).value();
}

// Chat-completions stub on a random local port.
class StubServer {
 public:
  explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int hits() const { return hits_.load(); }
  std::string last_body() const { return last_body_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::string last_body_, last_auth_;
};

std::string reply(const std::string& content, const std::string& finish = "stop") {
  return Json{{"choices", Json::array({{{"index", 0},
                                        {"message", {{"role", "assistant"}, {"content", content}}},
                                        {"finish_reason", finish}}})}}
      .dump();
}

EndpointConfig endpoint(const std::string& url) {
  EndpointConfig cfg;
  cfg.base_url = url;
  cfg.model_name = "stub";
  cfg.api_key_env = "";
  cfg.backoff = std::chrono::milliseconds(1);
  cfg.request_timeout = std::chrono::milliseconds(2000);
  return cfg;
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("even odds at skill equal to difficulty") {
    SimulatedSolver solver({0.0, 4.0, 123});
    const double rate = success_rate(solver, with_difficulty(0.0), 0, 10000);
    CHECK(std::abs(rate - 0.5) <= 0.02);
    CHECK(solver.success_probability(with_difficulty(0.0), 0) == 0.5);
  }

  TEST_CASE("full hint fraction beats no hint") {
    SimulatedSolver solver({0.0, 4.0, 123});
    const auto p = with_difficulty(0.0, 4);
    // largest proper prefix: 3 of 4 steps
    CHECK(success_rate(solver, p, 3, 10000) > success_rate(solver, p, 0, 10000));
    CHECK(solver.success_probability(p, 4) > solver.success_probability(p, 0));
  }

  TEST_CASE("saturated probes") {
    SimulatedSolver strong({100.0, 4.0, 1});
    CHECK(probe_accuracy(strong, with_difficulty(1.0), {}, 8) == Accuracy{8, 8});
    SimulatedSolver weak({-100.0, 4.0, 1});
    CHECK(probe_accuracy(weak, with_difficulty(1.0), {}, 8) == Accuracy{0, 8});
  }

  TEST_CASE("seeded probes reproduce exactly") {
    const auto p = with_difficulty(0.3);
    SimulatedSolver a({0.0, 4.0, 77}), b({0.0, 4.0, 77});
    const auto first = probe_accuracy(a, p, {}, 64);
    CHECK(first.correct == probe_accuracy(b, p, {}, 64).correct);
    CHECK(a.sample(p, 16, {}) == b.sample(p, 16, {}));
    SimulatedSolver other({0.0, 4.0, 78});
    CHECK(other.sample(p, 64, {}) != a.sample(p, 64, {}));
  }

  TEST_CASE("monotone in hint fraction and skill") {
    const auto p = with_difficulty(3.0, 6);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      double prev = -1;
      for (std::size_t hint = 0; hint < 6; ++hint) {
        SimulatedSolver s({0.0, 4.0, seed});
        const double r = success_rate(s, p, hint, 2000);
        CHECK(r >= prev);
        prev = r;
      }
      prev = -1;
      for (double skill : {-2.0, 0.0, 1.0, 3.0, 6.0}) {
        SimulatedSolver s({skill, 4.0, seed});
        const double r = success_rate(s, p, 0, 2000);
        CHECK(r >= prev);
        prev = r;
      }
    }
  }

  TEST_CASE("difficulty falls back to step count") {
    auto p = make_problem("x", {"a", "b", "c"}, "1");
    CHECK(problem_difficulty(p) == 3.0);
    p.source_tags["difficulty"] = "1.5";
    CHECK(problem_difficulty(p) == 1.5);
  }

  TEST_CASE("simulated responses go through the grader") {
    SimulatedSolver solver({0.0, 4.0, 5});
    auto rs = sample_responses(solver, with_difficulty(0.0), 50, {});
    CHECK(rs.size() == 50);
    for (auto& r : rs) {
      CHECK(r.text.find("<answer>") != std::string::npos);
      CHECK(r.finish_reason == FinishReason::stop);
    }
    CHECK(solver.requests_issued() == 50);
  }

  TEST_CASE("request accounting sums n per problem") {
    SimulatedSolver solver({0.0, 4.0, 5});
    std::uint64_t expected = 0;
    for (int i = 0; i < 10; ++i) {
      const std::size_t n = 1 + i;
      sample_responses(solver, with_difficulty(1.0, 3, "p" + std::to_string(i)), n, {});
      expected += n;
    }
    CHECK(solver.requests_issued() == expected);
  }

  TEST_CASE("hint must be a proper prefix") {
    SimulatedSolver solver({0.0, 4.0, 5});
    auto p = with_difficulty(1.0, 2);
    const std::vector<std::string> wrong = {"nope"};
    CHECK_THROWS_AS(sample_responses(solver, p, 1, wrong), ValidationError);
    CHECK_THROWS_AS(sample_responses(solver, p, 1, p.solution_steps), ValidationError);
    CHECK_THROWS_AS(sample_responses(solver, p, 0, {}), ValidationError);
  }

  TEST_CASE("endpoint config validation") {
    auto cfg = endpoint("http://127.0.0.1:1");
    CHECK_NOTHROW(cfg.validate());
    cfg.top_p = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = endpoint("http://127.0.0.1:1");
    cfg.temperature = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = endpoint("");
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }

  TEST_CASE("request body follows the chat-completions schema") {
    auto cfg = endpoint("http://x/v1");
    const std::vector<std::string> hint = {"s0"};
    auto body = chat_request_body(cfg, with_difficulty(1.0), hint);
    CHECK(body["model"] == "stub");
    CHECK(body["n"] == 1);
    CHECK(body["temperature"] == 0.7);
    CHECK(body["top_p"] == 0.95);
    CHECK(body["max_tokens"] == 1024);
    CHECK(body["messages"].size() == 2);
    CHECK(body["messages"][1]["content"].get<std::string>().find("s0") != std::string::npos);
  }

  TEST_CASE("temperature zero returns the stub reply verbatim") {
    const std::string text = "<think>4 = 2+2</think><answer>4</answer>";
    StubServer stub([&](const httplib::Request&, httplib::Response& res) { res.set_content(reply(text), "application/json"); });
    auto cfg = endpoint(stub.url());
    cfg.temperature = 0.0;
    cfg.api_key = "secret";
    EndpointSolver solver(cfg);
    auto rs = sample_responses(solver, with_difficulty(1.0), 1, {});
    REQUIRE(rs.size() == 1);
    CHECK(rs[0].text == text);
    CHECK(rs[0].finish_reason == FinishReason::stop);
    CHECK(stub.last_auth() == "Bearer secret");
    CHECK(Json::parse(stub.last_body())["temperature"] == 0.0);

    // greedy decoding: one request serves every draw
    auto many = sample_responses(solver, with_difficulty(1.0), 5, {});
    CHECK(many.size() == 5);
    for (auto& r : many) CHECK(r.text == text);
    CHECK(stub.hits() == 2);
  }

  TEST_CASE("all draws arrive, keyed by draw index") {
    std::atomic<int> counter{0};
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
      const int k = counter++;
      std::this_thread::sleep_for(std::chrono::milliseconds((k * 7) % 11));
      res.set_content(reply("<answer>" + std::to_string(k) + "</answer>", k % 3 == 0 ? "length" : "stop"),
                      "application/json");
    });
    auto cfg = endpoint(stub.url());
    cfg.max_concurrent = 4;
    EndpointSolver solver(cfg);
    auto rs = sample_responses(solver, with_difficulty(1.0), 16, {});
    CHECK(rs.size() == 16);
    std::set<std::string> texts;
    for (auto& r : rs) texts.insert(r.text);
    CHECK(texts.size() == 16);
    CHECK(solver.requests_issued() == 16);
  }

  TEST_CASE("client errors mark the draw and are not retried") {
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content("{\"error\":\"bad\"}", "application/json");
    });
    EndpointSolver solver(endpoint(stub.url()));
    auto rs = sample_responses(solver, with_difficulty(1.0), 3, {});
    for (auto& r : rs) CHECK(r.finish_reason == FinishReason::error);
    CHECK(stub.hits() == 3);
    CHECK(probe_accuracy(solver, with_difficulty(1.0), {}, 2).correct == 0);
  }

  TEST_CASE("server errors are retried") {
    std::atomic<int> calls{0};
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
      if (calls++ % 2 == 0) {
        res.status = 503;
        return;
      }
      res.set_content(reply("<answer>12</answer>"), "application/json");
    });
    auto cfg = endpoint(stub.url());
    cfg.max_concurrent = 1;
    EndpointSolver solver(cfg);
    auto acc = probe_accuracy(solver, with_difficulty(1.0), {}, 3);
    CHECK(acc == Accuracy{3, 3});
    CHECK(stub.hits() == 6);
  }

  TEST_CASE("unreachable endpoint is a transport error") {
    // bind then release a port so nothing listens on it
    int port = 0;
    {
      httplib::Server s;
      port = s.bind_to_any_port("127.0.0.1");
    }
    auto cfg = endpoint("http://127.0.0.1:" + std::to_string(port) + "/v1");
    cfg.max_attempts = 2;
    EndpointSolver solver(cfg);
    try {
      sample_responses(solver, with_difficulty(1.0), 4, {});
      FAIL("expected a transport error");
    } catch (const TransportError& e) {
      CHECK(e.completed == 0);
      CHECK(e.kind() == ErrorKind::transport);
    }
  }

  TEST_CASE("malformed reply marks the draw as an error") {
    StubServer stub([&](const httplib::Request&, httplib::Response& res) { res.set_content("{}", "application/json"); });
    EndpointSolver solver(endpoint(stub.url()));
    auto rs = sample_responses(solver, with_difficulty(1.0), 2, {});
    for (auto& r : rs) CHECK(r.finish_reason == FinishReason::error);
  }
}
