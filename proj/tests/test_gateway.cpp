#include <gtest/gtest.h>

#include <atomic>
#include <random>

#include "prophet/gateway.hpp"
#include "prophet/gateway_http.hpp"
#include "prophet/scorer.hpp"
#include "test_support.hpp"

using namespace prophet;
using testing_support::slurp;
using testing_support::spit;
using testing_support::TempDir;

namespace {

// httplib server on an ephemeral port, stopped on destruction.
class TestServer {
 public:
  TestServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~TestServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

HttpEndpointConfig endpoint(const std::string& url) {
  HttpEndpointConfig cfg;
  cfg.url = url;
  cfg.model = "test-model";
  cfg.backoff_base_ms = 5;
  cfg.timeout_ms = 2000;
  return cfg;
}

GatewayError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const GatewayError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no GatewayError";
  return GatewayError::Kind::exhausted;
}

CompletionRequest request(std::string prompt, TaskFormat fmt = TaskFormat::standard) {
  CompletionRequest r;
  r.prompt = std::move(prompt);
  r.task_format = fmt;
  return r;
}

const std::string kPrompt =
    "Context: a black motorcycle parked in a parking lot.\n===\nQuestion: What sport can you use this for?\n===\n"
    "Candidates: race(0.53), motorcycle(0.41), motocross(0.19)\n===\nAnswer:";

}  // namespace

TEST(ParseAnswer, StopsAndFormats) {
  EXPECT_EQ(parse_answer(" helium\n===\nContext:", TaskFormat::standard), "helium");
  EXPECT_EQ(parse_answer("(B) lungs", TaskFormat::multiple_choice), "(B)");
  EXPECT_EQ(parse_answer("lungs", TaskFormat::multiple_choice), "lungs");
  EXPECT_EQ(parse_answer("(B) lungs", TaskFormat::standard), "(B) lungs");
  EXPECT_EQ(parse_answer("dirt bike===x", TaskFormat::standard), "dirt bike");
  EXPECT_EQ(kind_of([] { parse_answer("", TaskFormat::standard); }), GatewayError::Kind::empty_completion);
  EXPECT_EQ(kind_of([] { parse_answer("  \nrest", TaskFormat::standard); }), GatewayError::Kind::empty_completion);
}

TEST(Mock, EchoTop1ReadsTestBlockCandidates) {
  MockClient m({});
  const auto r = m.complete(request(kPrompt));
  EXPECT_EQ(r.parsed_answer, "race");
  EXPECT_EQ(r.latency_ms, 0);
  EXPECT_EQ(m.complete(request(kPrompt)).raw_text, r.raw_text);
  // Example blocks come before the test block and are ignored.
  const std::string two = "Candidates: kite(0.9), bird(0.1)\n===\nAnswer: kite\n===\n" + kPrompt;
  EXPECT_EQ(m.complete(request(two)).parsed_answer, "race");
  // Score-less candidates and multi-word answers.
  EXPECT_EQ(m.complete(request("Candidates: dirt bike, bmx\n===\nAnswer:")).parsed_answer, "dirt bike");
  // No candidates: copy the closest example's answer.
  EXPECT_EQ(m.complete(request("Question: q\n===\nAnswer: kite\n===\nQuestion: r\n===\nAnswer:")).parsed_answer, "kite");
}

TEST(Mock, CandidateOracle) {
  MockPolicy p;
  p.kind = MockPolicy::Kind::candidate_oracle;
  p.gold = {{"s1", "Motocross"}, {"s2", "scooter"}};
  MockClient m(p);
  auto r = request(kPrompt);
  r.sample_id = "s1";
  EXPECT_EQ(m.complete(r).parsed_answer, "motocross");
  r.sample_id = "s2";
  EXPECT_EQ(m.complete(r).parsed_answer, "race");
  r.sample_id = "unknown";
  EXPECT_EQ(m.complete(r).parsed_answer, "race");
}

TEST(Mock, ScriptedStrictAndLenient) {
  MockPolicy p;
  p.kind = MockPolicy::Kind::scripted;
  p.script = {{sha256_hex("p"), "helium\n"}};
  MockClient strict(p);
  EXPECT_EQ(strict.complete(request("p")).parsed_answer, "helium");
  EXPECT_EQ(kind_of([&] { strict.complete(request("q")); }), GatewayError::Kind::unknown_prompt);
  p.strict = false;
  MockClient lenient(p);
  EXPECT_EQ(lenient.complete(request(kPrompt)).parsed_answer, "race");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Mock, RequestValidation) {
  MockClient m({});
  auto r = request(kPrompt);
  r.temperature = -1;
  EXPECT_THROW(m.complete(r), ConfigError);
  r.temperature = 0;
  r.max_tokens = 0;
  EXPECT_THROW(m.complete(r), ConfigError);
}

namespace {

// Echoes the prompt with a random delay and records peak concurrency.
class SlowClient final : public CompletionClient {
 public:
  std::string endpoint_id() const override { return "slow"; }
  CompletionResult complete(const CompletionRequest& r) override {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    thread_local std::mt19937 g(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    std::this_thread::sleep_for(std::chrono::milliseconds(g() % 5));
    --in_flight;
    if (r.prompt == "boom") throw GatewayError(GatewayError::Kind::rejected, "boom");
    return {r.prompt, r.prompt, 0, "slow", 1};
  }
  std::atomic<int> in_flight{0}, peak{0};
};

}  // namespace

TEST(Gateway, BatchKeepsSubmissionOrderAndBoundsConcurrency) {
  auto client = std::make_shared<SlowClient>();
  Gateway gw(client, 3);
  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 60; ++i) reqs.push_back(request(i == 17 ? "boom" : "p" + std::to_string(i)));
  std::vector<std::size_t> done;
  const auto out = gw.complete_batch(reqs, 8, [&](std::size_t i, const BatchOutcome&) { done.push_back(i); });
  ASSERT_EQ(out.size(), 60u);
  for (int i = 0; i < 60; ++i) {
    if (i == 17) {
      EXPECT_FALSE(out[i].result.has_value());
      EXPECT_EQ(out[i].exit_code, 3);
    } else {
      ASSERT_TRUE(out[i].result.has_value());
      EXPECT_EQ(out[i].result->parsed_answer, "p" + std::to_string(i));
    }
  }
  EXPECT_EQ(done.size(), 60u);
  EXPECT_LE(client->peak.load(), 3);
  EXPECT_GE(client->peak.load(), 2);
  EXPECT_THROW(Gateway(nullptr), ConfigError);
}

TEST(Transcript, AppendReloadAndTornLine) {
  TempDir dir;
  const auto path = dir / "t.jsonl";
  {
    TranscriptLog log(path);
    log.append({"s1", 0, "h1", " race\n", "race", 12});
    log.append({"s1", 1, "h2", "bike", "bike", 3});
  }
  auto text = slurp(path);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            R"({"sample_id":"s1","query_index":0,"prompt_sha256":"h1","raw_text":" race\n","parsed_answer":"race","latency_ms":12})");
  spit(path, text + R"({"sample_id":"s2","query_i)");
  TranscriptLog reloaded(path);
  EXPECT_EQ(reloaded.size(), 2u);
  EXPECT_EQ(reloaded.skipped_lines(), 1u);
  ASSERT_NE(reloaded.find({"s1", 0, "h1"}), nullptr);
  EXPECT_EQ(reloaded.find({"s1", 0, "h1"})->raw_text, " race\n");
  EXPECT_EQ(reloaded.find({"s1", 0, "other-hash"}), nullptr);
}

TEST(Http, RetriesTransientStatusThenSucceeds) {
  TestServer srv;
  std::atomic<int> calls{0};
  nlohmann::json last_body;
  srv.server().Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = nlohmann::json::parse(req.body);
    if (++calls <= 2) {
      res.status = 429;
      return;
    }
    res.set_content(R"({"choices":[{"text":"leash\n"}]})", "application/json");
  });
  HttpCompletionClient client(endpoint(srv.url("/v1/completions")));
  const auto r = client.complete(request("What does the dog wear?"));
  EXPECT_EQ(r.parsed_answer, "leash");
  EXPECT_EQ(r.raw_text, "leash\n");
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(last_body["model"], "test-model");
  EXPECT_EQ(last_body["prompt"], "What does the dog wear?");
  EXPECT_EQ(last_body["max_tokens"], 16);
  EXPECT_EQ(last_body["temperature"], 0.0);
  EXPECT_EQ(last_body["stop"], nlohmann::json::parse(R"(["\n", "==="])"));
  EXPECT_FALSE(last_body.contains("sample_id"));
}

TEST(Http, NonRetryableErrorsSurfaceImmediately) {
  TestServer srv;
  std::atomic<int> calls{0};
  srv.server().Post("/auth", [&](const httplib::Request&, httplib::Response& res) { ++calls, res.status = 401; });
  srv.server().Post("/bad", [&](const httplib::Request&, httplib::Response& res) { ++calls, res.status = 400; });
  srv.server().Post("/junk", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.set_content(R"({"nope": 1})", "application/json");
  });
  srv.server().Post("/down", [&](const httplib::Request&, httplib::Response& res) { ++calls, res.status = 503; });
  EXPECT_EQ(kind_of([&] { HttpCompletionClient(endpoint(srv.url("/auth"))).complete(request("x")); }), GatewayError::Kind::auth);
  EXPECT_EQ(calls.exchange(0), 1);
  EXPECT_EQ(kind_of([&] { HttpCompletionClient(endpoint(srv.url("/bad"))).complete(request("x")); }), GatewayError::Kind::rejected);
  EXPECT_EQ(calls.exchange(0), 1);
  EXPECT_EQ(kind_of([&] { HttpCompletionClient(endpoint(srv.url("/junk"))).complete(request("x")); }), GatewayError::Kind::malformed);
  EXPECT_EQ(calls.exchange(0), 1);
  auto cfg = endpoint(srv.url("/down"));
  cfg.retries = 3;
  EXPECT_EQ(kind_of([&] { HttpCompletionClient(cfg).complete(request("x")); }), GatewayError::Kind::exhausted);
  EXPECT_EQ(calls.exchange(0), 3);
}

TEST(Http, SendsBearerKeyFromEnvironment) {
  TestServer srv;
  std::string auth;
  srv.server().Post("/c", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"text":" (B) lungs"}]})", "application/json");
  });
  ::setenv("PROPHET_TEST_KEY", "sekrit", 1);
  auto cfg = endpoint(srv.url("/c"));
  cfg.api_key_env = "PROPHET_TEST_KEY";
  HttpCompletionClient client(cfg);
  EXPECT_EQ(client.complete(request("x", TaskFormat::multiple_choice)).parsed_answer, "(B)");
  EXPECT_EQ(auth, "Bearer sekrit");
  ::unsetenv("PROPHET_TEST_KEY");
}

TEST(Http, UnreachableEndpointExhaustsRetries) {
  int port;
  {
    httplib::Server tmp;
    port = tmp.bind_to_any_port("127.0.0.1");
  }
  auto cfg = endpoint("http://127.0.0.1:" + std::to_string(port) + "/v1");
  cfg.retries = 2;
  cfg.timeout_ms = 200;
  EXPECT_EQ(kind_of([&] { HttpCompletionClient(cfg).complete(request("x")); }), GatewayError::Kind::exhausted);
  EXPECT_THROW(parse_url("no-scheme"), ConfigError);
  EXPECT_EQ(parse_url("https://h:1/a/b").path, "/a/b");
  EXPECT_EQ(parse_url("https://h:1").origin, "https://h:1");
}

TEST(HttpScorer, DrivesBeamSearchLikeTheLocalTable) {
  // The remote scorer serves the same table as a local TableScorer; beam
  // search must not be able to tell them apart.
  const auto table = nlohmann::json::parse(R"({
    "vocab": ["[BOS]", "[EOS]", "dirt", "bike", "bmx"],
    "default": {"[EOS]": 1.0},
    "prefixes": {
      "[BOS]": {"dirt": 0.5, "bmx": 0.3, "bike": 0.2},
      "[BOS] dirt": {"bike": 0.9, "[EOS]": 0.1},
      "[BOS] bmx": {"[EOS]": 0.8, "bike": 0.2}
    }
  })");
  const auto local = table_scorer_from_json(table);
  TestServer srv;
  std::atomic<int> calls{0};
  srv.server().Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    const auto prefix = nlohmann::json::parse(req.body).at("prefix").get<std::vector<std::string>>();
    std::vector<std::size_t> ids;
    for (const auto& t : prefix) ids.push_back(*local.vocabulary().find(t));
    res.set_content(nlohmann::json{{"probs", local.next_distribution(ids)}}.dump(), "application/json");
  });
  HttpScorer remote(srv.url("/score"), local.vocabulary());
  const auto a = beam_search(local, 3, 4), b = beam_search(remote, 3, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].candidate.answer, b[i].candidate.answer);
    EXPECT_EQ(a[i].log_score, b[i].log_score);
  }
  EXPECT_EQ(a[0].candidate.answer, "dirt bike");
  EXPECT_GT(calls.load(), 0);

  srv.server().Post("/bad", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"probs": [0.5, 0.1]})", "application/json");
  });
  HttpScorer short_probs(srv.url("/bad"), local.vocabulary());
  EXPECT_THROW(beam_search(short_probs, 2, 2), InvariantError);
  srv.server().Post("/garbage", [](const httplib::Request&, httplib::Response& res) { res.set_content("{", "text/plain"); });
  HttpScorer garbage(srv.url("/garbage"), local.vocabulary());
  EXPECT_EQ(kind_of([&] { beam_search(garbage, 2, 2); }), GatewayError::Kind::malformed);
}
