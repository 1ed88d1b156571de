#pragma once

// Completion interface shared by HTTP endpoints and deterministic mock LLMs,
// plus the in-flight limiter, ordered batch execution and the JSON Lines
// transcript log used for replay and resumption.

#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prophet/error.hpp"
#include "prophet/prompt.hpp"
#include "prophet/util.hpp"
#include "prophet/voting.hpp"

namespace prophet {

struct CompletionRequest {
  std::string prompt;
  int max_tokens = 16;
  double temperature = 0.0;
  std::vector<std::string> stop_sequences{"\n", "==="};
  // Routing metadata; never sent over the wire.
  std::string sample_id;
  std::size_t query_index = 0;
  TaskFormat task_format = TaskFormat::standard;

  void validate() const {
    if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  }
};

struct CompletionResult {
  std::string raw_text;
  std::string parsed_answer;
  std::int64_t latency_ms = 0;
  std::string endpoint_id;
  int attempts = 1;
};

inline std::string_view truncate_at_stop(std::string_view text, std::span<const std::string> stops) {
  std::size_t cut = text.size();
  for (const auto& s : stops) {
    if (s.empty()) continue;
    cut = std::min(cut, text.find(s) == std::string_view::npos ? text.size() : text.find(s));
  }
  return text.substr(0, cut);
}

inline const std::vector<std::string>& default_stop_sequences() {
  static const std::vector<std::string> stops{"\n", "==="};
  return stops;
}

// First stop-truncated line, trimmed. Multiple-choice formats return the
// first "(X)" letter when one is present.
inline std::string parse_answer(std::string_view raw_text, TaskFormat format,
                                std::span<const std::string> stops = default_stop_sequences()) {
  const auto line = std::string(trim(truncate_at_stop(raw_text, stops)));
  if (line.empty()) throw GatewayError(GatewayError::Kind::empty_completion, "empty completion");
  if (has_choices(format)) {
    if (auto letter = parse_choice_letter(line)) return choice_letter(*letter);
  }
  return line;
}

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual std::string endpoint_id() const = 0;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Mock LLMs

namespace detail {

// Lines of the testing block: everything after the last completed
// "Answer: <x>" line.
inline std::vector<std::string_view> test_block_lines(std::string_view prompt, std::optional<std::string>* last_example_answer) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= prompt.size()) {
    auto nl = prompt.find('\n', pos);
    if (nl == std::string_view::npos) nl = prompt.size();
    lines.push_back(prompt.substr(pos, nl - pos));
    pos = nl + 1;
  }
  std::size_t start = 0;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    if (starts_with(lines[i], "Answer: ")) {
      start = i + 1;
      if (last_example_answer) *last_example_answer = std::string(lines[i].substr(8));
    }
  }
  return {lines.begin() + static_cast<std::ptrdiff_t>(start), lines.end()};
}

// Parses "Candidates: a(0.94), b c(0.79)" or the score-less "a, b c".
inline std::vector<std::string> parse_candidates_line(std::string_view line) {
  line.remove_prefix(std::string_view("Candidates: ").size());
  std::vector<std::string> out;
  std::size_t i = 0, item_start = 0;
  bool scored = false;
  while (i < line.size()) {
    if (line[i] == '(') {
      std::size_t j = i + 1;
      while (j < line.size() && ((line[j] >= '0' && line[j] <= '9') || line[j] == '.')) ++j;
      if (j > i + 1 && j < line.size() && line[j] == ')' &&
          (j + 1 == line.size() || line.substr(j + 1, 2) == ", ")) {
        out.emplace_back(line.substr(item_start, i - item_start));
        scored = true;
        i = j + 3;
        item_start = i;
        continue;
      }
    }
    ++i;
  }
  if (!scored) {
    std::size_t p = 0;
    while (p <= line.size()) {
      auto c = line.find(", ", p);
      if (c == std::string_view::npos) c = line.size();
      if (c > p) out.emplace_back(line.substr(p, c - p));
      p = c + 2;
    }
  }
  return out;
}

}  // namespace detail

struct ParsedTestBlock {
  std::vector<std::string> candidates;
  std::optional<std::string> nearest_example_answer;
};

inline ParsedTestBlock parse_test_block(std::string_view prompt) {
  ParsedTestBlock out;
  for (auto line : detail::test_block_lines(prompt, &out.nearest_example_answer)) {
    if (starts_with(line, "Candidates: ")) out.candidates = detail::parse_candidates_line(line);
  }
  return out;
}

struct MockPolicy {
  enum class Kind { echo_top1, candidate_oracle, scripted };
  Kind kind = Kind::echo_top1;
  // candidate_oracle: sample id -> hidden gold answer.
  std::unordered_map<std::string, std::string> gold;
  // scripted: sha256(prompt) -> reply.
  std::unordered_map<std::string, std::string> script;
  bool strict = true;
};

inline std::string_view to_string(MockPolicy::Kind k) {
  switch (k) {
    case MockPolicy::Kind::echo_top1: return "echo_top1";
    case MockPolicy::Kind::candidate_oracle: return "candidate_oracle";
    case MockPolicy::Kind::scripted: return "scripted";
  }
  return "?";
}

inline MockPolicy::Kind parse_mock_kind(std::string_view s) {
  for (auto k : {MockPolicy::Kind::echo_top1, MockPolicy::Kind::candidate_oracle, MockPolicy::Kind::scripted}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown mock policy '" + std::string(s) + "'");
}

// Pure function of the request; latency is reported as 0.
class MockClient final : public CompletionClient {
 public:
  explicit MockClient(MockPolicy policy) : policy_(std::move(policy)) {}

  std::string endpoint_id() const override { return "mock:" + std::string(to_string(policy_.kind)); }

  CompletionResult complete(const CompletionRequest& request) override {
    request.validate();
    CompletionResult r;
    r.endpoint_id = endpoint_id();
    r.raw_text = reply(request);
    r.parsed_answer = parse_answer(r.raw_text, request.task_format, request.stop_sequences);
    return r;
  }

  std::string reply(const CompletionRequest& request) const {
    switch (policy_.kind) {
      case MockPolicy::Kind::echo_top1:
        return " " + top1(parse_test_block(request.prompt)) + "\n";
      case MockPolicy::Kind::candidate_oracle: {
        const auto block = parse_test_block(request.prompt);
        auto it = policy_.gold.find(request.sample_id);
        if (it != policy_.gold.end()) {
          const auto gold = normalize_answer(it->second);
          for (const auto& c : block.candidates) {
            if (normalize_answer(c) == gold) return " " + c + "\n";
          }
        }
        return " " + top1(block) + "\n";
      }
      case MockPolicy::Kind::scripted: {
        auto it = policy_.script.find(sha256_hex(request.prompt));
        if (it != policy_.script.end()) return it->second;
        if (policy_.strict) {
          throw GatewayError(GatewayError::Kind::unknown_prompt, "scripted mock has no reply for this prompt");
        }
        return " " + top1(parse_test_block(request.prompt)) + "\n";
      }
    }
    return {};
  }

 private:
  // Without a Candidates line the mock copies the closest example's answer.
  static std::string top1(const ParsedTestBlock& block) {
    if (!block.candidates.empty()) return block.candidates.front();
    if (block.nearest_example_answer) return *block.nearest_example_answer;
    return "unknown";
  }

  MockPolicy policy_;
};

// ---------------------------------------------------------------------------
// Gateway: bounded concurrency over any client, ordered batch results.

struct BatchOutcome {
  std::optional<CompletionResult> result;
  std::string error;
  int exit_code = 0;
};

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<CompletionClient> client, std::size_t max_in_flight = 4)
      : client_(std::move(client)), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, max_in_flight))) {
    if (!client_) throw ConfigError("gateway needs a client");
  }

  CompletionResult complete(const CompletionRequest& request) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};
    return client_->complete(request);
  }

  // Runs every request on `workers` threads. Results come back in submission
  // order; `on_done` is called (serialized) as each request finishes.
  std::vector<BatchOutcome> complete_batch(const std::vector<CompletionRequest>& requests, std::size_t workers,
                                           const std::function<void(std::size_t, const BatchOutcome&)>& on_done = {}) {
    std::vector<BatchOutcome> out(requests.size());
    std::atomic<std::size_t> next{0};
    std::mutex done_mu;
    auto work = [&] {
      for (std::size_t i = next++; i < requests.size(); i = next++) {
        BatchOutcome o;
        try {
          o.result = complete(requests[i]);
        } catch (const Error& e) {
          o.error = e.what();
          o.exit_code = e.exit_code();
        } catch (const std::exception& e) {
          o.error = e.what();
          o.exit_code = 3;
        }
        std::lock_guard lock(done_mu);
        out[i] = std::move(o);
        if (on_done) on_done(i, out[i]);
      }
    };
    const auto n = std::max<std::size_t>(1, std::min(workers, requests.size()));
    if (n == 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
    }
    return out;
  }

  const CompletionClient& client() const { return *client_; }

 private:
  std::shared_ptr<CompletionClient> client_;
  std::counting_semaphore<> slots_;
};

// ---------------------------------------------------------------------------
// Transcript log (JSON Lines)

struct TranscriptRecord {
  std::string sample_id;
  std::size_t query_index = 0;
  std::string prompt_sha256;
  std::string raw_text;
  std::string parsed_answer;
  std::int64_t latency_ms = 0;

  bool operator==(const TranscriptRecord&) const = default;
};

using TranscriptKey = std::tuple<std::string, std::size_t, std::string>;

inline TranscriptKey key_of(const TranscriptRecord& r) { return {r.sample_id, r.query_index, r.prompt_sha256}; }

inline std::string transcript_line(const TranscriptRecord& r) {
  nlohmann::ordered_json j;
  j["sample_id"] = r.sample_id;
  j["query_index"] = r.query_index;
  j["prompt_sha256"] = r.prompt_sha256;
  j["raw_text"] = r.raw_text;
  j["parsed_answer"] = r.parsed_answer;
  j["latency_ms"] = r.latency_ms;
  return j.dump();
}

class TranscriptLog {
 public:
  explicit TranscriptLog(fs::path path) : path_(std::move(path)) {
    if (fs::exists(path_)) {
      std::ifstream in(path_);
      std::string line;
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
          const auto j = nlohmann::json::parse(line);
          TranscriptRecord r{j.at("sample_id").get<std::string>(),   j.at("query_index").get<std::size_t>(),
                             j.at("prompt_sha256").get<std::string>(), j.at("raw_text").get<std::string>(),
                             j.at("parsed_answer").get<std::string>(), j.at("latency_ms").get<std::int64_t>()};
          records_[key_of(r)] = std::move(r);
        } catch (const nlohmann::json::exception&) {
          ++skipped_;  // torn write from an interrupted run
        }
      }
      // A torn tail has no newline; the next append must not extend it.
      std::ifstream tail(path_, std::ios::binary | std::ios::ate);
      if (tail.tellg() > 0) {
        tail.seekg(-1, std::ios::end);
        needs_newline_ = tail.get() != '\n';
      }
    }
  }

  const TranscriptRecord* find(const TranscriptKey& key) const {
    auto it = records_.find(key);
    return it == records_.end() ? nullptr : &it->second;
  }

  void append(const TranscriptRecord& r) {
    std::lock_guard lock(mu_);
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    if (!out) throw ArtifactError("cannot append to transcript '" + path_.string() + "'");
    if (needs_newline_) out << '\n';
    needs_newline_ = false;
    out << transcript_line(r) << '\n';
    out.flush();
    records_[key_of(r)] = r;
  }

  std::size_t size() const { return records_.size(); }
  std::size_t skipped_lines() const { return skipped_; }

 private:
  fs::path path_;
  std::map<TranscriptKey, TranscriptRecord> records_;
  std::size_t skipped_ = 0;
  bool needs_newline_ = false;
  std::mutex mu_;
};

}  // namespace prophet
