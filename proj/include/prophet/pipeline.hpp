#pragma once

// End-to-end runs: stage-1 candidates and example selection, prompt
// assembly, T completions per testing sample through the gateway (reusing
// any transcript already on disk), voting and evaluation. Replay is the same
// path with no client: every answer must come from the transcript.

#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "prophet/artifact_store.hpp"
#include "prophet/evaluator.hpp"
#include "prophet/fixtures.hpp"
#include "prophet/gateway.hpp"
#include "prophet/gateway_http.hpp"
#include "prophet/heuristics.hpp"
#include "prophet/prompt.hpp"
#include "prophet/voting.hpp"

namespace prophet {

struct RunConfig {
  fs::path manifest;
  PromptConfig prompt;
  SelectionStrategy strategy = SelectionStrategy::fused;
  std::optional<std::uint64_t> seed;
  fs::path out_dir = "run";
  std::string llm = "mock";  // mock | http
  MockPolicy::Kind mock = MockPolicy::Kind::echo_top1;
  std::optional<fs::path> mock_script;  // scripted mock: JSON object sha256 -> reply
  std::optional<fs::path> gold_ledger;  // candidate_oracle gold; defaults to modal answers
  HttpEndpointConfig http;
  std::size_t workers = 1;
  SoftMetric metric = SoftMetric::simple;
  double tau = 1.0;
  bool vote_normalized = true;
  std::vector<std::size_t> hit_ks{1, 5, 10};
  std::optional<std::size_t> limit;  // only the first `limit` testing samples
  int max_tokens = 16;

  void validate() const {
    prompt.validate();
    if (strategy == SelectionStrategy::rand && !seed) throw ConfigError("strategy 'rand' requires a seed");
    if (llm != "mock" && llm != "http") throw ConfigError("llm must be 'mock' or 'http'");
    if (llm == "http" && http.url.empty()) throw ConfigError("llm=http needs an endpoint url");
    if (mock == MockPolicy::Kind::scripted && llm == "mock" && !mock_script) {
      throw ConfigError("scripted mock needs mock_script");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (hit_ks.empty()) throw ConfigError("hit_ks must not be empty");
    for (auto k : hit_ks) {
      if (k < 1) throw ConfigError("hit_ks entries must be >= 1");
    }
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  }
};

inline ordered_json run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["manifest"] = fs::absolute(c.manifest).lexically_normal().string();
  j["task_format"] = to_string(c.prompt.task_format);
  j["K"] = c.prompt.K;
  j["N"] = c.prompt.N;
  j["T"] = c.prompt.T;
  j["include_head"] = c.prompt.include_head;
  j["include_scores"] = c.prompt.include_scores;
  j["include_caption"] = c.prompt.include_caption;
  j["include_tags"] = c.prompt.include_tags;
  j["score_decimals"] = c.prompt.score_decimals;
  j["max_prompt_chars"] = c.prompt.max_prompt_chars ? ordered_json(*c.prompt.max_prompt_chars) : ordered_json(nullptr);
  j["order"] = c.prompt.order == ExampleOrder::ascending_similarity ? "ascending" : "descending";
  j["strategy"] = to_string(c.strategy);
  j["seed"] = c.seed ? ordered_json(*c.seed) : ordered_json(nullptr);
  j["llm"] = c.llm;
  j["mock"] = to_string(c.mock);
  j["mock_script"] = c.mock_script ? ordered_json(fs::absolute(*c.mock_script).string()) : ordered_json(nullptr);
  j["gold_ledger"] = c.gold_ledger ? ordered_json(fs::absolute(*c.gold_ledger).string()) : ordered_json(nullptr);
  j["endpoint"] = {{"url", c.http.url},
                   {"model", c.http.model},
                   {"api_key_env", c.http.api_key_env},
                   {"max_in_flight", c.http.max_in_flight},
                   {"retries", c.http.retries},
                   {"backoff_base_ms", c.http.backoff_base_ms},
                   {"timeout_ms", c.http.timeout_ms},
                   {"min_interval_ms", c.http.min_interval_ms}};
  j["workers"] = c.workers;
  j["metric"] = to_string(c.metric);
  j["tau"] = c.tau;
  j["vote"] = c.vote_normalized ? "normalized" : "raw";
  j["hit_ks"] = c.hit_ks;
  j["limit"] = c.limit ? ordered_json(*c.limit) : ordered_json(nullptr);
  j["max_tokens"] = c.max_tokens;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& out_dir) {
  RunConfig c;
  try {
    c.manifest = j.at("manifest").get<std::string>();
    c.prompt.task_format = parse_task_format(j.at("task_format").get<std::string>());
    c.prompt.K = j.at("K").get<std::size_t>();
    c.prompt.N = j.at("N").get<std::size_t>();
    c.prompt.T = j.at("T").get<std::size_t>();
    c.prompt.include_head = j.at("include_head").get<bool>();
    c.prompt.include_scores = j.at("include_scores").get<bool>();
    c.prompt.include_caption = j.at("include_caption").get<bool>();
    c.prompt.include_tags = j.at("include_tags").get<bool>();
    c.prompt.score_decimals = j.at("score_decimals").get<int>();
    if (!j.at("max_prompt_chars").is_null()) c.prompt.max_prompt_chars = j.at("max_prompt_chars").get<std::size_t>();
    c.prompt.order = j.at("order").get<std::string>() == "ascending" ? ExampleOrder::ascending_similarity
                                                                      : ExampleOrder::descending_similarity;
    c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (!j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    c.llm = j.at("llm").get<std::string>();
    c.mock = parse_mock_kind(j.at("mock").get<std::string>());
    if (!j.at("mock_script").is_null()) c.mock_script = j.at("mock_script").get<std::string>();
    if (!j.at("gold_ledger").is_null()) c.gold_ledger = j.at("gold_ledger").get<std::string>();
    const auto& e = j.at("endpoint");
    c.http.url = e.at("url").get<std::string>();
    c.http.model = e.at("model").get<std::string>();
    c.http.api_key_env = e.at("api_key_env").get<std::string>();
    c.http.max_in_flight = e.at("max_in_flight").get<std::size_t>();
    c.http.retries = e.at("retries").get<int>();
    c.http.backoff_base_ms = e.at("backoff_base_ms").get<int>();
    c.http.timeout_ms = e.at("timeout_ms").get<int>();
    c.http.min_interval_ms = e.at("min_interval_ms").get<int>();
    c.workers = j.at("workers").get<std::size_t>();
    c.metric = parse_metric(j.at("metric").get<std::string>());
    c.tau = j.at("tau").get<double>();
    c.vote_normalized = j.at("vote").get<std::string>() == "normalized";
    c.hit_ks = j.at("hit_ks").get<std::vector<std::size_t>>();
    if (!j.at("limit").is_null()) c.limit = j.at("limit").get<std::size_t>();
    c.max_tokens = j.at("max_tokens").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config snapshot: ") + ex.what());
  }
  c.out_dir = out_dir;
  return c;
}

// ---------------------------------------------------------------------------
// Stage 1

// Candidates for `ids`, at most k_max each: from the manifest's stored table
// or top-k over the answer_logits bank.
inline CandidateTable stage1_candidates(const Dataset& ds, std::size_t k_max, const std::vector<std::string>& ids) {
  CandidateTable table(k_max);
  const auto* stored = ds.precomputed_candidates();
  const auto* logits = ds.bank(BankKind::answer_logits);
  if (!stored && !logits) throw ConfigError("no candidate source: manifest has neither candidates nor answer_logits");
  for (const auto& id : ids) {
    if (stored) {
      const auto& c = stored->at(id);
      table.set(id, {c.begin(), c.begin() + static_cast<std::ptrdiff_t>(std::min(k_max, c.size()))});
    } else {
      table.set(id, top_k_candidates(logits->row(id), ds.vocab(), std::min(k_max, ds.vocab().size())));
    }
  }
  return table;
}

struct PreparedSample {
  std::string id;
  ExampleSelection selection;
  PromptBundle bundle;
  std::vector<std::string> prompt_sha;
  std::vector<std::string> example_ids;  // distinct, in prompt order
};

struct Prepared {
  CandidateTable candidates;
  std::vector<PreparedSample> samples;
};

inline std::vector<std::string> run_test_ids(const Dataset& ds, const RunConfig& cfg) {
  auto ids = ds.test_ids();
  if (cfg.limit && *cfg.limit < ids.size()) ids.resize(*cfg.limit);
  return ids;
}

inline std::size_t candidate_depth(const RunConfig& cfg) {
  return std::max(cfg.prompt.K, *std::max_element(cfg.hit_ks.begin(), cfg.hit_ks.end()));
}

inline Prepared prepare(const Dataset& ds, const RunConfig& cfg) {
  cfg.validate();
  const auto test_ids = run_test_ids(ds, cfg);
  const auto n_examples = cfg.prompt.N * cfg.prompt.T;

  std::vector<ExampleSelection> selections;
  std::vector<std::string> needed = test_ids;
  std::set<std::string> seen(test_ids.begin(), test_ids.end());
  for (const auto& id : test_ids) {
    selections.push_back(combined_knn(ds, id, cfg.strategy, n_examples, cfg.seed));
    for (const auto& n : selections.back().neighbor_ids) {
      if (seen.insert(n).second) needed.push_back(n);
    }
  }
  Prepared p{stage1_candidates(ds, candidate_depth(cfg), needed), {}};

  ExampleLookup lookup{[&](const std::string& id) -> const Sample& { return ds.sample(id); },
                       [&](const std::string& id) { return p.candidates.at(id); }};
  for (std::size_t i = 0; i < test_ids.size(); ++i) {
    PreparedSample ps;
    ps.id = test_ids[i];
    ps.selection = std::move(selections[i]);
    ps.bundle = build_prompts(ds.sample(ps.id), p.candidates.at(ps.id), ps.selection, lookup, cfg.prompt);
    std::set<std::string> ex_seen;
    for (std::size_t q = 0; q < ps.bundle.prompts.size(); ++q) {
      ps.prompt_sha.push_back(sha256_hex(ps.bundle.prompts[q]));
      for (const auto& e : ps.bundle.example_ids_per_prompt[q]) {
        if (ex_seen.insert(e).second) ps.example_ids.push_back(e);
      }
    }
    p.samples.push_back(std::move(ps));
  }
  return p;
}

inline void dump_prompts(const Prepared& p, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& s : p.samples) {
    for (std::size_t q = 0; q < s.bundle.prompts.size(); ++q) {
      detail::write_file(dir / (s.id + "_q" + std::to_string(q) + ".txt"), s.bundle.prompts[q]);
    }
  }
}

inline ordered_json selections_to_json(const Prepared& p) {
  ordered_json j = ordered_json::array();
  for (const auto& s : p.samples) {
    j.push_back({{"id", s.id}, {"neighbors", s.selection.neighbor_ids}, {"similarities", s.selection.similarities}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Clients

inline std::shared_ptr<CompletionClient> make_client(const Dataset& ds, const RunConfig& cfg) {
  if (cfg.llm == "http") return std::make_shared<HttpCompletionClient>(cfg.http);
  MockPolicy policy;
  policy.kind = cfg.mock;
  if (cfg.mock == MockPolicy::Kind::candidate_oracle) {
    if (cfg.gold_ledger) {
      policy.gold = load_fixture_gold(*cfg.gold_ledger);
    } else {
      for (const auto& id : ds.test_ids()) policy.gold.emplace(id, modal_answer(ds.sample(id).answers));
    }
  }
  if (cfg.mock == MockPolicy::Kind::scripted) {
    try {
      const auto j = nlohmann::json::parse(detail::read_file_text(*cfg.mock_script));
      for (const auto& [sha, reply] : j.items()) policy.script.emplace(sha, reply.get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(cfg.mock_script->string() + ": " + ex.what());
    }
  }
  return std::make_shared<MockClient>(std::move(policy));
}

// ---------------------------------------------------------------------------
// Run / replay

struct RunResult {
  EvalReport report;
  std::vector<VoteRecord> votes;
  std::size_t reused_queries = 0;
  std::size_t new_queries = 0;
  std::size_t failed_queries = 0;
  std::vector<std::string> errors;

  int exit_code() const {
    if (!report.invariant_violations.empty()) return 2;
    if (report.n_failed > 0) return 3;
    return 0;
  }
};

inline ordered_json vote_to_json(const VoteRecord& v) {
  ordered_json j;
  j["sample_id"] = v.sample_id;
  j["per_query"] = ordered_json::array();
  for (const auto& q : v.per_query) {
    j["per_query"].push_back(
        {{"query_index", q.query_index}, {"parsed_answer", q.parsed_answer}, {"normalized_answer", q.normalized_answer}});
  }
  j["final_answer"] = v.final_answer;
  j["tie_broken"] = v.tie_broken;
  return j;
}

inline std::string transcript_path_name() { return "transcripts.jsonl"; }

// Runs (client != nullptr) or replays (client == nullptr) the configured
// experiment. Artifacts land in cfg.out_dir; when `write_artifacts` is false
// nothing is written except new transcript records.
inline RunResult execute(const Dataset& ds, const RunConfig& cfg, std::shared_ptr<CompletionClient> client,
                         bool write_artifacts = true) {
  const auto prepared = prepare(ds, cfg);
  const auto& out = cfg.out_dir;
  if (write_artifacts) {
    fs::create_directories(out);
    detail::write_file(out / "config.json", run_config_to_json(cfg).dump(2) + "\n");
    write_candidate_table(out / "candidates.json", prepared.candidates);
    detail::write_file(out / "selections.json", selections_to_json(prepared).dump(1) + "\n");
  }
  TranscriptLog log(out / transcript_path_name());
  RunResult result;

  // answers[sample][query]
  std::vector<std::vector<std::optional<std::string>>> answers(prepared.samples.size());
  std::vector<CompletionRequest> pending;
  std::vector<std::pair<std::size_t, std::size_t>> pending_slot;
  for (std::size_t i = 0; i < prepared.samples.size(); ++i) {
    const auto& s = prepared.samples[i];
    answers[i].resize(s.bundle.prompts.size());
    for (std::size_t q = 0; q < s.bundle.prompts.size(); ++q) {
      if (const auto* rec = log.find({s.id, q, s.prompt_sha[q]})) {
        answers[i][q] = rec->parsed_answer;
        ++result.reused_queries;
        continue;
      }
      if (!client) continue;
      CompletionRequest req;
      req.prompt = s.bundle.prompts[q];
      req.max_tokens = cfg.max_tokens;
      req.sample_id = s.id;
      req.query_index = q;
      req.task_format = cfg.prompt.task_format;
      pending.push_back(std::move(req));
      pending_slot.emplace_back(i, q);
    }
  }

  if (client && !pending.empty()) {
    Gateway gateway(client, cfg.llm == "http" ? cfg.http.max_in_flight : cfg.workers);
    gateway.complete_batch(pending, cfg.workers, [&](std::size_t k, const BatchOutcome& o) {
      const auto [i, q] = pending_slot[k];
      const auto& s = prepared.samples[i];
      if (!o.result) {
        ++result.failed_queries;
        result.errors.push_back(s.id + " q" + std::to_string(q) + ": " + o.error);
        return;
      }
      TranscriptRecord rec{s.id, q, s.prompt_sha[q], o.result->raw_text, o.result->parsed_answer, o.result->latency_ms};
      log.append(rec);
      answers[i][q] = o.result->parsed_answer;
      ++result.new_queries;
    });
  }

  std::vector<SampleOutcome> outcomes;
  for (std::size_t i = 0; i < prepared.samples.size(); ++i) {
    const auto& s = prepared.samples[i];
    const Sample& sample = ds.sample(s.id);
    const auto& cands = prepared.candidates.at(s.id);
    SampleOutcome o{s.id, cands, s.example_ids, std::nullopt};
    const bool complete = std::all_of(answers[i].begin(), answers[i].end(), [](const auto& a) { return a.has_value(); });
    if (complete) {
      VoteRecord v;
      v.sample_id = s.id;
      std::vector<std::string> ballots;
      for (std::size_t q = 0; q < answers[i].size(); ++q) {
        std::string answer = *answers[i][q];
        if (has_choices(cfg.prompt.task_format)) {
          if (!sample.choices) throw ConfigError("sample '" + s.id + "' has no choices");
          answer = (*sample.choices)[project_to_choice(answer, *sample.choices)];
        }
        const auto ballot = cfg.vote_normalized ? normalize_answer(answer) : answer;
        v.per_query.push_back({q, *answers[i][q], normalize_answer(answer)});
        ballots.push_back(ballot);
      }
      const auto shown = std::span<const AnswerCandidate>(cands).first(std::min(cfg.prompt.K, cands.size()));
      const auto outcome = majority_vote(ballots, shown);
      v.final_answer = outcome.answer;
      v.tie_broken = outcome.tie_broken;
      o.final_answer = v.final_answer;
      result.votes.push_back(std::move(v));
    }
    outcomes.push_back(std::move(o));
  }

  EvalOptions opt;
  opt.K = cfg.prompt.K;
  opt.hit_ks = cfg.hit_ks;
  if (cfg.prompt.K > 0 && std::find(opt.hit_ks.begin(), opt.hit_ks.end(), cfg.prompt.K) == opt.hit_ks.end()) {
    opt.hit_ks.push_back(cfg.prompt.K);
  }
  std::sort(opt.hit_ks.begin(), opt.hit_ks.end());
  opt.metric = cfg.metric;
  opt.tau = cfg.tau;
  result.report = evaluate(ds, outcomes, opt);

  if (write_artifacts) {
    std::string votes;
    for (const auto& v : result.votes) votes += vote_to_json(v).dump() + "\n";
    detail::write_file(out / "votes.jsonl", votes);
    detail::write_file(out / "report.json", report_to_json(result.report).dump(2) + "\n");
    detail::write_file(out / "report.md", report_to_markdown(result.report));
  }
  return result;
}

inline RunResult run(const RunConfig& cfg) {
  const auto ds = load_manifest(cfg.manifest);
  return execute(ds, cfg, make_client(ds, cfg));
}

// Recomputes the report of a finished run from its snapshot and transcripts.
inline RunResult replay(const fs::path& run_dir) {
  const auto snap = run_dir / "config.json";
  if (!fs::exists(snap)) throw ConfigError("no config snapshot at '" + snap.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(snap));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ConfigError(snap.string() + ": " + ex.what());
  }
  const auto cfg = run_config_from_json(j, run_dir);
  const auto ds = load_manifest(cfg.manifest);
  return execute(ds, cfg, nullptr, false);
}

// ---------------------------------------------------------------------------
// Ablations

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("setting '" + std::string(key) + "' expects a boolean, got '" + std::string(v) + "'");
}

inline std::size_t parse_count(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("setting '" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "K") cfg.prompt.K = parse_count(key, value);
  else if (key == "N") cfg.prompt.N = parse_count(key, value);
  else if (key == "T") cfg.prompt.T = parse_count(key, value);
  else if (key == "strategy") cfg.strategy = parse_strategy(value);
  else if (key == "task_format") cfg.prompt.task_format = parse_task_format(value);
  else if (key == "include_head") cfg.prompt.include_head = parse_bool(key, value);
  else if (key == "include_scores") cfg.prompt.include_scores = parse_bool(key, value);
  else if (key == "include_caption") cfg.prompt.include_caption = parse_bool(key, value);
  else if (key == "include_tags") cfg.prompt.include_tags = parse_bool(key, value);
  else if (key == "mock") cfg.mock = parse_mock_kind(value);
  else if (key == "vote") cfg.vote_normalized = value == "normalized";
  else throw ConfigError("unknown ablation setting '" + std::string(key) + "'");
}

struct AblationCell {
  std::string tag;
  std::vector<std::pair<std::string, std::string>> settings;
};

struct AblationAxis {
  std::string key;
  std::vector<std::string> values;
};

// Cartesian product; the first axis varies slowest.
inline std::vector<AblationCell> expand_axes(const std::vector<AblationAxis>& axes) {
  std::vector<AblationCell> cells{{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) throw ConfigError("ablation axis '" + axis.key + "' has no values");
    std::vector<AblationCell> next;
    for (const auto& c : cells) {
      for (const auto& v : axis.values) {
        auto cell = c;
        cell.settings.emplace_back(axis.key, v);
        cell.tag += (cell.tag.empty() ? "" : ",") + axis.key + "=" + v;
        next.push_back(std::move(cell));
      }
    }
    cells = std::move(next);
  }
  if (axes.empty()) cells.front().tag = "base";
  return cells;
}

// "tag:key=v;key=v" -> explicit cell.
inline AblationCell parse_cell(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos || colon == 0) throw ConfigError("cell '" + std::string(text) + "' needs 'tag:'");
  AblationCell cell{std::string(text.substr(0, colon)), {}};
  auto rest = text.substr(colon + 1);
  while (!rest.empty()) {
    const auto semi = rest.find(';');
    const auto item = rest.substr(0, semi);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("cell setting '" + std::string(item) + "' needs key=value");
    cell.settings.emplace_back(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
    if (semi == std::string_view::npos) break;
    rest = rest.substr(semi + 1);
  }
  return cell;
}

inline ordered_json cell_config(const RunConfig& c) {
  return {{"K", c.prompt.K},
          {"N", c.prompt.N},
          {"T", c.prompt.T},
          {"strategy", to_string(c.strategy)},
          {"task_format", to_string(c.prompt.task_format)},
          {"include_head", c.prompt.include_head},
          {"include_scores", c.prompt.include_scores},
          {"include_caption", c.prompt.include_caption},
          {"include_tags", c.prompt.include_tags},
          {"mock", to_string(c.mock)}};
}

inline std::string sanitize_tag(std::string_view tag) {
  std::string out;
  for (char ch : tag) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                    ch == '_' || ch == '.';
    out += ok ? ch : '_';
  }
  return out;
}

struct AblationResult {
  std::vector<GridCell> cells;
  bool any_failed = false;
  bool any_invariant = false;
};

// One run per cell under base.out_dir/cells/<tag>; the merged grid goes to
// grid.json, grid.csv and grid.md in base.out_dir.
inline AblationResult run_ablation(const RunConfig& base, const std::vector<AblationCell>& cells) {
  const auto ds = load_manifest(base.manifest);
  std::vector<GridRequest> requests;
  std::map<std::string, EvalReport> results;
  std::map<std::string, std::string> errors;
  std::set<std::string> tags;
  AblationResult res;
  for (const auto& cell : cells) {
    if (!tags.insert(cell.tag).second) throw ConfigError("duplicate ablation config tag '" + cell.tag + "'");
    RunConfig cfg = base;
    for (const auto& [k, v] : cell.settings) apply_setting(cfg, k, v);
    cfg.out_dir = base.out_dir / "cells" / sanitize_tag(cell.tag);
    requests.push_back({cell.tag, cell_config(cfg)});
    try {
      auto r = execute(ds, cfg, make_client(ds, cfg));
      res.any_failed = res.any_failed || r.report.n_failed > 0;
      res.any_invariant = res.any_invariant || !r.report.invariant_violations.empty();
      results.emplace(cell.tag, std::move(r.report));
    } catch (const Error& e) {
      errors.emplace(cell.tag, e.what());
      res.any_failed = true;
    }
  }
  res.cells = ablation_grid(requests, results);
  for (auto& c : res.cells) {
    if (auto it = errors.find(c.tag); it != errors.end()) c.error = it->second;
  }
  fs::create_directories(base.out_dir);
  detail::write_file(base.out_dir / "grid.json", grid_to_json(res.cells).dump(2) + "\n");
  detail::write_file(base.out_dir / "grid.csv", grid_to_csv(res.cells));
  detail::write_file(base.out_dir / "grid.md", grid_to_markdown(res.cells));
  return res;
}

}  // namespace prophet
