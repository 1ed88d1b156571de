// prophet: command-line front end.
//
//   prophet gen-fixtures --out DIR [--seed 7] [--size 200]
//   prophet heuristics   --manifest M --out DIR [--strategy fused] [--scorer-dir D]
//   prophet prompts      --manifest M --dump-prompts DIR [run options]
//   prophet run          --manifest M --out DIR [run options]
//   prophet ablate       --manifest M --out DIR --axis K=0,1,5,10 [--cell tag:K=1;N=8]
//   prophet eval         --run DIR [--out report.json]
//   prophet report       --run DIR | --report FILE [--format md|json]
//
// Every subcommand accepts --config FILE with key=value lines.
// Exit codes: 0 ok, 2 invariant violation, 3 gateway exhaustion, 4 config or
// artifact error.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <set>

#include "prophet/prophet.hpp"

namespace {

using namespace prophet;

struct RunFlags {
  std::string manifest;
  std::string out = "run";
  std::string task_format = "standard";
  std::size_t K = 10, N = 16, T = 5;
  bool no_head = false, no_scores = false, no_caption = false, tags = false;
  int score_decimals = 2;
  std::size_t max_prompt_chars = 0;
  std::string order = "ascending";
  std::string strategy = "fused";
  std::optional<std::uint64_t> seed;
  std::string llm = "mock";
  std::string mock = "echo_top1";
  std::string mock_script, gold_ledger;
  std::string url, model, api_key_env;
  std::size_t max_in_flight = 4;
  int retries = 4, backoff_base_ms = 500, timeout_ms = 30000, min_interval_ms = 0;
  std::size_t workers = 1;
  std::string metric = "simple";
  double tau = 1.0;
  std::string vote = "normalized";
  std::vector<std::size_t> hit_ks{1, 5, 10};
  std::size_t limit = 0;
  int max_tokens = 16;
};

void add_run_options(CLI::App* app, RunFlags& f, bool need_out = true) {
  app->set_config("--config", "", "key=value config file");
  app->add_option("--manifest", f.manifest, "dataset manifest")->required();
  if (need_out) app->add_option("--out", f.out, "output directory");
  app->add_option("--task-format,--task_format", f.task_format, "standard|multiple_choice|science_hint|ocr");
  app->add_option("--K,-K", f.K, "answer candidates per block");
  app->add_option("--N,-N", f.N, "examples per prompt");
  app->add_option("--T,-T", f.T, "prompts per sample");
  app->add_flag("--no-head,--no_head", f.no_head);
  app->add_flag("--no-scores,--no_scores", f.no_scores);
  app->add_flag("--no-caption,--no_caption", f.no_caption);
  app->add_flag("--tags", f.tags, "add a Tags line when samples carry tags");
  app->add_option("--score-decimals,--score_decimals", f.score_decimals);
  app->add_option("--max-prompt-chars,--max_prompt_chars", f.max_prompt_chars, "0 = unlimited");
  app->add_option("--order", f.order, "ascending|descending similarity");
  app->add_option("--strategy", f.strategy, "rand|ques_img|fused|fused_ques_img|answer_logits|grouped");
  app->add_option("--seed", f.seed);
  app->add_option("--llm", f.llm, "mock|http");
  app->add_option("--mock", f.mock, "echo_top1|candidate_oracle|scripted");
  app->add_option("--mock-script,--mock_script", f.mock_script);
  app->add_option("--gold-ledger,--gold_ledger", f.gold_ledger);
  app->add_option("--url", f.url, "completions endpoint");
  app->add_option("--model", f.model);
  app->add_option("--api-key-env,--api_key_env", f.api_key_env, "environment variable holding the API key");
  app->add_option("--max-in-flight,--max_in_flight", f.max_in_flight);
  app->add_option("--retries", f.retries);
  app->add_option("--backoff-base-ms,--backoff_base_ms", f.backoff_base_ms);
  app->add_option("--timeout-ms,--timeout_ms", f.timeout_ms);
  app->add_option("--min-interval-ms,--min_interval_ms", f.min_interval_ms);
  app->add_option("--workers", f.workers);
  app->add_option("--metric", f.metric, "simple|official");
  app->add_option("--tau", f.tau);
  app->add_option("--vote", f.vote, "normalized|raw");
  app->add_option("--hit-ks,--hit_ks", f.hit_ks)->delimiter(',');
  app->add_option("--limit", f.limit, "only the first n testing samples (0 = all)");
  app->add_option("--max-tokens,--max_tokens", f.max_tokens);
}

RunConfig to_config(const RunFlags& f) {
  RunConfig c;
  c.manifest = f.manifest;
  c.out_dir = f.out;
  c.prompt.task_format = parse_task_format(f.task_format);
  c.prompt.K = f.K;
  c.prompt.N = f.N;
  c.prompt.T = f.T;
  c.prompt.include_head = !f.no_head;
  c.prompt.include_scores = !f.no_scores;
  c.prompt.include_caption = !f.no_caption;
  c.prompt.include_tags = f.tags;
  c.prompt.score_decimals = f.score_decimals;
  if (f.max_prompt_chars > 0) c.prompt.max_prompt_chars = f.max_prompt_chars;
  if (f.order != "ascending" && f.order != "descending") throw ConfigError("order must be ascending or descending");
  c.prompt.order = f.order == "ascending" ? ExampleOrder::ascending_similarity : ExampleOrder::descending_similarity;
  c.strategy = parse_strategy(f.strategy);
  c.seed = f.seed;
  c.llm = f.llm;
  c.mock = parse_mock_kind(f.mock);
  if (!f.mock_script.empty()) c.mock_script = f.mock_script;
  if (!f.gold_ledger.empty()) c.gold_ledger = f.gold_ledger;
  c.http = {f.url, f.model, f.api_key_env, f.max_in_flight, f.retries, f.backoff_base_ms, f.timeout_ms, f.min_interval_ms};
  c.workers = f.workers;
  c.metric = parse_metric(f.metric);
  c.tau = f.tau;
  if (f.vote != "normalized" && f.vote != "raw") throw ConfigError("vote must be normalized or raw");
  c.vote_normalized = f.vote == "normalized";
  c.hit_ks = f.hit_ks;
  if (f.limit > 0) c.limit = f.limit;
  c.max_tokens = f.max_tokens;
  c.validate();
  return c;
}

void print_summary(const RunResult& r) {
  std::cout << "samples " << r.report.n_samples << ", failed " << r.report.n_failed << "\n"
            << "queries: " << r.new_queries << " new, " << r.reused_queries << " from transcript, " << r.failed_queries
            << " failed\n"
            << "stage-1 accuracy " << pct(r.report.stage1_accuracy) << ", stage-2 accuracy " << pct(r.report.accuracy)
            << "\n";
  for (const auto& e : r.errors) std::cerr << "error: " << e << "\n";
  for (const auto& v : r.report.invariant_violations) std::cerr << "invariant violated: " << v << "\n";
}

int cmd_gen_fixtures(const std::string& out, const FixtureConfig& cfg) {
  const auto s = generate_fixtures(cfg, out);
  std::cout << "wrote " << s.samples << " samples (vocabulary " << s.vocab_size << ") to " << s.manifest_path.string()
            << "\n";
  return 0;
}

struct HeuristicsFlags {
  std::string manifest, out = "heuristics";
  std::size_t k = 10, n = 16;
  std::string strategy = "fused";
  std::optional<std::uint64_t> seed;
  std::string scorer, scorer_dir, scorer_url, gen_vocab;
  std::size_t beam_width = 10, max_len = 4;
};

int cmd_heuristics(const HeuristicsFlags& f) {
  if (!f.scorer.empty() || !f.scorer_url.empty()) {
    std::unique_ptr<AutoregressiveScorer> scorer;
    if (!f.scorer.empty()) {
      std::optional<AnswerVocabulary> v;
      if (!f.gen_vocab.empty()) v = load_vocabulary(f.gen_vocab, AnswerVocabulary::Type::generative);
      scorer = std::make_unique<TableScorer>(load_table_scorer(f.scorer, v ? &*v : nullptr));
    } else {
      if (f.gen_vocab.empty()) throw ConfigError("--scorer-url needs --vocab");
      scorer = std::make_unique<HttpScorer>(f.scorer_url, load_vocabulary(f.gen_vocab, AnswerVocabulary::Type::generative));
    }
    ordered_json j = ordered_json::array();
    for (const auto& b : beam_search(*scorer, f.beam_width, f.max_len)) {
      j.push_back({{"answer", b.candidate.answer}, {"score", b.candidate.score}, {"log_score", b.log_score}});
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  const auto ds = load_manifest(f.manifest);
  fs::create_directories(f.out);
  if (!f.scorer_dir.empty()) {
    if (f.gen_vocab.empty()) throw ConfigError("--scorer-dir needs --vocab");
    const auto vocab = load_vocabulary(f.gen_vocab, AnswerVocabulary::Type::generative);
    CandidateTable table(f.beam_width);
    std::size_t n = 0;
    for (const auto& s : ds.samples()) {
      const auto path = fs::path(f.scorer_dir) / (s.id + ".json");
      if (!fs::exists(path)) continue;
      const auto scorer = load_table_scorer(path, &vocab);
      table.set(s.id, to_candidates(beam_search(scorer, f.beam_width, f.max_len)));
      ++n;
    }
    write_candidate_table(fs::path(f.out) / "generative_candidates.json", table);
    std::cout << "beam search over " << n << " scorers -> " << (fs::path(f.out) / "generative_candidates.json").string()
              << "\n";
    return 0;
  }

  std::vector<std::string> all;
  for (const auto& s : ds.samples()) all.push_back(s.id);
  write_candidate_table(fs::path(f.out) / "candidates.json", stage1_candidates(ds, f.k, all));
  const auto strategy = parse_strategy(f.strategy);
  ordered_json sel = ordered_json::array();
  for (const auto& id : ds.test_ids()) {
    const auto s = combined_knn(ds, id, strategy, f.n, f.seed);
    sel.push_back({{"id", id}, {"neighbors", s.neighbor_ids}, {"similarities", s.similarities}});
  }
  detail::write_file(fs::path(f.out) / "selections.json", sel.dump(1) + "\n");
  std::cout << "candidates for " << all.size() << " samples, selections for " << ds.test_ids().size()
            << " testing samples -> " << f.out << "\n";
  return 0;
}

int cmd_prompts(const RunFlags& f, const std::string& dump_dir) {
  const auto cfg = to_config(f);
  const auto ds = load_manifest(cfg.manifest);
  const auto p = prepare(ds, cfg);
  dump_prompts(p, dump_dir);
  std::size_t n = 0;
  for (const auto& s : p.samples) n += s.bundle.prompts.size();
  std::cout << "wrote " << n << " prompts to " << dump_dir << "\n";
  return 0;
}

int cmd_run(const RunFlags& f, const std::string& dump_dir) {
  const auto cfg = to_config(f);
  const auto ds = load_manifest(cfg.manifest);
  if (!dump_dir.empty()) dump_prompts(prepare(ds, cfg), dump_dir);
  const auto r = execute(ds, cfg, make_client(ds, cfg));
  print_summary(r);
  std::cout << "report: " << (cfg.out_dir / "report.json").string() << "\n";
  return r.exit_code();
}

std::vector<AblationAxis> parse_axes(const std::vector<std::string>& specs) {
  std::vector<AblationAxis> axes;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("axis '" + s + "' needs key=v1,v2,...");
    AblationAxis a{s.substr(0, eq), {}};
    std::string_view rest(s);
    rest.remove_prefix(eq + 1);
    while (true) {
      const auto comma = rest.find(',');
      a.values.emplace_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    axes.push_back(std::move(a));
  }
  return axes;
}

int cmd_ablate(const RunFlags& f, const std::vector<std::string>& axis_specs, const std::vector<std::string>& cell_specs) {
  const auto base = to_config(f);
  std::vector<AblationCell> cells;
  if (!cell_specs.empty()) {
    for (const auto& c : cell_specs) cells.push_back(parse_cell(c));
  } else {
    cells = expand_axes(parse_axes(axis_specs));
  }
  const auto r = run_ablation(base, cells);
  std::cout << grid_to_markdown(r.cells);
  for (const auto& c : r.cells) {
    if (c.error) std::cerr << "cell " << c.tag << ": " << *c.error << "\n";
  }
  if (r.any_invariant) return 2;
  return r.any_failed ? 3 : 0;
}

int cmd_eval(const std::string& run_dir, const std::string& out, const std::string& markdown) {
  const auto r = replay(run_dir);
  const auto text = report_to_json(r.report).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    detail::write_file(out, text);
  }
  if (!markdown.empty()) detail::write_file(markdown, report_to_markdown(r.report));
  for (const auto& v : r.report.invariant_violations) std::cerr << "invariant violated: " << v << "\n";
  return r.exit_code();
}

int cmd_report(const std::string& run_dir, const std::string& report_file, const std::string& format) {
  fs::path path = report_file.empty() ? fs::path(run_dir) / "report.json" : fs::path(report_file);
  if (!report_file.empty() || fs::exists(path)) {
    const auto j = nlohmann::json::parse(detail::read_file_text(path));
    const auto rep = report_from_json(j);
    std::cout << (format == "json" ? report_to_json(rep).dump(2) + "\n" : report_to_markdown(rep));
    return rep.invariant_violations.empty() ? 0 : 2;
  }
  path = fs::path(run_dir) / "grid.json";
  if (!fs::exists(path)) throw ConfigError("no report.json or grid.json in '" + run_dir + "'");
  const auto j = nlohmann::json::parse(detail::read_file_text(path));
  if (format == "json") {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << detail::read_file_text(fs::path(run_dir) / (format == "csv" ? "grid.csv" : "grid.md"));
  }
  return 0;
}

// CLI11 only honours --config on the root app, so a subcommand's config file
// is expanded here into ordinary arguments. Keys given explicitly on the
// command line win.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  auto* sub = app.get_subcommand_no_throw(args.front());
  if (sub == nullptr) return args;
  std::string file;
  std::set<const CLI::Option*> given;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a.rfind("-", 0) != 0) continue;
    const auto name = a.substr(0, a.find('='));
    if (name == "--config") {
      if (name.size() < a.size()) file = a.substr(name.size() + 1);
      else if (i + 1 < args.size()) file = args[i + 1];
      continue;
    }
    if (const auto* op = sub->get_option_no_throw(name)) given.insert(op);
  }
  if (file.empty()) return args;
  std::vector<std::string> extra;
  for (const auto& item : CLI::ConfigINI().from_file(file)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub->get_name())) continue;
    const auto flag = (item.name.size() == 1 ? "-" : "--") + item.name;
    const auto* op = sub->get_option_no_throw("--" + item.name);
    if (op == nullptr) op = sub->get_option_no_throw(flag);
    if (op != nullptr && given.count(op)) continue;
    if (op != nullptr && op->get_expected_min() == 0) {
      if (item.inputs.empty() || CLI::detail::to_flag_value(item.inputs.front()) > 0) extra.push_back(flag);
      continue;
    }
    extra.push_back(flag);
    extra.insert(extra.end(), item.inputs.begin(), item.inputs.end());
  }
  args.insert(args.begin() + 1, extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Answer-heuristics prompting pipeline for knowledge-based VQA"};
  app.require_subcommand(1);

  std::string fx_out;
  FixtureConfig fx;
  auto* gen = app.add_subcommand("gen-fixtures", "write a deterministic synthetic dataset");
  gen->set_config("--config");
  gen->add_option("--out", fx_out, "output directory")->required();
  gen->add_option("--seed", fx.seed);
  gen->add_option("--size", fx.n_test, "testing samples");
  std::size_t fx_train = 0;
  gen->add_option("--train", fx_train, "training samples (default 5 x size)");
  gen->add_option("--dim", fx.dim);
  gen->add_option("--classes", fx.n_classes);
  gen->add_option("--feature-noise", fx.feature_noise);
  gen->add_option("--model-noise", fx.model_noise);

  HeuristicsFlags hf;
  auto* heur = app.add_subcommand("heuristics", "stage-1 candidates and example selection");
  heur->set_config("--config");
  heur->add_option("--manifest", hf.manifest);
  heur->add_option("--out", hf.out);
  heur->add_option("--K,-K", hf.k, "candidates kept per sample");
  heur->add_option("--N,-N", hf.n, "neighbors per testing sample");
  heur->add_option("--strategy", hf.strategy);
  heur->add_option("--seed", hf.seed);
  heur->add_option("--scorer", hf.scorer, "beam search over one scorer table file");
  heur->add_option("--scorer-dir", hf.scorer_dir, "beam search over <id>.json scorer tables");
  heur->add_option("--scorer-url", hf.scorer_url, "beam search against a remote scorer");
  heur->add_option("--vocab", hf.gen_vocab, "generative vocabulary");
  heur->add_option("--beam-width", hf.beam_width);
  heur->add_option("--max-len", hf.max_len);

  RunFlags pf;
  std::string dump_dir;
  auto* prompts = app.add_subcommand("prompts", "assemble and dump prompts");
  add_run_options(prompts, pf, false);
  prompts->add_option("--dump-prompts", dump_dir, "one <sample>_q<t>.txt per prompt")->required();

  RunFlags rf;
  std::string run_dump;
  auto* runc = app.add_subcommand("run", "full pipeline run");
  add_run_options(runc, rf);
  runc->add_option("--dump-prompts", run_dump);

  RunFlags af;
  std::vector<std::string> axes, cells;
  auto* abl = app.add_subcommand("ablate", "sweep configurations and merge a grid");
  add_run_options(abl, af);
  abl->add_option("--axis", axes, "key=v1,v2,... (Cartesian product)");
  abl->add_option("--cell", cells, "tag:key=v;key=v (explicit list)");

  std::string ev_run, ev_out, ev_md;
  auto* evc = app.add_subcommand("eval", "recompute a run's report from its transcripts");
  evc->add_option("--run", ev_run)->required();
  evc->add_option("--out", ev_out, "write the JSON report here instead of stdout");
  evc->add_option("--markdown", ev_md);

  std::string rp_run, rp_file, rp_format = "md";
  auto* rep = app.add_subcommand("report", "render a report or ablation grid");
  rep->add_option("--run", rp_run);
  rep->add_option("--report", rp_file);
  rep->add_option("--format", rp_format, "md|json|csv")->check(CLI::IsMember({"md", "json", "csv"}));

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 4;
  }

  try {
    if (*gen) {
      fx.n_train = fx_train > 0 ? fx_train : 5 * fx.n_test;
      return cmd_gen_fixtures(fx_out, fx);
    }
    if (*heur) return cmd_heuristics(hf);
    if (*prompts) return cmd_prompts(pf, dump_dir);
    if (*runc) return cmd_run(rf, run_dump);
    if (*abl) return cmd_ablate(af, axes, cells);
    if (*evc) return cmd_eval(ev_run, ev_out, ev_md);
    if (*rep) {
      if (rp_run.empty() && rp_file.empty()) throw ConfigError("report needs --run or --report");
      return cmd_report(rp_run, rp_file, rp_format);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
