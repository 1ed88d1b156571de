#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prophet/artifact_store.hpp"
#include "prophet/voting.hpp"

namespace prophet {

enum class SoftMetric { simple, official };

inline SoftMetric parse_metric(std::string_view s) {
  if (s == "simple") return SoftMetric::simple;
  if (s == "official") return SoftMetric::official;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

inline std::string_view to_string(SoftMetric m) { return m == SoftMetric::simple ? "simple" : "official"; }

inline constexpr std::size_t kAnnotatorCount = 10;

// Credit of a prediction against ten annotator answers: min(matches/3, 1),
// or for the official metric the same quantity averaged over the ten
// leave-one-annotator-out subsets.
inline double soft_score(std::string_view prediction, const Sample& sample, SoftMetric metric = SoftMetric::simple,
                         bool eval_mode = true) {
  if (eval_mode && sample.answers.size() != kAnnotatorCount) {
    throw ConfigError("sample '" + sample.id + "' has " + std::to_string(sample.answers.size()) +
                      " annotator answers, expected 10");
  }
  const auto pred = normalize_answer(prediction);
  std::vector<bool> match;
  match.reserve(sample.answers.size());
  for (const auto& a : sample.answers) match.push_back(normalize_answer(a) == pred);
  const auto matches = static_cast<double>(std::count(match.begin(), match.end(), true));
  if (metric == SoftMetric::simple || sample.answers.size() < 2) return std::min(matches / 3.0, 1.0);
  double total = 0.0;
  for (bool m : match) total += std::min((matches - (m ? 1.0 : 0.0)) / 3.0, 1.0);
  return total / static_cast<double>(match.size());
}

// Mean over samples of the best soft score among each sample's top-K
// candidates.
inline double hit_rate(const CandidateTable& table, std::span<const Sample* const> samples, std::size_t k,
                       SoftMetric metric = SoftMetric::simple) {
  if (k < 1) throw ConfigError("hit rate needs K >= 1");
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto* s : samples) {
    const auto& cands = table.at(s->id);
    double best = 0.0;
    for (std::size_t i = 0; i < std::min(k, cands.size()); ++i) best = std::max(best, soft_score(cands[i].answer, *s, metric));
    total += best;
  }
  return total / static_cast<double>(samples.size());
}

enum class Behavior { keep_top1, in_top_2_to_K, beyond_top_K };

inline std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::keep_top1: return "keep_top1";
    case Behavior::in_top_2_to_K: return "in_top_2_to_K";
    case Behavior::beyond_top_K: return "beyond_top_K";
  }
  return "?";
}

inline Behavior behavior_classify(std::string_view final_answer, std::span<const AnswerCandidate> candidates,
                                  std::size_t k) {
  if (k > 0 && candidates.empty()) throw ConfigError("behavior_classify: empty candidates with K > 0");
  const auto f = normalize_answer(final_answer);
  const auto limit = std::min(k, candidates.size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (normalize_answer(candidates[i].answer) == f) return i == 0 ? Behavior::keep_top1 : Behavior::in_top_2_to_K;
  }
  return Behavior::beyond_top_K;
}

struct Confusion {
  double correct_correct = 0.0;
  double correct_wrong = 0.0;
  double wrong_correct = 0.0;
  double wrong_wrong = 0.0;

  double sum() const { return correct_correct + correct_wrong + wrong_correct + wrong_wrong; }
};

inline Confusion stage_confusion(const std::map<std::string, double>& stage1, const std::map<std::string, double>& stage2,
                                 double tau = 1.0) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("confusion threshold must lie in (0, 1]");
  if (stage1.size() != stage2.size()) throw ConfigError("stage-1 and stage-2 score sets are misaligned");
  Confusion c;
  if (stage1.empty()) return c;
  std::size_t cc = 0, cw = 0, wc = 0, ww = 0;
  for (const auto& [id, s1] : stage1) {
    auto it = stage2.find(id);
    if (it == stage2.end()) throw ConfigError("sample '" + id + "' missing from stage-2 scores");
    const bool a = s1 >= tau, b = it->second >= tau;
    (a ? (b ? cc : cw) : (b ? wc : ww))++;
  }
  const auto n = static_cast<double>(stage1.size());
  return {static_cast<double>(cc) / n, static_cast<double>(cw) / n, static_cast<double>(wc) / n,
          static_cast<double>(ww) / n};
}

// ---------------------------------------------------------------------------
// Reports

// Everything the evaluator needs about one testing sample.
struct SampleOutcome {
  std::string sample_id;
  std::vector<AnswerCandidate> candidates;  // stage-1, sorted, up to K_max
  std::vector<std::string> example_ids;     // selected in-context examples
  std::optional<std::string> final_answer;  // absent when every query failed
};

struct EvalOptions {
  std::size_t K = 10;  // candidates shown to the LLM
  std::vector<std::size_t> hit_ks{1, 5, 10};
  SoftMetric metric = SoftMetric::simple;
  double tau = 1.0;
};

struct BehaviorStats {
  double fraction = 0.0;
  double stage1_accuracy = 0.0;
  double stage2_accuracy = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::size_t n_samples = 0;
  std::size_t n_failed = 0;
  double accuracy = 0.0;
  double stage1_accuracy = 0.0;
  std::map<std::size_t, double> hit_rate;
  std::optional<double> example_hit_rate;
  std::map<Behavior, BehaviorStats> behavior;
  Confusion confusion;
  std::map<std::string, std::pair<double, double>> per_category;
  std::vector<std::string> invariant_violations;

  bool complete() const { return n_failed == 0; }
};

inline EvalReport evaluate(const Dataset& ds, const std::vector<SampleOutcome>& outcomes, const EvalOptions& opt) {
  EvalReport rep;
  rep.n_samples = outcomes.size();
  std::vector<const Sample*> samples;
  CandidateTable table(std::numeric_limits<std::size_t>::max());
  std::map<std::string, double> s1_scores, s2_scores;
  std::map<std::string, std::pair<double, std::size_t>> cat_s1, cat_s2;
  std::map<Behavior, std::array<double, 3>> beh;  // count, s1 sum, s2 sum
  for (auto b : {Behavior::keep_top1, Behavior::in_top_2_to_K, Behavior::beyond_top_K}) beh[b] = {0, 0, 0};
  double ex_hit_total = 0.0;
  bool any_examples = false;

  for (const auto& o : outcomes) {
    const Sample& s = ds.sample(o.sample_id);
    samples.push_back(&s);
    table.set(s.id, o.candidates);
    const double s1 = o.candidates.empty() ? 0.0 : soft_score(o.candidates.front().answer, s, opt.metric);
    const double s2 = o.final_answer ? soft_score(*o.final_answer, s, opt.metric) : 0.0;
    if (!o.final_answer) ++rep.n_failed;
    s1_scores[s.id] = s1;
    s2_scores[s.id] = s2;
    rep.stage1_accuracy += s1;
    rep.accuracy += s2;
    const auto cat = s.category.value_or("uncategorized");
    cat_s1[cat].first += s1;
    cat_s1[cat].second++;
    cat_s2[cat].first += s2;
    const auto b = behavior_classify(o.final_answer.value_or(""), o.candidates, opt.K);
    beh[b][0] += 1;
    beh[b][1] += s1;
    beh[b][2] += s2;
    if (!o.example_ids.empty()) {
      any_examples = true;
      double best = 0.0;
      for (const auto& eid : o.example_ids) {
        best = std::max(best, soft_score(modal_answer(ds.sample(eid).answers), s, opt.metric));
      }
      ex_hit_total += best;
    }
  }

  const auto n = static_cast<double>(std::max<std::size_t>(1, outcomes.size()));
  rep.accuracy /= n;
  rep.stage1_accuracy /= n;
  if (any_examples) rep.example_hit_rate = ex_hit_total / n;
  for (auto k : opt.hit_ks) rep.hit_rate[k] = hit_rate(table, samples, k, opt.metric);
  for (const auto& [b, v] : beh) {
    BehaviorStats st;
    st.count = static_cast<std::size_t>(v[0]);
    st.fraction = outcomes.empty() ? 0.0 : v[0] / n;
    st.stage1_accuracy = v[0] > 0 ? v[1] / v[0] : 0.0;
    st.stage2_accuracy = v[0] > 0 ? v[2] / v[0] : 0.0;
    rep.behavior[b] = st;
  }
  rep.confusion = stage_confusion(s1_scores, s2_scores, opt.tau);
  for (const auto& [cat, v] : cat_s1) {
    rep.per_category[cat] = {v.first / static_cast<double>(v.second), cat_s2[cat].first / static_cast<double>(v.second)};
  }

  // Invariant checks. Partitions are compared on exact counts; the float
  // sums are held to 1e-12.
  auto violate = [&](std::string msg) { rep.invariant_violations.push_back(std::move(msg)); };
  if (!outcomes.empty()) {
    double bsum = 0.0;
    for (const auto& [b, st] : rep.behavior) bsum += st.fraction;
    if (std::fabs(bsum - 1.0) > 1e-12) violate("behavior fractions sum to " + std::to_string(bsum));
    if (std::fabs(rep.confusion.sum() - 1.0) > 1e-12) violate("confusion fractions do not sum to 1");
  }
  for (double a : {rep.accuracy, rep.stage1_accuracy}) {
    if (a < 0.0 || a > 1.0) violate("accuracy outside [0,1]");
  }
  double prev = -1.0;
  for (const auto& [k, h] : rep.hit_rate) {
    if (h < prev) violate("hit rate decreases at K=" + std::to_string(k));
    prev = h;
  }
  if (auto it = rep.hit_rate.find(1); it != rep.hit_rate.end() && it->second != rep.stage1_accuracy) {
    violate("hit_rate(1) differs from stage-1 accuracy");
  }
  return rep;
}

inline ordered_json report_to_json(const EvalReport& r) {
  ordered_json j;
  j["n_samples"] = r.n_samples;
  j["n_failed"] = r.n_failed;
  j["complete"] = r.complete();
  j["accuracy"] = r.accuracy;
  j["stage1_accuracy"] = r.stage1_accuracy;
  j["hit_rate"] = ordered_json::object();
  for (const auto& [k, h] : r.hit_rate) j["hit_rate"][std::to_string(k)] = h;
  j["example_hit_rate"] = r.example_hit_rate ? ordered_json(*r.example_hit_rate) : ordered_json(nullptr);
  j["behavior"] = ordered_json::object();
  for (const auto& [b, st] : r.behavior) {
    j["behavior"][std::string(to_string(b))] = {{"fraction", st.fraction},
                                                 {"count", st.count},
                                                 {"stage1_accuracy", st.stage1_accuracy},
                                                 {"stage2_accuracy", st.stage2_accuracy}};
  }
  j["confusion"] = {{"correct_to_correct", r.confusion.correct_correct},
                    {"correct_to_wrong", r.confusion.correct_wrong},
                    {"wrong_to_correct", r.confusion.wrong_correct},
                    {"wrong_to_wrong", r.confusion.wrong_wrong}};
  j["per_category"] = ordered_json::object();
  for (const auto& [cat, acc] : r.per_category) j["per_category"][cat] = {{"stage1", acc.first}, {"stage2", acc.second}};
  j["invariant_violations"] = r.invariant_violations;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.n_failed = j.at("n_failed").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.stage1_accuracy = j.at("stage1_accuracy").get<double>();
    for (const auto& [k, h] : j.at("hit_rate").items()) r.hit_rate[std::stoul(k)] = h.get<double>();
    if (!j.at("example_hit_rate").is_null()) r.example_hit_rate = j.at("example_hit_rate").get<double>();
    for (auto b : {Behavior::keep_top1, Behavior::in_top_2_to_K, Behavior::beyond_top_K}) {
      const auto& bj = j.at("behavior").at(std::string(to_string(b)));
      r.behavior[b] = {bj.at("fraction").get<double>(), bj.at("stage1_accuracy").get<double>(),
                       bj.at("stage2_accuracy").get<double>(), bj.at("count").get<std::size_t>()};
    }
    const auto& c = j.at("confusion");
    r.confusion = {c.at("correct_to_correct").get<double>(), c.at("correct_to_wrong").get<double>(),
                   c.at("wrong_to_correct").get<double>(), c.at("wrong_to_wrong").get<double>()};
    for (const auto& [cat, v] : j.at("per_category").items()) {
      r.per_category[cat] = {v.at("stage1").get<double>(), v.at("stage2").get<double>()};
    }
    r.invariant_violations = j.at("invariant_violations").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw ArtifactError(std::string("report: ") + ex.what());
  }
  return r;
}

inline std::string pct(double v) { return format_fixed_half_up(100.0 * v, 2); }

inline std::string report_to_markdown(const EvalReport& r) {
  std::ostringstream md;
  md << "## Accuracy\n\n| stage | accuracy |\n|---|---|\n";
  md << "| stage-1 (VQA model) | " << pct(r.stage1_accuracy) << " |\n";
  md << "| stage-2 (LLM) | " << pct(r.accuracy) << " |\n\n";
  md << "Samples: " << r.n_samples << ", failed: " << r.n_failed << (r.complete() ? "" : " (INCOMPLETE)") << "\n\n";
  md << "## Answer candidates\n\n| #candidates (K) | hit rate |\n|---|---|\n";
  for (const auto& [k, h] : r.hit_rate) md << "| " << k << " | " << pct(h) << " |\n";
  if (r.example_hit_rate) md << "\nExample answer hit rate: " << pct(*r.example_hit_rate) << "\n";
  md << "\n## Prediction behaviors\n\n| behavior | fraction | stage-1 accuracy | stage-2 accuracy |\n|---|---|---|---|\n";
  for (const auto& [b, st] : r.behavior) {
    md << "| " << to_string(b) << " | " << pct(st.fraction) << " | " << pct(st.stage1_accuracy) << " | "
       << pct(st.stage2_accuracy) << " |\n";
  }
  md << "\n## Stage-1 vs stage-2\n\n| stage-1 \\ stage-2 | correct | wrong |\n|---|---|---|\n";
  md << "| correct | " << pct(r.confusion.correct_correct) << " | " << pct(r.confusion.correct_wrong) << " |\n";
  md << "| wrong | " << pct(r.confusion.wrong_correct) << " | " << pct(r.confusion.wrong_wrong) << " |\n";
  md << "\n## Per category\n\n| category | stage-1 | stage-2 |\n|---|---|---|\n";
  for (const auto& [cat, acc] : r.per_category) md << "| " << cat << " | " << pct(acc.first) << " | " << pct(acc.second) << " |\n";
  if (!r.invariant_violations.empty()) {
    md << "\n## Invariant violations\n\n";
    for (const auto& v : r.invariant_violations) md << "- " << v << "\n";
  }
  return md.str();
}

// ---------------------------------------------------------------------------
// Ablation grids

struct GridCell {
  std::string tag;
  ordered_json config;
  std::optional<double> hit_rate;
  std::optional<double> example_hit_rate;
  std::optional<double> stage1_accuracy;
  std::optional<double> accuracy;
  std::optional<std::string> error;
};

struct GridRequest {
  std::string tag;
  ordered_json config;  // must carry "K"
};

// One cell per request, in request order. A request without a result gets
// explicit nulls. Hit rate is reported at the cell's K and is null for K=0.
inline std::vector<GridCell> ablation_grid(const std::vector<GridRequest>& requests,
                                           const std::map<std::string, EvalReport>& results) {
  std::set<std::string> tags;
  std::vector<GridCell> cells;
  for (const auto& req : requests) {
    if (!tags.insert(req.tag).second) throw ConfigError("duplicate ablation config tag '" + req.tag + "'");
    GridCell cell{req.tag, req.config, {}, {}, {}, {}, {}};
    auto it = results.find(req.tag);
    if (it != results.end()) {
      const auto& rep = it->second;
      cell.accuracy = rep.accuracy;
      cell.stage1_accuracy = rep.stage1_accuracy;
      cell.example_hit_rate = rep.example_hit_rate;
      const auto k = req.config.value("K", std::size_t{0});
      if (k > 0) {
        if (auto h = rep.hit_rate.find(k); h != rep.hit_rate.end()) cell.hit_rate = h->second;
      }
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

inline ordered_json grid_to_json(const std::vector<GridCell>& cells) {
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j = ordered_json::array();
  for (const auto& c : cells) {
    j.push_back({{"tag", c.tag},
                 {"config", c.config},
                 {"hit_rate", opt(c.hit_rate)},
                 {"example_hit_rate", opt(c.example_hit_rate)},
                 {"stage1_accuracy", opt(c.stage1_accuracy)},
                 {"accuracy", opt(c.accuracy)}});
    if (c.error) j.back()["error"] = *c.error;
  }
  return j;
}

inline std::string grid_to_csv(const std::vector<GridCell>& cells) {
  static constexpr std::array<const char*, 9> kKeys{"K",           "N",           "T",
                                                    "strategy",    "task_format", "include_head",
                                                    "include_scores", "include_caption", "include_tags"};
  auto num = [](const std::optional<double>& v) { return v ? format_fixed_half_up(*v, 6) : std::string(); };
  std::ostringstream out;
  out << "tag";
  for (const auto* k : kKeys) out << ',' << k;
  out << ",hit_rate,example_hit_rate,stage1_accuracy,accuracy\n";
  for (const auto& c : cells) {
    out << '"' << c.tag << '"';
    for (const auto* k : kKeys) {
      out << ',';
      if (c.config.contains(k)) out << (c.config[k].is_string() ? c.config[k].get<std::string>() : c.config[k].dump());
    }
    out << ',' << num(c.hit_rate) << ',' << num(c.example_hit_rate) << ',' << num(c.stage1_accuracy) << ','
        << num(c.accuracy) << '\n';
  }
  return out.str();
}

inline std::string grid_to_markdown(const std::vector<GridCell>& cells) {
  auto num = [](const std::optional<double>& v) { return v ? pct(*v) : std::string("-"); };
  std::ostringstream md;
  md << "| config | hit rate | example hit rate | accuracy |\n|---|---|---|---|\n";
  for (const auto& c : cells) {
    md << "| " << c.tag << " | " << num(c.hit_rate) << " | " << num(c.example_hit_rate) << " | " << num(c.accuracy)
       << " |\n";
  }
  return md.str();
}

}  // namespace prophet
