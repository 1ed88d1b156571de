#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "prophet/evaluator.hpp"
#include "prophet/fixtures.hpp"
#include "prophet/prompt.hpp"
#include "prophet/voting.hpp"
#include "golden_cases.hpp"
#include "test_support.hpp"

using namespace prophet;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

using golden_cases::cands;
using golden_cases::make_sample;
using golden_cases::ten;

std::string golden(const char* name) { return slurp(std::string(PROPHET_GOLDEN_DIR) + "/" + name); }

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

ExampleSelection ranked(std::size_t n) {
  ExampleSelection sel{"t", {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    sel.neighbor_ids.push_back("r" + std::to_string(i));
    sel.similarities.push_back(1.0 - 0.01 * double(i));
  }
  return sel;
}

}  // namespace

// ---------------------------------------------------------------------------
// Golden prompts

TEST(Golden, StandardPrompt) { EXPECT_EQ(golden_cases::standard(), golden("standard.txt")); }

TEST(Golden, MultipleChoicePrompt) { EXPECT_EQ(golden_cases::multiple_choice(), golden("multiple_choice.txt")); }

TEST(Golden, ScienceHintPrompt) { EXPECT_EQ(golden_cases::science_hint(), golden("science_hint.txt")); }

TEST(Golden, OcrPrompt) { EXPECT_EQ(golden_cases::ocr(), golden("ocr.txt")); }

// ---------------------------------------------------------------------------
// Prompt structure

TEST(Partition, StrideThenAscendingSimilarity) {
  const auto p = partition_examples(ranked(10), 5, 2);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0], (std::vector<std::string>{"r8", "r6", "r4", "r2", "r0"}));
  EXPECT_EQ(p[1], (std::vector<std::string>{"r9", "r7", "r5", "r3", "r1"}));
  const auto d = partition_examples(ranked(10), 5, 2, ExampleOrder::descending_similarity);
  EXPECT_EQ(d[0], (std::vector<std::string>{"r0", "r2", "r4", "r6", "r8"}));
}

TEST(Partition, SingleQueryAndZeroShot) {
  EXPECT_EQ(partition_examples(ranked(3), 3, 1)[0], (std::vector<std::string>{"r2", "r1", "r0"}));
  const auto z = partition_examples(ranked(0), 0, 3);
  ASSERT_EQ(z.size(), 3u);
  for (const auto& l : z) EXPECT_TRUE(l.empty());
  EXPECT_THROW(partition_examples(ranked(9), 5, 2), ConfigError);
  EXPECT_THROW(partition_examples(ranked(9), 1, 0), ConfigError);
}

TEST(Prompt, AnswerLinesCountIsNPlusOne) {
  std::vector<Sample> pool;
  for (int i = 0; i < 12; ++i) pool.push_back(make_sample("r" + std::to_string(i), "cap", "q?", ten("ans", 5)));
  const auto test = make_sample("t", "cap", "q?", ten("ans", 5));
  const auto c = cands({{"a", 0.5}, {"b", 0.4}, {"c", 0.3}});
  ExampleLookup lookup{[&](const std::string& id) -> const Sample& { return pool.at(std::stoul(id.substr(1))); },
                       [&](const std::string&) { return c; }};
  for (std::size_t n : {0, 1, 4}) {
    PromptConfig cfg;
    cfg.K = 3;
    cfg.N = n;
    cfg.T = 3;
    const auto b = build_prompts(test, c, ranked(12), lookup, cfg);
    ASSERT_EQ(b.prompts.size(), 3u);
    for (std::size_t q = 0; q < 3; ++q) {
      EXPECT_EQ(count_of(b.prompts[q], "Answer:"), n + 1);
      EXPECT_TRUE(b.prompts[q].ends_with("\n===\nAnswer:"));
      EXPECT_EQ(b.example_ids_per_prompt[q].size(), n);
    }
    // Re-rendering is byte-identical.
    EXPECT_EQ(build_prompts(test, c, ranked(12), lookup, cfg).prompts, b.prompts);
  }
}

TEST(Prompt, BareTestBlock) {
  const auto test = make_sample("t", "a cat", "What animal?", ten("cat", 5));
  PromptConfig cfg;
  cfg.K = 0;
  cfg.N = 0;
  cfg.T = 1;
  cfg.include_head = false;
  ExampleLookup lookup{[&](const std::string&) -> const Sample& { return test; },
                       [](const std::string&) { return std::vector<AnswerCandidate>{}; }};
  const auto b = build_prompts(test, {}, ExampleSelection{"t", {}, {}}, lookup, cfg);
  EXPECT_EQ(b.prompts[0], "Context: a cat\n===\nQuestion: What animal?\n===\nAnswer:");
  EXPECT_EQ(b.prompts[0], render_test_block(test, {}, cfg));
}

TEST(Prompt, ZeroCandidatesUsesPlainHead) {
  PromptConfig cfg;
  cfg.K = 0;
  EXPECT_EQ(prompt_head(cfg), kPlainHead);
  EXPECT_EQ(std::string(kPlainHead).find("candidate"), std::string::npos);
  cfg.task_format = TaskFormat::multiple_choice;
  EXPECT_EQ(prompt_head(cfg), kPlainChoiceHead);
  cfg.K = 3;
  EXPECT_EQ(prompt_head(cfg), kChoiceHead);
  const auto s = make_sample("x", "c", "q", ten("a", 3));
  EXPECT_EQ(render_example_block(s, {}, PromptConfig{.K = 0}).find("Candidates"), std::string::npos);
}

TEST(Prompt, TogglesOnlyChangeTheirLine) {
  auto s = make_sample("x", "a cat", "What?", ten("cat", 4));
  s.tags = std::vector<std::string>{"animal", "pet"};
  const auto c = cands({{"cat", 0.9}, {"dog", 0.25}});
  PromptConfig cfg;
  cfg.K = 2;
  EXPECT_EQ(render_test_block(s, c, cfg), "Context: a cat\n===\nQuestion: What?\n===\nCandidates: cat(0.90), dog(0.25)\n===\nAnswer:");
  cfg.include_scores = false;
  EXPECT_EQ(render_test_block(s, c, cfg), "Context: a cat\n===\nQuestion: What?\n===\nCandidates: cat, dog\n===\nAnswer:");
  cfg.include_caption = false;
  EXPECT_EQ(render_test_block(s, c, cfg), "Question: What?\n===\nCandidates: cat, dog\n===\nAnswer:");
  cfg.include_tags = true;
  EXPECT_EQ(render_test_block(s, c, cfg), "Tags: animal, pet\n===\nQuestion: What?\n===\nCandidates: cat, dog\n===\nAnswer:");
  cfg.score_decimals = 3;
  cfg.include_scores = true;
  cfg.include_caption = true;
  cfg.include_tags = false;
  EXPECT_NE(render_test_block(s, c, cfg).find("cat(0.900), dog(0.250)"), std::string::npos);
}

TEST(Prompt, FormatErrors) {
  const auto s = make_sample("x", "c", "q", ten("a", 3));
  PromptConfig cfg;
  cfg.K = 0;
  cfg.task_format = TaskFormat::multiple_choice;
  EXPECT_THROW(render_test_block(s, {}, cfg), ConfigError);
  cfg.task_format = TaskFormat::ocr;
  EXPECT_THROW(render_test_block(s, {}, cfg), ConfigError);
  cfg.task_format = TaskFormat::standard;
  cfg.K = 2;
  EXPECT_THROW(render_test_block(s, cands({{"a", 0.5}}), cfg), ConfigError);
  cfg.T = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Prompt, BudgetDropsLeastSimilarExamplesFirst) {
  std::vector<Sample> pool;
  for (int i = 0; i < 4; ++i) pool.push_back(make_sample("r" + std::to_string(i), "caption", "q?", ten("x" + std::to_string(i), 5)));
  const auto test = make_sample("t", "caption", "q?", ten("y", 5));
  ExampleLookup lookup{[&](const std::string& id) -> const Sample& { return pool.at(std::stoul(id.substr(1))); },
                       [](const std::string&) { return std::vector<AnswerCandidate>{}; }};
  PromptConfig cfg;
  cfg.K = 0;
  cfg.N = 4;
  cfg.T = 1;
  const auto full = build_prompts(test, {}, ranked(4), lookup, cfg).prompts[0];
  // Budget that fits exactly two examples.
  cfg.N = 2;
  const auto two = build_prompts(test, {}, ranked(2), lookup, cfg).prompts[0];
  cfg.N = 4;
  cfg.max_prompt_chars = two.size();
  const auto b = build_prompts(test, {}, ranked(4), lookup, cfg);
  EXPECT_EQ(b.prompts[0], two);
  EXPECT_EQ(b.example_ids_per_prompt[0], (std::vector<std::string>{"r1", "r0"}));
  EXPECT_LT(b.prompts[0].size(), full.size());
  cfg.max_prompt_chars = 10;
  EXPECT_THROW(build_prompts(test, {}, ranked(4), lookup, cfg), ConfigError);
}

// ---------------------------------------------------------------------------
// Normalization and voting

TEST(Normalize, ReferenceTable) {
  // Hand-built from the rules: lowercase, trim, collapse whitespace, drop
  // trailing periods, drop leading articles while another token remains,
  // number words zero..ten to digits.
  const std::vector<std::pair<std::string, std::string>> table{
      {"The Helium.", "helium"},     {"two", "2"},
      {"  Dirt   Bike ", "dirt bike"}, {"a dog", "dog"},
      {"An Apple...", "apple"},      {"the", "the"},
      {"a", "a"},                    {"the a cat", "cat"},
      {"TEN", "10"},                 {"eleven", "eleven"},
      {"two dogs", "2 dogs"},        {"One Way", "1 way"},
      {"zero.", "0"},                {"", ""},
      {"   ", ""},                   {"...", ""},
      {"Mr. Smith", "mr. smith"},    {"U.S.A.", "u.s.a"},
      {"cat. ", "cat"},              {"cat .", "cat"},
      {"banana\tsplit", "banana split"}, {"the  Three  Bears", "3 bears"},
      {"theater", "theater"},        {"another", "another"},
      {"a lot", "lot"},              {"there are three", "there are 3"},
      {"Eight-Nine", "eight-nine"},  {"nine9", "nine9"},
      {"SEVEN.", "7"},               {"an", "an"},
      {"the an", "an"},              {"New York", "new york"},
      {"new  york.", "new york"},    {"\xc3\x89" "COLE", "\xc3\x89" "cole"},
      {"12", "12"},                  {"3.5", "3.5"},
      {"five.", "5"},                {"Five Guys", "5 guys"},
      {"\nleash\n", "leash"},        {"A.", "a"},
      {"the cat in the hat", "cat in the hat"}, {"A Few", "few"},
      {"four, five", "four, 5"},     {"Six-pack", "six-pack"},
      {"The END.", "end"},           {"surf board", "surf board"},
      {"yes.", "yes"},               {"No", "no"},
      {"teN", "10"},                 {"a an the", "the"},
  };
  ASSERT_EQ(table.size(), 50u);
  for (const auto& [in, want] : table) {
    EXPECT_EQ(normalize_answer(in), want) << '"' << in << '"';
    EXPECT_EQ(normalize_answer(normalize_answer(in)), normalize_answer(in)) << '"' << in << '"';
  }
}

TEST(Normalize, IdempotentOnRandomStrings) {
  std::mt19937_64 g(9);
  const std::vector<std::string> atoms{"a", "an", "the", "The", "two", "Ten", "cat", ".", " ", "  ", "Dog.", "x"};
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    for (int k = 0, n = int(g() % 6); k < n; ++k) s += atoms[g() % atoms.size()] + (g() % 2 ? " " : "");
    EXPECT_EQ(normalize_answer(normalize_answer(s)), normalize_answer(s)) << '"' << s << '"';
  }
}

TEST(Vote, Examples) {
  const std::vector<std::string> strict{"x", "x", "x", "y", "z"};
  EXPECT_EQ(majority_vote(strict, {}).answer, "x");
  EXPECT_FALSE(majority_vote(strict, {}).tie_broken);
  const std::vector<std::string> tie{"x", "x", "y", "y", "z"};
  const auto v = majority_vote(tie, cands({{"y", 0.6}, {"x", 0.3}}));
  EXPECT_EQ(v.answer, "y");
  EXPECT_TRUE(v.tie_broken);
  // Neither tied answer among candidates: earliest query index.
  const std::vector<std::string> late{"z", "y", "x", "x", "y"};
  EXPECT_EQ(majority_vote(late, {}).answer, "y");
  const std::vector<std::string> one{"solo"};
  EXPECT_EQ(majority_vote(one, {}).answer, "solo");
  EXPECT_THROW(majority_vote({}, {}), ConfigError);
}

TEST(Vote, PermutationInvariantWithoutIndexTieBreak) {
  std::mt19937_64 g(10);
  const std::vector<std::string> pool{"a", "b", "c", "d"};
  const auto c = cands({{"a", 0.4}, {"b", 0.3}, {"c", 0.2}, {"d", 0.1}});
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> answers(1 + g() % 7);
    for (auto& a : answers) a = pool[g() % pool.size()];
    const auto base = majority_vote(answers, c);
    EXPECT_NE(std::find(answers.begin(), answers.end(), base.answer), answers.end());
    for (int p = 0; p < 5; ++p) {
      std::shuffle(answers.begin(), answers.end(), g);
      EXPECT_EQ(majority_vote(answers, c).answer, base.answer);
    }
  }
}

TEST(Choice, Projection) {
  const std::vector<std::string> four{"knee", "elbow", "rear", "board"};
  EXPECT_EQ(project_to_choice("(B)", four), 1u);
  EXPECT_EQ(project_to_choice("knee", four), 0u);
  const std::vector<std::string> two{"bike", "car"};
  EXPECT_EQ(project_to_choice("dirt bike", two), 0u);
  EXPECT_NEAR(token_f1("dirt bike", "bike"), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(token_f1("dirt bike", "car"), 0.0);
  // No overlap anywhere: the lowest index.
  EXPECT_EQ(project_to_choice("zebra", two), 0u);
  // A letter outside the choice range falls back to overlap.
  EXPECT_EQ(project_to_choice("(E) car", two), 1u);
  EXPECT_THROW(project_to_choice("x", {}), ConfigError);
}

TEST(Choice, ModalAnswerTiesGoToFirstSeen) {
  const std::vector<std::string> a{"Dog", "cat", "the dog", "cat", "bird"};
  EXPECT_EQ(modal_answer(a), "dog");
}

// ---------------------------------------------------------------------------
// Evaluator

TEST(SoftScore, SimpleMetric) {
  Sample s = make_sample("s", "c", "q", ten("leash", 4));
  EXPECT_DOUBLE_EQ(soft_score("Leash.", s), 1.0);
  s.answers = ten("leash", 2);
  EXPECT_NEAR(soft_score("leash", s), 0.6667, 1e-4);
  EXPECT_DOUBLE_EQ(soft_score("rope", s), 0.0);
  s.answers.pop_back();
  EXPECT_THROW(soft_score("leash", s), ConfigError);
  EXPECT_NO_THROW(soft_score("leash", s, SoftMetric::simple, false));
}

TEST(SoftScore, OfficialMetricAveragesLeaveOneOut) {
  for (std::size_t m = 0; m <= 10; ++m) {
    const Sample s = make_sample("s", "c", "q", ten("leash", m));
    // Explicit enumeration of the ten 9-annotator subsets.
    double total = 0;
    for (std::size_t drop = 0; drop < 10; ++drop) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < 10; ++i) hits += i != drop && s.answers[i] == "leash";
      total += std::min(1.0, double(hits) / 3.0);
    }
    EXPECT_NEAR(soft_score("leash", s, SoftMetric::official), total / 10.0, 1e-15) << m;
  }
  EXPECT_NEAR(soft_score("leash", make_sample("s", "c", "q", ten("leash", 3)), SoftMetric::official), 0.9, 1e-12);
}

TEST(HitRate, TakesBestSoftScoreAmongTopK) {
  Sample s = make_sample("s", "c", "q", {"cat", "cat", "kitten", "kitten", "kitten", "kitten", "a", "b", "c", "d"});
  CandidateTable t(3);
  t.set("s", cands({{"cat", 0.9}, {"kitten", 0.5}, {"dog", 0.1}}));
  const std::vector<const Sample*> v{&s};
  EXPECT_NEAR(hit_rate(t, v, 1), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(hit_rate(t, v, 2), 1.0);
  EXPECT_DOUBLE_EQ(hit_rate(t, v, 3), 1.0);
  EXPECT_THROW(hit_rate(t, v, 0), ConfigError);
}

TEST(HitRate, FixtureMatchesBruteForceAndIsMonotone) {
  TempDir dir;
  FixtureConfig cfg;
  cfg.write_scorers = false;
  cfg.gaussian_rows = 10;
  generate_fixtures(cfg, dir.path());
  const auto ds = load_manifest(dir / "manifest.json");
  const auto* logits = ds.bank(BankKind::answer_logits);
  CandidateTable table(10);
  std::vector<const Sample*> samples;
  for (const auto& id : ds.test_ids()) {
    table.set(id, top_k_candidates(logits->row(id), ds.vocab(), 10));
    samples.push_back(&ds.sample(id));
  }
  ASSERT_EQ(samples.size(), 200u);
  // The fixture only perturbs annotator strings by case, a trailing period
  // or a leading "the "; undo exactly those.
  auto clean = [](std::string a) {
    for (auto& c : a) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!a.empty() && a.back() == '.') a.pop_back();
    if (a.rfind("the ", 0) == 0) a = a.substr(4);
    return a;
  };
  double prev = 0;
  for (std::size_t k : {1, 2, 5, 10}) {
    double total = 0;
    for (const auto* s : samples) {
      double best = 0;
      const auto& c = table.at(s->id);
      for (std::size_t i = 0; i < k; ++i) {
        double hits = 0;
        for (const auto& a : s->answers) hits += clean(a) == c[i].answer;
        best = std::max(best, std::min(1.0, hits / 3.0));
      }
      total += best;
    }
    const double h = hit_rate(table, samples, k);
    EXPECT_NEAR(h, total / 200.0, 1e-12) << k;
    EXPECT_GE(h, prev);
    prev = h;
  }
}

TEST(Behavior, Classes) {
  const auto c = cands({{"Dog", 0.5}, {"cat", 0.4}, {"bird", 0.3}, {"fish", 0.2}, {"cow", 0.1}});
  EXPECT_EQ(behavior_classify("the dog", c, 10), Behavior::keep_top1);
  EXPECT_EQ(behavior_classify("fish", c, 10), Behavior::in_top_2_to_K);
  EXPECT_EQ(behavior_classify("fish", c, 3), Behavior::beyond_top_K);
  EXPECT_EQ(behavior_classify("zebra", c, 10), Behavior::beyond_top_K);
  EXPECT_THROW(behavior_classify("x", {}, 1), ConfigError);
  EXPECT_EQ(behavior_classify("x", {}, 0), Behavior::beyond_top_K);
}

TEST(Confusion, FlipsAndDegenerateCases) {
  std::map<std::string, double> s1, s2;
  for (int i = 0; i < 100; ++i) {
    const auto id = "s" + std::to_string(i);
    s1[id] = i < 50 ? 1.0 : 0.0;
    s2[id] = i < 60 ? 1.0 : 0.0;  // ten wrong answers flipped
  }
  const auto c = stage_confusion(s1, s2);
  EXPECT_DOUBLE_EQ(c.wrong_correct, 0.10);
  EXPECT_DOUBLE_EQ(c.correct_correct, 0.50);
  EXPECT_DOUBLE_EQ(c.correct_wrong, 0.0);
  EXPECT_DOUBLE_EQ(c.wrong_wrong, 0.40);
  const auto same = stage_confusion(s1, s1);
  EXPECT_EQ(same.correct_wrong + same.wrong_correct, 0.0);
  std::map<std::string, double> zeros;
  for (const auto& [id, v] : s1) zeros[id] = 0.0;
  EXPECT_DOUBLE_EQ(stage_confusion(zeros, zeros).wrong_wrong, 1.0);
  // Threshold: 2/3 counts as correct at tau 0.5 but not at 1.0.
  const std::map<std::string, double> partial{{"a", 2.0 / 3.0}};
  EXPECT_DOUBLE_EQ(stage_confusion(partial, partial, 0.5).correct_correct, 1.0);
  EXPECT_DOUBLE_EQ(stage_confusion(partial, partial).wrong_wrong, 1.0);
  EXPECT_THROW(stage_confusion(partial, partial, 0.0), ConfigError);
  EXPECT_THROW(stage_confusion(partial, {{"b", 1.0}}), ConfigError);
  EXPECT_THROW(stage_confusion(partial, {}), ConfigError);
}

TEST(Grid, NullCellsAndDuplicates) {
  EvalReport r;
  r.accuracy = 0.5;
  r.stage1_accuracy = 0.4;
  r.hit_rate = {{1, 0.4}, {5, 0.7}};
  r.example_hit_rate = 0.9;
  const std::vector<GridRequest> req{{"K=0", {{"K", 0}}}, {"K=5", {{"K", 5}}}, {"K=9", {{"K", 9}}}};
  const auto cells = ablation_grid(req, {{"K=0", r}, {"K=5", r}});
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_FALSE(cells[0].hit_rate.has_value());
  EXPECT_EQ(cells[0].accuracy, 0.5);
  EXPECT_EQ(cells[1].hit_rate, 0.7);
  EXPECT_FALSE(cells[2].accuracy.has_value());
  const auto j = grid_to_json(cells);
  EXPECT_TRUE(j[2]["accuracy"].is_null());
  EXPECT_TRUE(j[0]["hit_rate"].is_null());
  EXPECT_EQ(j.size(), 3u);
  const auto csv = grid_to_csv(cells);
  EXPECT_EQ(count_of(csv, "\n"), 4u);
  EXPECT_NE(csv.find("\"K=5\",5,,,,,,,,,0.700000,0.900000,0.400000,0.500000\n"), std::string::npos) << csv;
  EXPECT_NE(grid_to_markdown(cells).find("| K=9 | - | - | - |"), std::string::npos);
  const std::vector<GridRequest> dup{{"a", {{"K", 1}}}, {"a", {{"K", 2}}}};
  EXPECT_THROW(ablation_grid(dup, {}), ConfigError);
  EXPECT_EQ(ablation_grid({{"only", {{"K", 1}}}}, {{"only", r}}).size(), 1u);
}

TEST(Report, JsonRoundTripAndPercentages) {
  EvalReport r;
  r.n_samples = 3;
  r.n_failed = 1;
  r.accuracy = 1.0 / 3.0;
  r.stage1_accuracy = 0.5;
  r.hit_rate = {{1, 0.5}, {10, 0.75}};
  for (auto b : {Behavior::keep_top1, Behavior::in_top_2_to_K, Behavior::beyond_top_K}) r.behavior[b] = {1.0 / 3, 0.1, 0.2, 1};
  r.confusion = {0.25, 0.25, 0.25, 0.25};
  r.per_category["animals"] = {0.1, 0.2};
  const auto back = report_from_json(nlohmann::json::parse(report_to_json(r).dump()));
  EXPECT_EQ(report_to_json(back).dump(), report_to_json(r).dump());
  EXPECT_EQ(pct(1.0 / 3.0), "33.33");
  EXPECT_EQ(pct(0.123456), "12.35");
  EXPECT_NE(report_to_markdown(r).find("(INCOMPLETE)"), std::string::npos);
}
