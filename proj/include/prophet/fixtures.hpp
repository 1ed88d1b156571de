#pragma once

// Deterministic synthetic datasets. Every sample belongs to an answer class;
// its fused vector is the class center plus noise, so samples sharing an
// answer cluster together, and its answer_logits come from a noisier view of
// the same vector scored against per-answer centers. A ledger of the planted
// truths is written next to the artifacts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "prophet/artifact_store.hpp"
#include "prophet/util.hpp"

namespace prophet {

struct FixtureConfig {
  std::uint64_t seed = 7;
  std::size_t n_test = 200;
  std::size_t n_train = 1000;
  std::size_t dim = 64;
  std::size_t n_classes = 60;
  std::size_t n_distractors = 60;
  double feature_noise = 1.5;   // fused = center + feature_noise * N(0, I)
  double view_noise = 3.0;      // question / image banks are weaker views
  double model_noise = 2.2;     // extra noise seen by the stage-1 scorer
  double logit_gain = 8.0;
  double logit_offset = 3.0;
  std::size_t max_group = 6;
  std::size_t gaussian_rows = 1000;
  bool write_scorers = true;
};

struct FixtureClass {
  std::string primary;
  std::string alternate;
  std::string category;
};

struct FixtureSummary {
  fs::path manifest_path;
  std::size_t samples = 0;
  std::size_t vocab_size = 0;
};

namespace detail {

inline const std::array<std::string_view, 10> kFixtureCategories{
    "vehicles", "brands", "objects", "sports", "cooking", "geography", "people", "plants", "science", "weather"};

inline const std::array<std::string_view, 10> kQuestionTemplates{
    "What kind of vehicle is this?",        "What brand is shown here?",
    "What is this object used for?",        "What sport can be played here?",
    "What dish is being prepared?",         "Which place is this likely to be?",
    "What is the person doing?",            "What plant is growing here?",
    "What is this made of?",                "What weather is shown?"};

inline bool reserved_word(const std::string& w) {
  static const std::array<std::string_view, 14> kReserved{"a",    "an",   "the", "zero",  "one",   "two",   "three",
                                                          "four", "five", "six", "seven", "eight", "nine",  "ten"};
  return std::find(kReserved.begin(), kReserved.end(), w) != kReserved.end();
}

// Pronounceable, unique consonant-vowel words.
inline std::vector<std::string> make_words(Rng& rng, std::size_t n) {
  static constexpr std::string_view kCons = "bdfgklmnprstvz";
  static constexpr std::string_view kVow = "aeiou";
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  while (out.size() < n) {
    std::string w;
    const auto syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += kCons[rng.below(kCons.size())];
      w += kVow[rng.below(kVow.size())];
    }
    if (reserved_word(w) || !seen.insert(w).second) continue;
    out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<float> gaussian_vector(Rng& rng, std::size_t dim, double scale = 1.0) {
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

inline std::vector<float> noisy(Rng& rng, const std::vector<float>& base, double sigma) {
  std::vector<float> v(base.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(base[i] + sigma * rng.normal());
  return v;
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

inline std::string capitalized(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

}  // namespace detail

// Writes manifest.json, the banks, vocab.txt, vocab_generative.txt,
// scorers/<test id>.json, gaussian.prfb and ledger.json into `dir`.
inline FixtureSummary generate_fixtures(const FixtureConfig& cfg, const fs::path& dir) {
  if (cfg.n_classes < 4) throw ConfigError("fixtures need at least 4 answer classes");
  if (cfg.dim < 2) throw ConfigError("fixture dim must be >= 2");
  if (cfg.max_group < 1) throw ConfigError("max_group must be >= 1");
  fs::create_directories(dir);
  Rng rng(cfg.seed, "fixtures");

  // Answer space.
  auto words = detail::make_words(rng, 3 * cfg.n_classes + cfg.n_distractors);
  std::vector<FixtureClass> classes(cfg.n_classes);
  std::size_t w = 0;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    classes[c].primary = c % 7 == 3 ? words[w] + " " + words[w + 1] : words[w];
    w += 2;
    classes[c].alternate = words[w++];
    classes[c].category = std::string(detail::kFixtureCategories[c % detail::kFixtureCategories.size()]);
  }
  std::vector<std::string> distractors(words.begin() + static_cast<std::ptrdiff_t>(w), words.end());

  std::vector<std::vector<float>> centers;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) centers.push_back(detail::gaussian_vector(rng, cfg.dim));

  // Vocabulary entries with their centers, in a shuffled order so that index
  // tie-breaks carry no signal.
  struct Entry {
    std::string text;
    std::vector<float> center;
  };
  std::vector<Entry> entries;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    entries.push_back({classes[c].primary, centers[c]});
    entries.push_back({classes[c].alternate, detail::noisy(rng, centers[c], 0.8)});
  }
  for (const auto& d : distractors) entries.push_back({d, detail::gaussian_vector(rng, cfg.dim)});
  for (std::size_t i = entries.size(); i > 1; --i) std::swap(entries[i - 1], entries[rng.below(i)]);
  std::vector<std::string> vocab_entries;
  for (const auto& e : entries) vocab_entries.push_back(e.text);
  const AnswerVocabulary vocab(AnswerVocabulary::Type::discriminative, vocab_entries);

  // Samples.
  Manifest m;
  m.dataset_name = "synthetic";
  std::vector<std::string> ids;
  std::vector<float> fused, question, image, logits, grouped_rows;
  std::vector<std::uint64_t> offsets{0};
  ordered_json ledger_samples = ordered_json::array();
  const std::size_t total = cfg.n_train + cfg.n_test;

  for (std::size_t i = 0; i < total; ++i) {
    const bool is_train = i < cfg.n_train;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04zu", is_train ? "tr" : "te", is_train ? i : i - cfg.n_train);
    const std::string id = buf;
    Rng srng(cfg.seed, id);
    const auto c = static_cast<std::size_t>(srng.below(cfg.n_classes));
    const auto& cls = classes[c];

    // Ten annotators: 3-10 give the primary answer, strictly fewer give the
    // alternate, the rest pick distinct distractors.
    const auto gold_count = static_cast<std::size_t>(3 + srng.below(8));
    const auto rest = 10 - gold_count;
    const auto alt_count = std::min<std::size_t>(rest, srng.below(std::min(rest, gold_count - 1) + 1));
    std::vector<std::string> answers(gold_count, cls.primary);
    answers.insert(answers.end(), alt_count, cls.alternate);
    std::vector<std::size_t> picks;
    while (answers.size() < 10) {
      const auto d = static_cast<std::size_t>(srng.below(distractors.size()));
      if (std::find(picks.begin(), picks.end(), d) != picks.end()) continue;
      picks.push_back(d);
      answers.push_back(distractors[d]);
    }
    for (auto& a : answers) {
      const auto r = srng.below(20);
      if (r == 0) a = detail::capitalized(a);
      if (r == 1) a += ".";
      if (r == 2) a = "the " + a;
    }
    for (std::size_t k = answers.size(); k > 1; --k) std::swap(answers[k - 1], answers[srng.below(k)]);

    Sample s;
    s.id = id;
    s.split = is_train ? Split::train : Split::test;
    const auto tmpl = c % detail::kQuestionTemplates.size();
    s.question = std::string(detail::kQuestionTemplates[tmpl]);
    s.caption = "a picture of a " + distractors[srng.below(distractors.size())] + " next to a " +
                (srng.below(2) == 0 ? cls.alternate : distractors[srng.below(distractors.size())]);
    s.answers = answers;
    s.category = cls.category;
    std::vector<std::string> ocr;
    for (std::size_t k = 0, n = srng.below(4); k < n; ++k) ocr.push_back(distractors[srng.below(distractors.size())]);
    s.ocr_tokens = ocr;
    s.hint = "The picture was taken outdoors.";
    std::vector<std::string> choices{cls.primary};
    while (choices.size() < 4) {
      const auto& other = classes[srng.below(cfg.n_classes)].primary;
      if (std::find(choices.begin(), choices.end(), other) == choices.end()) choices.push_back(other);
    }
    for (std::size_t k = choices.size(); k > 1; --k) std::swap(choices[k - 1], choices[srng.below(k)]);
    s.choices = choices;
    m.samples.push_back(std::move(s));
    ids.push_back(id);

    const auto f = detail::noisy(srng, centers[c], cfg.feature_noise);
    fused.insert(fused.end(), f.begin(), f.end());
    const auto q = detail::noisy(srng, centers[c], cfg.view_noise);
    question.insert(question.end(), q.begin(), q.end());
    const auto im = detail::noisy(srng, centers[c], cfg.view_noise);
    image.insert(image.end(), im.begin(), im.end());

    const auto view = detail::noisy(srng, f, cfg.model_noise);
    for (const auto& e : entries) {
      const double z = cfg.logit_gain * detail::cosine(view, e.center) - cfg.logit_offset;
      auto p = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
      p = std::clamp(p, 1e-6f, 1.0f);
      logits.push_back(p);
    }

    const auto len = static_cast<std::size_t>(1 + srng.below(cfg.max_group));
    for (std::size_t k = 0; k < len; ++k) {
      const auto row = detail::noisy(srng, centers[c], cfg.feature_noise);
      grouped_rows.insert(grouped_rows.end(), row.begin(), row.end());
    }
    offsets.push_back(offsets.back() + len);

    ledger_samples.push_back({{"id", id},
                              {"class", c},
                              {"gold", cls.primary},
                              {"gold_count", gold_count},
                              {"alternate_count", alt_count},
                              {"group_length", len}});
  }

  write_feature_bank(dir / "fused.prfb", FeatureBank(BankKind::fused, cfg.dim, ids, fused));
  write_feature_bank(dir / "question.prfb", FeatureBank(BankKind::question, cfg.dim, ids, question));
  write_feature_bank(dir / "image.prfb", FeatureBank(BankKind::image, cfg.dim, ids, image));
  write_feature_bank(dir / "answer_logits.prfb", FeatureBank(BankKind::answer_logits, vocab.size(), ids, logits));
  write_grouped_bank(dir / "fused_grouped.prfg", GroupedFeatureBank(BankKind::fused, cfg.dim, ids, offsets, grouped_rows));
  write_vocabulary(dir / "vocab.txt", vocab);

  m.banks = {{BankKind::fused, "fused.prfb", false, std::nullopt},
             {BankKind::question, "question.prfb", false, std::nullopt},
             {BankKind::image, "image.prfb", false, std::nullopt},
             {BankKind::answer_logits, "answer_logits.prfb", false, std::nullopt},
             {BankKind::fused, "fused_grouped.prfg", true, std::nullopt}};
  m.vocab = {AnswerVocabulary::Type::discriminative, "vocab.txt"};
  m.candidates = CandidateSource{CandidateSource::Mode::logits, ""};
  write_manifest(dir / "manifest.json", m);

  // Standalone Gaussian bank for loader statistics checks.
  std::vector<std::string> gids;
  std::vector<float> grows;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < cfg.gaussian_rows; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "g%04zu", i);
    gids.emplace_back(buf);
    auto v = detail::gaussian_vector(rng, cfg.dim);
    for (float x : v) {
      sum += x;
      sumsq += static_cast<double>(x) * x;
    }
    grows.insert(grows.end(), v.begin(), v.end());
  }
  write_feature_bank(dir / "gaussian.prfb", FeatureBank(BankKind::fused, cfg.dim, gids, grows));
  const double n_vals = static_cast<double>(cfg.gaussian_rows * cfg.dim);
  const double g_mean = sum / n_vals;

  // Generative side: per-test-sample scorer tables derived from the logits.
  std::vector<std::string> gen_entries{std::string(kBos), std::string(kEos)};
  {
    std::unordered_set<std::string> seen(gen_entries.begin(), gen_entries.end());
    for (const auto& e : vocab_entries) {
      for (const auto& t : split_whitespace(e)) {
        if (seen.insert(t).second) gen_entries.push_back(t);
      }
    }
  }
  write_vocabulary(dir / "vocab_generative.txt", AnswerVocabulary(AnswerVocabulary::Type::generative, gen_entries));
  if (cfg.write_scorers) {
    fs::create_directories(dir / "scorers");
    for (std::size_t i = cfg.n_train; i < total; ++i) {
      std::vector<std::size_t> order(vocab.size());
      std::iota(order.begin(), order.end(), 0);
      const float* row = logits.data() + i * vocab.size();
      std::partial_sort(order.begin(), order.begin() + 10, order.end(),
                        [&](std::size_t a, std::size_t b) { return row[a] != row[b] ? row[a] > row[b] : a < b; });
      std::map<std::string, double> first;
      std::map<std::string, std::map<std::string, double>> second;
      double z = 0.0;
      for (std::size_t k = 0; k < 10; ++k) z += row[order[k]];
      for (std::size_t k = 0; k < 10; ++k) {
        const auto toks = split_whitespace(vocab[order[k]]);
        first[toks[0]] += row[order[k]] / z;
        if (toks.size() > 1) second[toks[0]][toks[1]] += 1.0;
      }
      ordered_json sj;
      sj["default"] = {{std::string(kEos), 1.0}};
      sj["prefixes"] = ordered_json::object();
      sj["prefixes"][std::string(kBos)] = first;
      for (const auto& [tok, nexts] : second) {
        ordered_json d = ordered_json::object();
        double cont = 0.0;
        for (const auto& [nt, cnt] : nexts) cont += cnt;
        const bool also_single = std::any_of(order.begin(), order.begin() + 10, [&](std::size_t k) { return vocab[k] == tok; });
        const double cont_mass = also_single ? 0.5 : 0.8;
        for (const auto& [nt, cnt] : nexts) d[nt] = cont_mass * cnt / cont;
        d[std::string(kEos)] = 1.0 - cont_mass;
        sj["prefixes"][std::string(kBos) + " " + tok] = d;
      }
      detail::write_file(dir / "scorers" / (ids[i] + ".json"), sj.dump(1) + "\n");
    }
  }

  ordered_json ledger;
  ledger["seed"] = cfg.seed;
  ledger["n_train"] = cfg.n_train;
  ledger["n_test"] = cfg.n_test;
  ledger["dim"] = cfg.dim;
  ledger["classes"] = ordered_json::array();
  for (const auto& c : classes) {
    ledger["classes"].push_back({{"primary", c.primary}, {"alternate", c.alternate}, {"category", c.category}});
  }
  ledger["samples"] = std::move(ledger_samples);
  ledger["grouped_total_rows"] = offsets.back();
  ledger["gaussian"] = {{"rows", cfg.gaussian_rows},
                        {"dim", cfg.dim},
                        {"mean", g_mean},
                        {"variance", sumsq / n_vals - g_mean * g_mean}};
  detail::write_file(dir / "ledger.json", ledger.dump(2) + "\n");

  return {dir / "manifest.json", total, vocab.size()};
}

// Planted gold answers keyed by sample id.
inline std::unordered_map<std::string, std::string> load_fixture_gold(const fs::path& ledger_path) {
  std::unordered_map<std::string, std::string> gold;
  try {
    const auto j = nlohmann::json::parse(detail::read_file_text(ledger_path));
    for (const auto& s : j.at("samples")) gold.emplace(s.at("id").get<std::string>(), s.at("gold").get<std::string>());
  } catch (const nlohmann::json::exception& ex) {
    throw ArtifactError(ledger_path.string() + ": " + ex.what());
  }
  return gold;
}

}  // namespace prophet
