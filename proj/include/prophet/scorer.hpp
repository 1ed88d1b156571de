#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prophet/artifact_store.hpp"
#include "prophet/heuristics.hpp"

namespace prophet {

// Scorer backed by a callable; handy for stationary or procedurally defined
// decoders.
class FunctionScorer final : public AutoregressiveScorer {
 public:
  using Fn = std::function<std::vector<double>(std::span<const std::size_t>)>;

  FunctionScorer(AnswerVocabulary vocab, Fn fn) : vocab_(std::move(vocab)), fn_(std::move(fn)) {}

  const AnswerVocabulary& vocabulary() const override { return vocab_; }
  std::vector<double> next_distribution(std::span<const std::size_t> prefix) const override { return fn_(prefix); }

 private:
  AnswerVocabulary vocab_;
  Fn fn_;
};

// Synthetic scorer file:
//   {"vocab": [...], "default": {tok: p, ...}, "prefixes": {"[BOS] w1 w2": {tok: p, ...}, ...}}
// "vocab" is optional when a vocabulary is supplied by the caller.
class TableScorer final : public AutoregressiveScorer {
 public:
  TableScorer(AnswerVocabulary vocab, std::vector<double> fallback,
              std::unordered_map<std::string, std::vector<double>> table)
      : vocab_(std::move(vocab)), fallback_(std::move(fallback)), table_(std::move(table)) {
    if (vocab_.type() != AnswerVocabulary::Type::generative) {
      throw ConfigError("table scorer needs a generative vocabulary");
    }
    detail::check_distribution(fallback_, vocab_.size());
    for (const auto& [prefix, dist] : table_) {
      if (!starts_with(prefix, kBos)) throw ArtifactError("scorer prefix '" + prefix + "' does not start with [BOS]");
      detail::check_distribution(dist, vocab_.size());
    }
  }

  const AnswerVocabulary& vocabulary() const override { return vocab_; }

  std::vector<double> next_distribution(std::span<const std::size_t> prefix) const override {
    std::string key;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (i) key += ' ';
      key += vocab_[prefix[i]];
    }
    auto it = table_.find(key);
    return it == table_.end() ? fallback_ : it->second;
  }

  std::size_t prefix_count() const { return table_.size(); }

 private:
  AnswerVocabulary vocab_;
  std::vector<double> fallback_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

inline TableScorer table_scorer_from_json(const nlohmann::json& j, const AnswerVocabulary* vocab = nullptr) {
  try {
    AnswerVocabulary v = vocab ? *vocab
                               : AnswerVocabulary(AnswerVocabulary::Type::generative,
                                                  j.at("vocab").get<std::vector<std::string>>());
    auto to_dist = [&](const nlohmann::json& m) {
      std::vector<double> d(v.size(), 0.0);
      for (const auto& [tok, p] : m.items()) {
        auto idx = v.find(tok);
        if (!idx) throw ArtifactError("scorer token '" + tok + "' not in vocabulary");
        d[*idx] = p.get<double>();
      }
      return d;
    };
    auto fallback = to_dist(j.at("default"));
    std::unordered_map<std::string, std::vector<double>> table;
    if (j.contains("prefixes")) {
      for (const auto& [prefix, dist] : j.at("prefixes").items()) table.emplace(prefix, to_dist(dist));
    }
    return TableScorer(std::move(v), std::move(fallback), std::move(table));
  } catch (const nlohmann::json::exception& ex) {
    throw ArtifactError(std::string("scorer file: ") + ex.what());
  }
}

inline TableScorer load_table_scorer(const fs::path& path, const AnswerVocabulary* vocab = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_text(path));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ArtifactError(path.string() + ": " + ex.what());
  }
  return table_scorer_from_json(j, vocab);
}

}  // namespace prophet
