#pragma once

// Answer normalization, multi-query majority voting and multiple-choice
// projection. The normalization rules live here only; the evaluator and the
// prompt builder both call into this header.

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prophet/artifact_store.hpp"
#include "prophet/util.hpp"

namespace prophet {

inline constexpr int kNormalizationVersion = 1;

inline std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) lowered += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;

  std::string_view s = trim(lowered);
  while (!s.empty() && (s.back() == '.' || is_space(s.back()))) s.remove_suffix(1);

  auto tokens = split_whitespace(s);
  static constexpr std::array<std::string_view, 3> kArticles{"a", "an", "the"};
  std::size_t first = 0;
  while (tokens.size() - first > 1 &&
         std::find(kArticles.begin(), kArticles.end(), tokens[first]) != kArticles.end()) {
    ++first;
  }
  static const std::unordered_map<std::string, std::string> kNumbers{
      {"zero", "0"}, {"one", "1"}, {"two", "2"},   {"three", "3"}, {"four", "4"}, {"five", "5"},
      {"six", "6"},  {"seven", "7"}, {"eight", "8"}, {"nine", "9"},  {"ten", "10"}};
  std::string out;
  for (std::size_t i = first; i < tokens.size(); ++i) {
    if (i > first) out += ' ';
    auto it = kNumbers.find(tokens[i]);
    out += it == kNumbers.end() ? tokens[i] : it->second;
  }
  return out;
}

// Most frequent normalized annotator answer; ties go to the one seen first.
inline std::string modal_answer(std::span<const std::string> answers) {
  if (answers.empty()) throw ConfigError("modal_answer on an empty answer list");
  std::vector<std::pair<std::string, int>> counts;
  for (const auto& a : answers) {
    auto n = normalize_answer(a);
    auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& c) { return c.first == n; });
    if (it == counts.end()) {
      counts.emplace_back(std::move(n), 1);
    } else {
      ++it->second;
    }
  }
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

struct VoteOutcome {
  std::string answer;
  bool tie_broken = false;
};

// Highest count wins. Count ties go to the answer with the higher stage-1
// candidate confidence (absent answers count as 0), then to the answer that
// occurred at the lowest query index.
inline VoteOutcome majority_vote(std::span<const std::string> answers, std::span<const AnswerCandidate> candidates) {
  if (answers.empty()) throw ConfigError("majority_vote needs at least one answer");
  struct Tally {
    std::string answer;
    int count = 0;
    std::size_t first_index = 0;
  };
  std::vector<Tally> tallies;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    auto it = std::find_if(tallies.begin(), tallies.end(), [&](const Tally& t) { return t.answer == answers[i]; });
    if (it == tallies.end()) {
      tallies.push_back({answers[i], 1, i});
    } else {
      ++it->count;
    }
  }
  int best_count = 0;
  for (const auto& t : tallies) best_count = std::max(best_count, t.count);
  std::vector<const Tally*> tied;
  for (const auto& t : tallies) {
    if (t.count == best_count) tied.push_back(&t);
  }
  auto confidence = [&](const std::string& a) {
    double best = 0.0;
    for (const auto& c : candidates) {
      if (normalize_answer(c.answer) == a) best = std::max(best, c.score);
    }
    return best;
  };
  const Tally* winner = tied.front();
  double winner_conf = confidence(winner->answer);
  for (std::size_t i = 1; i < tied.size(); ++i) {
    const double c = confidence(tied[i]->answer);
    if (c > winner_conf || (c == winner_conf && tied[i]->first_index < winner->first_index)) {
      winner = tied[i];
      winner_conf = c;
    }
  }
  return {winner->answer, tied.size() > 1};
}

// "(B)" -> 1. Accepts the first parenthesized uppercase letter anywhere in
// the text.
inline std::optional<std::size_t> parse_choice_letter(std::string_view text) {
  for (std::size_t i = 0; i + 2 < text.size(); ++i) {
    if (text[i] == '(' && text[i + 1] >= 'A' && text[i + 1] <= 'Z' && text[i + 2] == ')') {
      return static_cast<std::size_t>(text[i + 1] - 'A');
    }
  }
  return std::nullopt;
}

inline std::string choice_letter(std::size_t index) { return std::string("(") + static_cast<char>('A' + index) + ")"; }

// Harmonic mean of token precision and recall over normalized tokens.
inline double token_f1(std::string_view a, std::string_view b) {
  const auto ta = split_whitespace(normalize_answer(a));
  const auto tb = split_whitespace(normalize_answer(b));
  if (ta.empty() || tb.empty()) return 0.0;
  std::map<std::string, int> bag;
  for (const auto& t : tb) ++bag[t];
  int common = 0;
  for (const auto& t : ta) {
    auto it = bag.find(t);
    if (it != bag.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(ta.size());
  const double r = static_cast<double>(common) / static_cast<double>(tb.size());
  return 2.0 * p * r / (p + r);
}

inline std::size_t project_to_choice(std::string_view answer, std::span<const std::string> choices) {
  if (choices.empty()) throw ConfigError("project_to_choice needs at least one choice");
  if (auto letter = parse_choice_letter(answer); letter && *letter < choices.size()) return *letter;
  std::size_t best = 0;
  double best_f1 = -1.0;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const double f1 = token_f1(answer, choices[i]);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = i;
    }
  }
  return best;
}

struct QueryVote {
  std::size_t query_index = 0;
  std::string parsed_answer;
  std::string normalized_answer;
};

struct VoteRecord {
  std::string sample_id;
  std::vector<QueryVote> per_query;
  std::string final_answer;
  bool tie_broken = false;
};

}  // namespace prophet
