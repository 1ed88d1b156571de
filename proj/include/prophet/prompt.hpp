#pragma once

// Heuristics-enhanced prompt assembly. A prompt is the head, N example
// blocks and the testing block, each line separated from the next by a
// "===" line.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prophet/artifact_store.hpp"
#include "prophet/heuristics.hpp"
#include "prophet/voting.hpp"

namespace prophet {

enum class TaskFormat { standard, multiple_choice, science_hint, ocr };

inline std::string_view to_string(TaskFormat f) {
  switch (f) {
    case TaskFormat::standard: return "standard";
    case TaskFormat::multiple_choice: return "multiple_choice";
    case TaskFormat::science_hint: return "science_hint";
    case TaskFormat::ocr: return "ocr";
  }
  return "?";
}

inline TaskFormat parse_task_format(std::string_view s) {
  for (auto f : {TaskFormat::standard, TaskFormat::multiple_choice, TaskFormat::science_hint, TaskFormat::ocr}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown task format '" + std::string(s) + "'");
}

inline bool has_choices(TaskFormat f) { return f == TaskFormat::multiple_choice || f == TaskFormat::science_hint; }

enum class ExampleOrder { ascending_similarity, descending_similarity };

struct PromptConfig {
  TaskFormat task_format = TaskFormat::standard;
  std::size_t K = 10;
  std::size_t N = 16;
  std::size_t T = 5;
  bool include_head = true;
  bool include_scores = true;
  bool include_caption = true;
  bool include_tags = false;
  int score_decimals = 2;
  std::optional<std::size_t> max_prompt_chars;
  ExampleOrder order = ExampleOrder::ascending_similarity;

  void validate() const {
    if (T < 1) throw ConfigError("T must be >= 1");
    if (score_decimals < 0) throw ConfigError("score_decimals must be >= 0");
  }
};

struct PromptBundle {
  std::string test_sample_id;
  std::vector<std::string> prompts;
  std::vector<std::vector<std::string>> example_ids_per_prompt;
};

inline constexpr std::string_view kSeparator = "\n===\n";

inline constexpr std::string_view kStandardHead =
    "Please answer the question according to the context and the answer candidates. Each answer candidate is "
    "associated with a confidence score within a bracket. The true answer may not be included in the candidates.";
inline constexpr std::string_view kChoiceHead =
    "Please choose the correct answer in the choices according to the context, the question and the answer "
    "candidates. Each answer candidate is associated with a confidence score within a bracket. The true answer may "
    "not be included in the candidates.";
// Heads used when no candidates are shown.
inline constexpr std::string_view kPlainHead = "Please answer the question according to the above context.";
inline constexpr std::string_view kPlainChoiceHead =
    "Please choose the correct answer in the choices according to the context and the question.";

inline std::string_view prompt_head(const PromptConfig& cfg) {
  if (has_choices(cfg.task_format)) return cfg.K > 0 ? kChoiceHead : kPlainChoiceHead;
  return cfg.K > 0 ? kStandardHead : kPlainHead;
}

// Stride partition of ranked neighbors: prompt t gets ranks t, t+T, t+2T, ...
// Each list is then put in the configured order (ascending similarity by
// default, so the closest example sits next to the testing block).
inline std::vector<std::vector<std::string>> partition_examples(const ExampleSelection& selection, std::size_t n,
                                                                std::size_t t,
                                                                ExampleOrder order = ExampleOrder::ascending_similarity) {
  if (t < 1) throw ConfigError("T must be >= 1");
  if (selection.neighbor_ids.size() < n * t) {
    throw ConfigError("selection for '" + selection.test_sample_id + "' has " +
                      std::to_string(selection.neighbor_ids.size()) + " neighbors, need N*T=" + std::to_string(n * t));
  }
  std::vector<std::vector<std::string>> out(t);
  for (std::size_t q = 0; q < t; ++q) {
    for (std::size_t i = 0; i < n; ++i) out[q].push_back(selection.neighbor_ids[q + i * t]);
    if (order == ExampleOrder::ascending_similarity) std::reverse(out[q].begin(), out[q].end());
  }
  return out;
}

namespace detail {

inline std::string candidates_line(std::span<const AnswerCandidate> cands, const PromptConfig& cfg) {
  std::string line = "Candidates: ";
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (i) line += ", ";
    line += cands[i].answer;
    if (cfg.include_scores) line += "(" + format_fixed_half_up(cands[i].score, cfg.score_decimals) + ")";
  }
  return line;
}

inline std::string render_block(const Sample& s, std::span<const AnswerCandidate> cands, const PromptConfig& cfg,
                                const std::optional<std::string>& gold) {
  if (cfg.K > 0 && cands.size() != cfg.K) {
    throw ConfigError("sample '" + s.id + "' has " + std::to_string(cands.size()) + " candidates, K=" +
                      std::to_string(cfg.K));
  }
  std::vector<std::string> lines;
  if (cfg.include_caption) {
    std::string context = s.caption;
    if (cfg.task_format == TaskFormat::science_hint && s.hint && !s.hint->empty()) context += " " + *s.hint;
    lines.push_back("Context: " + context);
  }
  if (cfg.task_format == TaskFormat::ocr) {
    if (!s.ocr_tokens) throw ConfigError("sample '" + s.id + "' has no OCR tokens for the ocr format");
    lines.push_back(s.ocr_tokens->empty() ? "OCR:" : "OCR: " + join(*s.ocr_tokens, ", ") + ".");
  }
  if (cfg.include_tags && s.tags) lines.push_back("Tags: " + join(*s.tags, ", "));
  lines.push_back("Question: " + s.question);
  if (cfg.K > 0) lines.push_back(candidates_line(cands, cfg));
  if (has_choices(cfg.task_format)) {
    if (!s.choices) throw ConfigError("sample '" + s.id + "' has no choices for a multiple-choice format");
    std::string line = "Choices: ";
    for (std::size_t i = 0; i < s.choices->size(); ++i) {
      if (i) line += ", ";
      line += choice_letter(i) + " " + (*s.choices)[i];
    }
    lines.push_back(std::move(line));
  }
  lines.push_back(gold ? "Answer: " + *gold : "Answer:");
  return join(lines, kSeparator);
}

}  // namespace detail

// Gold line of an example: the modal annotator answer, or its choice letter
// for multiple-choice formats.
inline std::string example_gold(const Sample& s, const PromptConfig& cfg) {
  if (s.answers.empty()) throw ConfigError("example sample '" + s.id + "' has no answers");
  const auto gold = modal_answer(s.answers);
  if (!has_choices(cfg.task_format)) return gold;
  if (!s.choices) throw ConfigError("sample '" + s.id + "' has no choices for a multiple-choice format");
  for (std::size_t i = 0; i < s.choices->size(); ++i) {
    if (normalize_answer((*s.choices)[i]) == gold) return choice_letter(i);
  }
  return choice_letter(project_to_choice(gold, *s.choices));
}

inline std::string render_example_block(const Sample& s, std::span<const AnswerCandidate> cands,
                                        const PromptConfig& cfg) {
  return detail::render_block(s, cands, cfg, example_gold(s, cfg));
}

inline std::string render_test_block(const Sample& s, std::span<const AnswerCandidate> cands, const PromptConfig& cfg) {
  return detail::render_block(s, cands, cfg, std::nullopt);
}

// Access to stage-1 outputs of training samples.
struct ExampleLookup {
  std::function<const Sample&(const std::string&)> sample;
  std::function<std::vector<AnswerCandidate>(const std::string&)> candidates;
};

inline std::vector<AnswerCandidate> first_k(std::span<const AnswerCandidate> cands, std::size_t k,
                                            std::string_view id) {
  if (cands.size() < k) {
    throw ConfigError("sample '" + std::string(id) + "' has only " + std::to_string(cands.size()) +
                      " candidates, K=" + std::to_string(k));
  }
  return {cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k)};
}

inline PromptBundle build_prompts(const Sample& test, std::span<const AnswerCandidate> test_candidates,
                                  const ExampleSelection& selection, const ExampleLookup& lookup,
                                  const PromptConfig& cfg) {
  cfg.validate();
  PromptBundle bundle;
  bundle.test_sample_id = test.id;
  const auto test_block = render_test_block(test, first_k(test_candidates, cfg.K, test.id), cfg);
  const auto partitions = partition_examples(selection, cfg.N, cfg.T, cfg.order);

  for (const auto& ids : partitions) {
    std::vector<std::string> kept_ids = ids;
    std::vector<std::string> blocks;
    for (const auto& id : ids) {
      const auto cands = lookup.candidates(id);
      blocks.push_back(render_example_block(lookup.sample(id), first_k(cands, cfg.K, id), cfg));
    }
    auto assemble = [&] {
      std::vector<std::string> parts;
      if (cfg.include_head) parts.emplace_back(prompt_head(cfg));
      parts.insert(parts.end(), blocks.begin(), blocks.end());
      parts.push_back(test_block);
      return join(parts, kSeparator);
    };
    std::string prompt = assemble();
    if (cfg.max_prompt_chars) {
      while (utf8_length(prompt) > *cfg.max_prompt_chars) {
        if (blocks.empty()) {
          throw ConfigError("prompt for '" + test.id + "' exceeds max_prompt_chars=" +
                            std::to_string(*cfg.max_prompt_chars) + " even without examples");
        }
        // The least similar example goes first.
        if (cfg.order == ExampleOrder::ascending_similarity) {
          blocks.erase(blocks.begin());
          kept_ids.erase(kept_ids.begin());
        } else {
          blocks.pop_back();
          kept_ids.pop_back();
        }
        prompt = assemble();
      }
    }
    bundle.prompts.push_back(std::move(prompt));
    bundle.example_ids_per_prompt.push_back(std::move(kept_ids));
  }
  return bundle;
}

}  // namespace prophet
