#pragma once

// Stage-1 answer heuristics: top-K answer candidates (discriminative scores
// or beam search over an autoregressive scorer) and answer-aware example
// selection by similarity in the latent answer space.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "prophet/artifact_store.hpp"
#include "prophet/error.hpp"
#include "prophet/util.hpp"

namespace prophet {

struct ExampleSelection {
  std::string test_sample_id;
  std::vector<std::string> neighbor_ids;
  std::vector<double> similarities;

  bool operator==(const ExampleSelection&) const = default;
};

enum class SelectionStrategy { rand, ques_img, fused, fused_ques_img, answer_logits, grouped };

inline std::string_view to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::rand: return "rand";
    case SelectionStrategy::ques_img: return "ques_img";
    case SelectionStrategy::fused: return "fused";
    case SelectionStrategy::fused_ques_img: return "fused_ques_img";
    case SelectionStrategy::answer_logits: return "answer_logits";
    case SelectionStrategy::grouped: return "grouped";
  }
  return "?";
}

inline SelectionStrategy parse_strategy(std::string_view s) {
  for (auto v : {SelectionStrategy::rand, SelectionStrategy::ques_img, SelectionStrategy::fused,
                 SelectionStrategy::fused_ques_img, SelectionStrategy::answer_logits, SelectionStrategy::grouped}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown selection strategy '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Discriminative candidates

// Top-K answers by score; ties go to the lower vocabulary index.
inline std::vector<AnswerCandidate> top_k_candidates(std::span<const float> scores, const AnswerVocabulary& vocab,
                                                     std::size_t k) {
  if (scores.size() != vocab.size()) {
    throw ConfigError("score vector has " + std::to_string(scores.size()) + " entries, vocabulary has " +
                      std::to_string(vocab.size()));
  }
  if (k == 0 || k > scores.size()) {
    throw ConfigError("K=" + std::to_string(k) + " must be in [1, " + std::to_string(scores.size()) + "]");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ConfigError("non-finite score at index " + std::to_string(i));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
  std::vector<AnswerCandidate> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double s = scores[order[i]];
    if (!(s > 0.0 && s <= 1.0)) {
      throw ConfigError("score " + std::to_string(s) + " of '" + vocab[order[i]] + "' outside (0,1]");
    }
    out.push_back({vocab[order[i]], s});
  }
  return out;
}

inline const AnswerCandidate& stage1_top1(std::span<const AnswerCandidate> candidates) {
  if (candidates.empty()) throw ConfigError("stage1_top1 on an empty candidate list");
  return candidates.front();
}

// ---------------------------------------------------------------------------
// Similarity search

inline double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline constexpr double kExcluded = -std::numeric_limits<double>::infinity();

namespace detail {

// Picks the n best rows (score desc, row index asc). Rows scored -inf are
// never selected.
inline std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t n) {
  std::vector<std::size_t> eligible;
  eligible.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] != kExcluded) eligible.push_back(i);
  }
  if (n > eligible.size()) {
    throw ConfigError("requested " + std::to_string(n) + " neighbors but only " + std::to_string(eligible.size()) +
                      " eligible bank entries");
  }
  auto cmp = [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; };
  std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(n), eligible.end(), cmp);
  eligible.resize(n);
  return eligible;
}

inline ExampleSelection make_selection(std::string test_id, const std::vector<std::string>& ids,
                                       std::span<const double> scores, std::span<const std::size_t> rows) {
  ExampleSelection sel;
  sel.test_sample_id = std::move(test_id);
  for (auto r : rows) {
    sel.neighbor_ids.push_back(ids[r]);
    sel.similarities.push_back(scores[r]);
  }
  return sel;
}

}  // namespace detail

// Cosine similarity of `query` against every bank row, in double precision.
// Zero-norm rows score -inf.
inline std::vector<double> cosine_scores(std::span<const float> query, const FeatureBank& bank) {
  if (query.size() != bank.dim()) {
    throw ConfigError("query dim " + std::to_string(query.size()) + " != bank dim " + std::to_string(bank.dim()));
  }
  const double qn = l2_norm(query);
  if (qn == 0.0) throw ConfigError("zero-norm query vector");
  std::vector<double> scores(bank.count());
  for (std::size_t r = 0; r < bank.count(); ++r) {
    const auto row = bank.row(r);
    const double rn = l2_norm(row);
    scores[r] = rn == 0.0 ? kExcluded : dot(query, row) / (qn * rn);
  }
  return scores;
}

inline ExampleSelection cosine_knn(std::span<const float> query, const FeatureBank& bank, std::size_t n,
                                   const std::unordered_set<std::string>& exclude = {},
                                   std::string test_id = {}) {
  auto scores = cosine_scores(query, bank);
  for (std::size_t r = 0; r < bank.count(); ++r) {
    if (exclude.contains(bank.ids()[r])) scores[r] = kExcluded;
  }
  const auto rows = detail::select_top(scores, n);
  return detail::make_selection(std::move(test_id), bank.ids(), scores, rows);
}

// Mean pairwise cosine between two groups of answer-word features. The
// pairwise cosines are summed in sorted order so that swapping the
// arguments gives a bit-identical result.
inline double group_similarity(const GroupView& a, const GroupView& b) {
  if (a.rows == 0 || b.rows == 0) throw ConfigError("group_similarity on an empty group");
  if (a.dim != b.dim) {
    throw ConfigError("group dims differ: " + std::to_string(a.dim) + " vs " + std::to_string(b.dim));
  }
  auto norms = [](const GroupView& g, const char* name) {
    std::vector<double> n(g.rows);
    for (std::size_t i = 0; i < g.rows; ++i) {
      n[i] = l2_norm(g.row(i));
      if (n[i] == 0.0) throw ConfigError(std::string("zero-norm row ") + std::to_string(i) + " in group " + name);
    }
    return n;
  };
  const auto na = norms(a, "A"), nb = norms(b, "B");
  std::vector<double> cosines;
  cosines.reserve(a.rows * b.rows);
  for (std::size_t j = 0; j < a.rows; ++j) {
    for (std::size_t k = 0; k < b.rows; ++k) cosines.push_back(dot(a.row(j), b.row(k)) / (na[j] * nb[k]));
  }
  std::sort(cosines.begin(), cosines.end());
  // Neumaier summation.
  double sum = 0.0, comp = 0.0;
  for (double c : cosines) {
    const double t = sum + c;
    comp += std::fabs(sum) >= std::fabs(c) ? (sum - t) + c : (c - t) + sum;
    sum = t;
  }
  return (sum + comp) / static_cast<double>(a.rows * b.rows);
}

inline ExampleSelection grouped_knn(const GroupView& query, const GroupedFeatureBank& bank, std::size_t n,
                                    const std::unordered_set<std::string>& exclude = {},
                                    std::string test_id = {}) {
  if (query.dim != bank.dim()) {
    throw ConfigError("query group dim " + std::to_string(query.dim) + " != bank dim " + std::to_string(bank.dim()));
  }
  if (query.rows == 0) throw ConfigError("empty query group");
  for (std::size_t i = 0; i < query.rows; ++i) {
    if (l2_norm(query.row(i)) == 0.0) throw ConfigError("zero-norm query row " + std::to_string(i));
  }
  std::vector<double> scores(bank.count());
  for (std::size_t g = 0; g < bank.count(); ++g) {
    const auto group = bank.group(g);
    bool usable = !exclude.contains(bank.ids()[g]);
    for (std::size_t i = 0; usable && i < group.rows; ++i) usable = l2_norm(group.row(i)) != 0.0;
    scores[g] = usable ? group_similarity(query, group) : kExcluded;
  }
  const auto rows = detail::select_top(scores, n);
  return detail::make_selection(std::move(test_id), bank.ids(), scores, rows);
}

// ---------------------------------------------------------------------------
// Dataset-level example selection

inline std::vector<BankKind> banks_for(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::ques_img: return {BankKind::question, BankKind::image};
    case SelectionStrategy::fused: return {BankKind::fused};
    case SelectionStrategy::fused_ques_img: return {BankKind::fused, BankKind::question, BankKind::image};
    case SelectionStrategy::answer_logits: return {BankKind::answer_logits};
    case SelectionStrategy::rand:
    case SelectionStrategy::grouped: return {};
  }
  return {};
}

// Selects `n` training examples for `test_id`. Multi-bank strategies score
// each training sample by the mean of its per-bank cosine similarities; the
// tie-break follows row order of the first bank the strategy names.
inline ExampleSelection combined_knn(const Dataset& ds, std::string_view test_id, SelectionStrategy strategy,
                                     std::size_t n, std::optional<std::uint64_t> seed = std::nullopt) {
  const std::string tid(test_id);
  if (!ds.contains(tid)) throw ConfigError("unknown test id '" + tid + "'");
  if (n == 0) return {tid, {}, {}};

  if (strategy == SelectionStrategy::rand) {
    if (!seed) throw ConfigError("strategy 'rand' requires a seed");
    std::vector<std::string> pool;
    for (const auto& id : ds.train_ids()) {
      if (id != tid) pool.push_back(id);
    }
    if (n > pool.size()) throw ConfigError("requested " + std::to_string(n) + " random examples from a pool of " +
                                           std::to_string(pool.size()));
    Rng rng(*seed, tid);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return {tid, std::move(pool), std::vector<double>(n, 0.0)};
  }

  std::unordered_set<std::string> train(ds.train_ids().begin(), ds.train_ids().end());

  if (strategy == SelectionStrategy::grouped) {
    const auto* bank = ds.grouped_bank(BankKind::fused);
    if (!bank) throw ConfigError("strategy 'grouped' needs a grouped fused bank");
    auto q = bank->find(tid);
    if (!q) throw ConfigError("test id '" + tid + "' not in grouped bank");
    std::unordered_set<std::string> exclude{tid};
    for (const auto& id : bank->ids()) {
      if (!train.contains(id)) exclude.insert(id);
    }
    return grouped_knn(bank->group(*q), *bank, n, exclude, tid);
  }

  const auto kinds = banks_for(strategy);
  std::vector<const FeatureBank*> banks;
  for (auto k : kinds) {
    const auto* b = ds.bank(k);
    if (!b) {
      throw ConfigError("strategy '" + std::string(to_string(strategy)) + "' needs a " +
                        std::string(to_string(k)) + " bank");
    }
    banks.push_back(b);
  }
  const FeatureBank& primary = *banks.front();
  std::vector<double> total(primary.count(), 0.0);
  for (const auto* b : banks) {
    const auto scores = cosine_scores(b->row(tid), *b);
    for (std::size_t r = 0; r < primary.count(); ++r) {
      if (total[r] == kExcluded) continue;
      const auto row = b == &primary ? std::optional<std::size_t>(r) : b->find(primary.ids()[r]);
      if (!row || scores[*row] == kExcluded) {
        total[r] = kExcluded;
      } else {
        total[r] += scores[*row];
      }
    }
  }
  for (std::size_t r = 0; r < primary.count(); ++r) {
    const auto& id = primary.ids()[r];
    if (id == tid || !train.contains(id)) {
      total[r] = kExcluded;
    } else if (total[r] != kExcluded) {
      total[r] /= static_cast<double>(banks.size());
    }
  }
  const auto rows = detail::select_top(total, n);
  return detail::make_selection(tid, primary.ids(), total, rows);
}

// ---------------------------------------------------------------------------
// Generative candidates

// Next-token distribution of an autoregressive answer decoder. Token ids
// index the scorer's vocabulary; every prefix starts with [BOS].
class AutoregressiveScorer {
 public:
  virtual ~AutoregressiveScorer() = default;
  virtual const AnswerVocabulary& vocabulary() const = 0;
  virtual std::vector<double> next_distribution(std::span<const std::size_t> prefix) const = 0;
};

struct BeamCandidate {
  AnswerCandidate candidate;
  double log_score = 0.0;            // sum of log-probabilities of every scored token
  std::vector<std::size_t> tokens;   // scored tokens, including [EOS] when present
  bool terminated_by_eos = false;
};

namespace detail {

struct Beam {
  std::vector<std::size_t> tokens;  // without [BOS]
  double log_score = 0.0;
  bool finished = false;
  bool eos = false;
};

// Total order used by every reduce step: higher score first, then the
// lexicographically smaller token sequence.
inline bool beam_before(const Beam& a, const Beam& b) {
  if (a.log_score != b.log_score) return a.log_score > b.log_score;
  return a.tokens < b.tokens;
}

inline void check_distribution(std::span<const double> p, std::size_t vocab_size) {
  if (p.size() != vocab_size) {
    throw InvariantError("scorer returned " + std::to_string(p.size()) + " probabilities for a vocabulary of " +
                         std::to_string(vocab_size));
  }
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) throw InvariantError("scorer returned a negative or non-finite probability");
    sum += x;
  }
  if (std::fabs(sum - 1.0) > 1e-6) {
    throw InvariantError("scorer distribution sums to " + std::to_string(sum) + ", not 1");
  }
}

}  // namespace detail

// Expand-then-reduce beam search. Each step expands every live beam by its
// best `beam_width` next tokens and keeps the global best `beam_width`
// sequences by accumulated log-probability. Finished beams stay in the pool
// and compete with live ones. [EOS] is not allowed as the first token, so
// every answer has at least one word; beams reaching `max_len` tokens
// without [EOS] are force-terminated.
inline std::vector<BeamCandidate> beam_search(const AutoregressiveScorer& scorer, std::size_t beam_width,
                                              std::size_t max_len) {
  const auto& vocab = scorer.vocabulary();
  if (beam_width == 0) throw ConfigError("beam width must be >= 1");
  if (max_len == 0) throw ConfigError("max_len must be >= 1");
  if (!vocab.has_eos()) throw ConfigError("scorer vocabulary has no [EOS]");
  const std::size_t bos = vocab.bos(), eos = vocab.eos();

  std::vector<detail::Beam> pool{detail::Beam{}};
  for (std::size_t step = 1; step <= max_len; ++step) {
    std::vector<detail::Beam> next;
    bool expanded_any = false;
    for (const auto& beam : pool) {
      if (beam.finished) {
        next.push_back(beam);
        continue;
      }
      std::vector<std::size_t> prefix{bos};
      prefix.insert(prefix.end(), beam.tokens.begin(), beam.tokens.end());
      const auto probs = scorer.next_distribution(prefix);
      detail::check_distribution(probs, vocab.size());

      std::vector<detail::Beam> children;
      for (std::size_t t = 0; t < probs.size(); ++t) {
        if (t == bos || probs[t] <= 0.0) continue;
        if (t == eos && step == 1) continue;
        detail::Beam child{beam.tokens, beam.log_score + std::log(probs[t]), false, t == eos};
        child.tokens.push_back(t);
        child.finished = child.eos || step == max_len;
        children.push_back(std::move(child));
      }
      const auto keep = std::min(beam_width, children.size());
      std::partial_sort(children.begin(), children.begin() + static_cast<std::ptrdiff_t>(keep), children.end(),
                        detail::beam_before);
      children.resize(keep);
      expanded_any = expanded_any || keep > 0;
      for (auto& c : children) next.push_back(std::move(c));
    }
    if (!expanded_any && std::none_of(next.begin(), next.end(), [](const auto& b) { return b.finished; })) {
      throw InvariantError("beam search: every expansion has zero probability");
    }
    const auto keep = std::min(beam_width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(), detail::beam_before);
    next.resize(keep);
    pool = std::move(next);
    if (std::all_of(pool.begin(), pool.end(), [](const auto& b) { return b.finished; })) break;
  }

  std::vector<BeamCandidate> out;
  for (const auto& beam : pool) {
    if (!beam.finished) continue;
    std::vector<std::string> words;
    for (auto t : beam.tokens) {
      if (t != eos) words.push_back(vocab[t]);
    }
    BeamCandidate c;
    c.candidate.answer = join(words, " ");
    c.log_score = beam.log_score;
    c.candidate.score = std::exp(beam.log_score / static_cast<double>(beam.tokens.size()));
    c.tokens = beam.tokens;
    c.terminated_by_eos = beam.eos;
    // Merge answers that render identically, keeping the best confidence.
    auto dup = std::find_if(out.begin(), out.end(),
                            [&](const BeamCandidate& o) { return o.candidate.answer == c.candidate.answer; });
    if (dup == out.end()) {
      out.push_back(std::move(c));
    } else if (c.candidate.score > dup->candidate.score) {
      *dup = std::move(c);
    }
  }
  if (out.empty()) throw InvariantError("beam search produced no finished sequence");
  std::stable_sort(out.begin(), out.end(), [](const BeamCandidate& a, const BeamCandidate& b) {
    return a.candidate.score > b.candidate.score;
  });
  return out;
}

inline std::vector<AnswerCandidate> to_candidates(std::span<const BeamCandidate> beams) {
  std::vector<AnswerCandidate> out;
  out.reserve(beams.size());
  for (const auto& b : beams) out.push_back(b.candidate);
  return out;
}

}  // namespace prophet
