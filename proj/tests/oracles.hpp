#pragma once

// Brute-force reference implementations used by the unit tests and the
// acceptance runner. Deliberately naive: double accumulation, full scans,
// exhaustive enumeration.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prophet/heuristics.hpp"
#include "prophet/scorer.hpp"

namespace oracles {

using namespace prophet;

inline AnswerVocabulary words(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("w" + std::to_string(i));
  return {AnswerVocabulary::Type::discriminative, v};
}

inline std::vector<float> random_vec(std::mt19937_64& g, std::size_t n, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(g);
  return v;
}

inline FeatureBank random_bank(std::mt19937_64& g, std::size_t rows, std::size_t dim) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < rows; ++i) ids.push_back("r" + std::to_string(i));
  return {BankKind::fused, dim, ids, random_vec(g, rows * dim)};
}

// Exhaustive scan in double: cosine of every row, then a stable argsort.
inline std::vector<std::size_t> argsort_oracle(std::span<const float> q, const FeatureBank& bank, std::size_t n) {
  std::vector<double> sims(bank.count());
  for (std::size_t r = 0; r < bank.count(); ++r) {
    double d = 0, qq = 0, rr = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      d += double(q[i]) * double(bank.row(r)[i]);
      qq += double(q[i]) * double(q[i]);
      rr += double(bank.row(r)[i]) * double(bank.row(r)[i]);
    }
    sims[r] = d / std::sqrt(qq * rr);
  }
  std::vector<std::size_t> idx(bank.count());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return sims[a] > sims[b]; });
  idx.resize(n);
  return idx;
}

inline double pi_oracle(const GroupView& a, const GroupView& b) {
  double total = 0;
  for (std::size_t j = 0; j < a.rows; ++j) {
    for (std::size_t k = 0; k < b.rows; ++k) {
      double d = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < a.dim; ++i) {
        d += double(a.row(j)[i]) * b.row(k)[i];
        na += double(a.row(j)[i]) * a.row(j)[i];
        nb += double(b.row(k)[i]) * b.row(k)[i];
      }
      total += d / (std::sqrt(na) * std::sqrt(nb));
    }
  }
  return total / double(a.rows * b.rows);
}

inline GroupView view(const std::vector<float>& data, std::size_t dim) { return {data, data.size() / dim, dim}; }

inline AnswerVocabulary gen_vocab(std::size_t n_words) {
  std::vector<std::string> v{"[BOS]", "[EOS]"};
  for (std::size_t i = 0; i < n_words; ++i) v.push_back("w" + std::to_string(i));
  return {AnswerVocabulary::Type::generative, v};
}

// Deterministic pseudo-random next-token distribution per prefix; [BOS]
// gets zero mass.
inline FunctionScorer hashed_scorer(std::size_t n_words, std::uint64_t salt) {
  return FunctionScorer(gen_vocab(n_words), [n_words, salt](std::span<const std::size_t> prefix) {
    std::uint64_t h = salt;
    for (auto t : prefix) h = h * 1000003u + t + 1;
    std::mt19937_64 g(h);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> p(n_words + 2, 0.0);
    double z = 0;
    for (std::size_t i = 1; i < p.size(); ++i) z += (p[i] = u(g));
    for (auto& x : p) x /= z;
    return p;
  });
}

struct Seq {
  std::vector<std::size_t> toks;
  double s = 0;
  bool fin = false;
};

struct Finished {
  std::string answer;
  double log_score;
  double confidence;
};

inline std::vector<Finished> finalize(const std::vector<Seq>& seqs, const AnswerVocabulary& v) {
  std::vector<Finished> out;
  for (const auto& q : seqs) {
    if (!q.fin) continue;
    std::string a;
    for (auto t : q.toks) {
      if (t == v.eos()) continue;
      if (!a.empty()) a += ' ';
      a += v[t];
    }
    out.push_back({a, q.s, std::exp(q.s / double(q.toks.size()))});
  }
  std::stable_sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.confidence > b.confidence; });
  return out;
}

// Every sequence the decoder can emit: words, then [EOS] (never first), or
// exactly max_len words.
inline std::vector<Seq> enumerate_all(const AutoregressiveScorer& sc, std::size_t max_len) {
  const auto& v = sc.vocabulary();
  std::vector<Seq> done, frontier{Seq{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<Seq> grown;
    for (const auto& s : frontier) {
      std::vector<std::size_t> prefix{v.bos()};
      prefix.insert(prefix.end(), s.toks.begin(), s.toks.end());
      const auto p = sc.next_distribution(prefix);
      for (std::size_t t = 0; t < v.size(); ++t) {
        if (t == v.bos() || p[t] == 0) continue;
        Seq c{s.toks, s.s + std::log(p[t]), false};
        c.toks.push_back(t);
        if (t == v.eos()) {
          if (len == 1) continue;
          c.fin = true;
          done.push_back(c);
        } else if (len == max_len) {
          c.fin = true;
          done.push_back(c);
        } else {
          grown.push_back(c);
        }
      }
    }
    frontier = std::move(grown);
  }
  return done;
}

// Beam search as literally specified per depth: pool = frozen sequences plus
// every one-token extension of the live ones, reduced to the global top-K.
inline std::vector<Seq> per_depth_oracle(const AutoregressiveScorer& sc, std::size_t K, std::size_t max_len) {
  const auto& v = sc.vocabulary();
  std::vector<Seq> pool{Seq{}};
  for (std::size_t step = 1; step <= max_len; ++step) {
    std::vector<Seq> next;
    for (const auto& s : pool) {
      if (s.fin) {
        next.push_back(s);
        continue;
      }
      std::vector<std::size_t> prefix{v.bos()};
      prefix.insert(prefix.end(), s.toks.begin(), s.toks.end());
      const auto p = sc.next_distribution(prefix);
      for (std::size_t t = 0; t < v.size(); ++t) {
        if (t == v.bos() || (t == v.eos() && step == 1)) continue;
        Seq c{s.toks, s.s + std::log(p[t]), t == v.eos() || step == max_len};
        c.toks.push_back(t);
        next.push_back(c);
      }
    }
    std::sort(next.begin(), next.end(), [](auto& a, auto& b) { return a.s != b.s ? a.s > b.s : a.toks < b.toks; });
    if (next.size() > K) next.resize(K);
    pool = next;
    if (std::all_of(pool.begin(), pool.end(), [](auto& s) { return s.fin; })) break;
  }
  return pool;
}

}  // namespace oracles
