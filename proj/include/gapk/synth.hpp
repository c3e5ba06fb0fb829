#pragma once

// Offline member/nonmember benchmark built on an additively smoothed Markov
// model whose next-token distributions are small enough to summarize exactly.
//
// A random ground-truth Markov chain generates every sequence. The toy LM is
// fitted on member sequences only, so "was trained on" is known exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "records.hpp"
#include "scoring.hpp"

namespace gapk {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

struct SynthConfig {
  std::uint64_t seed = 42;
  int vocab_size = 64;
  int order = 2;
  int n_member = 500;
  int n_nonmember = 500;
  int seq_len = 64;
  int train_passes = 4;
  double dirichlet_alpha = 0.1;
  int neighbor_count = 10;
  double neighbor_mask_fraction = 0.3;

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
    if (order < 1) throw std::invalid_argument("order must be >= 1");
    if (n_member < 1 || n_nonmember < 1) throw std::invalid_argument("sample counts must be >= 1");
    if (seq_len <= order) throw std::invalid_argument("seq_len must exceed order");
    if (train_passes < 0) throw std::invalid_argument("train_passes must be >= 0");
    if (!(dirichlet_alpha > 0.0)) throw std::invalid_argument("dirichlet_alpha must be > 0");
    if (neighbor_count < 0) throw std::invalid_argument("neighbor_count must be >= 0");
    if (!(neighbor_mask_fraction >= 0.0 && neighbor_mask_fraction <= 1.0))
      throw std::invalid_argument("neighbor_mask_fraction must be in [0, 1]");
    const double contexts = std::pow(static_cast<double>(vocab_size), order);
    if (contexts > 9.0e15) throw std::invalid_argument("vocab_size^order too large");
  }
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = unit_uniform(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return probs.size() - 1;
}

}  // namespace detail

/// Index of the length-`order` context ending just before position `pos`.
inline std::uint64_t context_index(std::span<const TokenId> seq, std::size_t pos, int order,
                                   int vocab_size) {
  std::uint64_t idx = 0;
  for (std::size_t i = pos - static_cast<std::size_t>(order); i < pos; ++i)
    idx = idx * static_cast<std::uint64_t>(vocab_size) + seq[i];
  return idx;
}

/// Random Markov chain standing in for the text distribution. Conditionals
/// are derived on demand from (seed, context) with weights (-ln u)^sharpness,
/// which concentrates mass on a few continuations per context.
class GroundTruth {
 public:
  static constexpr double kDefaultSharpness = 16.0;

  GroundTruth(std::uint64_t seed, int vocab_size, int order, double sharpness = kDefaultSharpness)
      : seed_(seed), vocab_size_(vocab_size), order_(order), sharpness_(sharpness) {}

  std::vector<double> conditional(std::uint64_t context) const {
    std::mt19937_64 rng(detail::splitmix64(seed_ ^ detail::splitmix64(context + 1)));
    std::vector<double> w(static_cast<std::size_t>(vocab_size_));
    double total = 0.0;
    for (double& x : w) {
      const double e = -std::log1p(-detail::unit_uniform(rng));
      x = std::pow(e, sharpness_);
      total += x;
    }
    for (double& x : w) x /= total;
    return w;
  }

  TokenSeq sample(int length, std::mt19937_64& rng) const {
    TokenSeq seq;
    seq.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < order_; ++i)
      seq.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab_size_)));
    while (seq.size() < static_cast<std::size_t>(length)) {
      const auto p = conditional(context_index(seq, seq.size(), order_, vocab_size_));
      seq.push_back(static_cast<TokenId>(detail::sample_categorical(p, rng)));
    }
    return seq;
  }

  int order() const { return order_; }
  int vocab_size() const { return vocab_size_; }

 private:
  std::uint64_t seed_;
  int vocab_size_;
  int order_;
  double sharpness_;
};

/// Order-n Markov model with additive smoothing:
/// p(v | ctx) = (count(ctx, v) + alpha) / (count(ctx) + alpha * V).
class ToyLM {
 public:
  ToyLM(int vocab_size, int order, double alpha)
      : vocab_size_(vocab_size), order_(order), alpha_(alpha) {
    if (vocab_size < 2 || order < 1 || !(alpha > 0.0))
      throw std::invalid_argument("invalid ToyLM parameters");
  }

  void observe(std::span<const TokenId> seq) {
    for (std::size_t pos = static_cast<std::size_t>(order_); pos < seq.size(); ++pos) {
      auto& row = counts_[context_index(seq, pos, order_, vocab_size_)];
      if (row.empty()) row.assign(static_cast<std::size_t>(vocab_size_), 0);
      ++row[seq[pos]];
    }
  }

  std::vector<double> conditional(std::uint64_t context) const {
    std::vector<double> p(static_cast<std::size_t>(vocab_size_));
    const auto it = counts_.find(context);
    double total = 0.0;
    if (it != counts_.end())
      for (auto c : it->second) total += static_cast<double>(c);
    const double denom = total + alpha_ * static_cast<double>(vocab_size_);
    for (std::size_t v = 0; v < p.size(); ++v) {
      const double c = it != counts_.end() ? static_cast<double>(it->second[v]) : 0.0;
      p[v] = (c + alpha_) / denom;
    }
    return p;
  }

  /// Exact summary of the next-token distribution at `pos`.
  TokenStats stats_at(std::span<const TokenId> seq, std::size_t pos) const {
    const auto p = conditional(context_index(seq, pos, order_, vocab_size_));
    TokenStats t;
    t.target_logprob = std::log(p[seq[pos]]);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    t.top1_logprob = std::log(*hi);
    if (*lo == *hi) {
      // Uniform: mean equals top1 and the spread is exactly zero.
      t.mean_logprob = t.top1_logprob;
      t.std_logprob = 0.0;
      return t;
    }
    double mu = 0.0;
    for (double q : p) mu += q * std::log(q);
    double var = 0.0;
    for (double q : p) {
      const double d = std::log(q) - mu;
      var += q * d * d;
    }
    t.mean_logprob = std::min(mu, t.top1_logprob);
    t.std_logprob = std::sqrt(var);
    return t;
  }

  /// Mean cross-entropy (nats) over the predicted positions of `seq`.
  double mean_loss(std::span<const TokenId> seq) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t pos = static_cast<std::size_t>(order_); pos < seq.size(); ++pos, ++n) {
      const auto p = conditional(context_index(seq, pos, order_, vocab_size_));
      sum -= std::log(p[seq[pos]]);
    }
    return sum / static_cast<double>(n);
  }

  int vocab_size() const { return vocab_size_; }
  int order() const { return order_; }
  double alpha() const { return alpha_; }
  const std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>& counts() const {
    return counts_;
  }

 private:
  int vocab_size_;
  int order_;
  double alpha_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> counts_;
};

struct SynthBenchmark {
  GroundTruth truth;
  ToyLM lm;
  std::vector<TokenSeq> members;
  std::vector<TokenSeq> nonmembers;
};

/// Draws member and nonmember sequences from one ground-truth chain and fits
/// the toy LM on members only, `train_passes` times.
inline SynthBenchmark build_toy_lm(const SynthConfig& config) {
  config.validate();
  SynthBenchmark b{GroundTruth(config.seed, config.vocab_size, config.order),
                   ToyLM(config.vocab_size, config.order, config.dirichlet_alpha),
                   {},
                   {}};
  std::mt19937_64 rng(detail::splitmix64(config.seed + 0x5eed));
  for (int i = 0; i < config.n_member; ++i) b.members.push_back(b.truth.sample(config.seq_len, rng));
  for (int i = 0; i < config.n_nonmember; ++i)
    b.nonmembers.push_back(b.truth.sample(config.seq_len, rng));
  for (int pass = 0; pass < config.train_passes; ++pass)
    for (const auto& seq : b.members) b.lm.observe(seq);
  return b;
}

/// Space-separated pseudo-words, one per token id. Deterministic so that
/// the Zlib baseline sees stable text.
inline std::string render_text(std::span<const TokenId> seq) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                            "p", "r", "s", "t", "v", "z", "sh", "th"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) out += ' ';
    std::uint32_t id = seq[i];
    do {
      out += kOnsets[id % 16];
      id /= 16;
      out += kVowels[id % 8];
      id /= 8;
    } while (id > 0);
  }
  return out;
}

/// Perturbs each predicted position with probability `mask_fraction`,
/// refilling it from the ground-truth conditional given the current context.
inline TokenSeq perturb(std::span<const TokenId> seq, const GroundTruth& truth,
                        double mask_fraction, std::mt19937_64& rng) {
  TokenSeq out(seq.begin(), seq.end());
  for (std::size_t pos = static_cast<std::size_t>(truth.order()); pos < out.size(); ++pos) {
    if (detail::unit_uniform(rng) >= mask_fraction) continue;
    const auto p = truth.conditional(context_index(out, pos, truth.order(), truth.vocab_size()));
    out[pos] = static_cast<TokenId>(detail::sample_categorical(p, rng));
  }
  return out;
}

struct LabeledText {
  std::string sample_id;
  TokenSeq tokens;
  std::optional<Label> label;
};

/// One SampleRecord per sequence with exact TokenStats for positions
/// order .. len-1. Neighbor losses are attached when neighbor_count > 0 and a
/// ground-truth generator is supplied.
inline Corpus emit_records(const ToyLM& lm, std::span<const LabeledText> texts,
                           const GroundTruth* truth = nullptr, int neighbor_count = 0,
                           double mask_fraction = 0.3, std::uint64_t seed = 0) {
  Corpus corpus;
  corpus.records.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto& lt = texts[i];
    if (lt.tokens.size() <= static_cast<std::size_t>(lm.order()))
      throw std::invalid_argument("sequence '" + lt.sample_id + "' is not longer than the context order");
    SampleRecord r;
    r.sample_id = lt.sample_id;
    r.label = lt.label;
    r.text = render_text(lt.tokens);
    for (std::size_t pos = static_cast<std::size_t>(lm.order()); pos < lt.tokens.size(); ++pos)
      r.tokens.push_back(lm.stats_at(lt.tokens, pos));
    if (truth && neighbor_count > 0) {
      std::mt19937_64 rng(detail::splitmix64(seed ^ detail::fnv1a(lt.sample_id)));
      std::vector<double> losses;
      for (int n = 0; n < neighbor_count; ++n)
        losses.push_back(lm.mean_loss(perturb(lt.tokens, *truth, mask_fraction, rng)));
      r.neighbor_losses = std::move(losses);
    }
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

inline std::string zero_pad(int value, int width) {
  std::string s = std::to_string(value);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

/// Full pipeline: build the benchmark and emit a labeled corpus.
inline Corpus synthesize_corpus(const SynthConfig& config) {
  const auto bench = build_toy_lm(config);
  std::vector<LabeledText> texts;
  for (std::size_t i = 0; i < bench.members.size(); ++i)
    texts.push_back({"member-" + zero_pad(static_cast<int>(i), 5), bench.members[i], Label::member});
  for (std::size_t i = 0; i < bench.nonmembers.size(); ++i)
    texts.push_back({"nonmember-" + zero_pad(static_cast<int>(i), 5), bench.nonmembers[i], Label::nonmember});

  Corpus corpus = emit_records(bench.lm, texts, &bench.truth, config.neighbor_count,
                               config.neighbor_mask_fraction, config.seed);
  corpus.metadata = {
      {"source", "gapk synth"},
      {"seed", std::to_string(config.seed)},
      {"vocab_size", std::to_string(config.vocab_size)},
      {"order", std::to_string(config.order)},
      {"n_member", std::to_string(config.n_member)},
      {"n_nonmember", std::to_string(config.n_nonmember)},
      {"seq_len", std::to_string(config.seq_len)},
      {"train_passes", std::to_string(config.train_passes)},
      {"dirichlet_alpha", nlohmann::json(config.dirichlet_alpha).dump()},
      {"neighbor_count", std::to_string(config.neighbor_count)},
      {"neighbor_mask_fraction", nlohmann::json(config.neighbor_mask_fraction).dump()},
      {"zlib_level", "6"},
      {"first_scored_position", std::to_string(config.order)},
  };
  return corpus;
}

}  // namespace gapk
