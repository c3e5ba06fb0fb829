#pragma once

// Token-level statistics, sliding-window smoothing, bottom-k aggregation and
// the per-sample membership scores. Every score is oriented so that a higher
// value means stronger evidence that the sample was trained on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <zlib.h>

#include "records.hpp"

namespace gapk {

enum class Method { Loss, Zlib, Neighbor, MinK, MinKpp, GapK, MinKppSmoothed, GapKUnsmoothedTop1 };

inline constexpr Method kAllMethods[] = {Method::Loss,   Method::Zlib, Method::Neighbor,
                                         Method::MinK,   Method::MinKpp, Method::GapK,
                                         Method::MinKppSmoothed, Method::GapKUnsmoothedTop1};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::Loss: return "loss";
    case Method::Zlib: return "zlib";
    case Method::Neighbor: return "neighbor";
    case Method::MinK: return "mink";
    case Method::MinKpp: return "minkpp";
    case Method::GapK: return "gapk";
    case Method::MinKppSmoothed: return "minkpp_smoothed";
    case Method::GapKUnsmoothedTop1: return "gapk_unsmoothed_top1";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(std::string_view name) {
  for (Method m : kAllMethods)
    if (method_name(m) == name) return m;
  return std::nullopt;
}

/// Maps (sequence length, sample id) to a permutation of [0, length).
using PermutationFn = std::function<std::vector<std::size_t>(std::size_t, std::string_view)>;

struct SmoothingOrder {
  enum class Mode { sequential, shuffled };
  Mode mode = Mode::sequential;
  std::uint64_t seed = 0;
  // Replaces the seeded permutation when set. Used by tests to force a
  // specific order.
  PermutationFn permutation_override;

  static SmoothingOrder sequential() { return {}; }
  static SmoothingOrder shuffled(std::uint64_t seed) { return {Mode::shuffled, seed, {}}; }
};

struct MethodConfig {
  Method method = Method::GapK;
  double k_percent = 20.0;
  int window = 3;
  SmoothingOrder smoothing_order;
  double sigma_floor = 1e-6;
  int zlib_level = Z_DEFAULT_COMPRESSION;

  void validate() const {
    if (!(k_percent > 0.0 && k_percent <= 100.0))
      throw std::invalid_argument("k_percent must be in (0, 100]");
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    if (!(sigma_floor > 0.0)) throw std::invalid_argument("sigma_floor must be > 0");
  }
};

/// Per-position scores behind one sample score, for inspection and plotting.
struct TokenScoreTrace {
  std::string sample_id;
  std::vector<double> raw_scores;
  std::vector<double> smoothed_scores;
  std::vector<std::size_t> selected_indices;  // window start indices, ascending
};

/// Raised when a method needs a record field the sample lacks.
class MissingInputError : public std::runtime_error {
 public:
  MissingInputError(std::string sample_id, std::string field)
      : std::runtime_error("sample '" + sample_id + "' is missing required field '" + field + "'"),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// ---------------------------------------------------------------------------
// Token-level scores

inline std::vector<double> token_logprobs(const SampleRecord& sample) {
  std::vector<double> out;
  out.reserve(sample.tokens.size());
  for (const auto& t : sample.tokens) out.push_back(t.target_logprob);
  return out;
}

inline double floored_sigma(const TokenStats& t, double sigma_floor) {
  return std::max(t.std_logprob, sigma_floor);
}

/// z_t = (target - mean) / sigma.
inline std::vector<double> z_scores(const SampleRecord& sample, double sigma_floor) {
  std::vector<double> out;
  out.reserve(sample.tokens.size());
  for (const auto& t : sample.tokens)
    out.push_back((t.target_logprob - t.mean_logprob) / floored_sigma(t, sigma_floor));
  return out;
}

/// g_t = (target - top1) / sigma. Never positive.
inline std::vector<double> gap_scores(const SampleRecord& sample, double sigma_floor) {
  std::vector<double> out;
  out.reserve(sample.tokens.size());
  for (const auto& t : sample.tokens)
    out.push_back((t.target_logprob - t.top1_logprob) / floored_sigma(t, sigma_floor));
  return out;
}

/// Delta_t = (top1 - mean) / sigma, so that g_t = z_t - Delta_t.
inline std::vector<double> delta_scores(const SampleRecord& sample, double sigma_floor) {
  std::vector<double> out;
  out.reserve(sample.tokens.size());
  for (const auto& t : sample.tokens)
    out.push_back((t.top1_logprob - t.mean_logprob) / floored_sigma(t, sigma_floor));
  return out;
}

// ---------------------------------------------------------------------------
// Smoothing

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Seeded Fisher-Yates permutation keyed by (seed, sample_id). Uses only
/// integer arithmetic so it is identical across standard libraries.
inline std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed,
                                                    std::string_view sample_id) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::uint64_t state = detail::splitmix64(seed) ^ detail::fnv1a(sample_id);
  for (std::size_t i = n; i > 1; --i) {
    state = detail::splitmix64(state);
    const std::size_t j = static_cast<std::size_t>(state % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

/// Mean over each length-`window` run of consecutive scores. Produces
/// max(1, L - w + 1) values; a window longer than the input collapses to the
/// single full-sequence mean.
inline std::vector<double> sliding_mean(std::span<const double> scores, int window) {
  if (scores.empty()) throw std::invalid_argument("smoothing needs at least one score");
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  const std::size_t n = scores.size();
  const std::size_t w = std::min(static_cast<std::size_t>(window), n);
  std::vector<double> out;
  out.reserve(n - w + 1);
  for (std::size_t t = 0; t + w <= n; ++t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < w; ++i) sum += scores[t + i];
    out.push_back(sum / static_cast<double>(w));
  }
  return out;
}

inline std::vector<double> smooth(std::span<const double> scores, int window,
                                  const SmoothingOrder& order, std::string_view sample_id = {}) {
  if (order.mode == SmoothingOrder::Mode::sequential) return sliding_mean(scores, window);

  const auto perm = order.permutation_override
                        ? order.permutation_override(scores.size(), sample_id)
                        : shuffle_permutation(scores.size(), order.seed, sample_id);
  if (perm.size() != scores.size()) throw std::logic_error("permutation has wrong length");
  std::vector<double> permuted;
  permuted.reserve(scores.size());
  for (std::size_t i : perm) permuted.push_back(scores[i]);
  return sliding_mean(permuted, window);
}

// ---------------------------------------------------------------------------
// Bottom-k aggregation

inline std::size_t bottom_k_count(std::size_t n, double k_percent) {
  const auto m = static_cast<std::size_t>(std::floor(k_percent * static_cast<double>(n) / 100.0));
  return std::clamp<std::size_t>(m, 1, n);
}

struct BottomK {
  double mean = 0.0;
  std::vector<std::size_t> indices;  // ascending
};

/// Mean of the m = max(1, floor(k% * L)) smallest scores. Ties go to the
/// lowest index. The sum runs in ascending value order, which keeps the
/// result monotone in every input.
inline BottomK bottom_k_mean(std::span<const double> scores, double k_percent) {
  if (scores.empty()) throw std::invalid_argument("bottom_k_mean needs at least one score");
  if (!(k_percent > 0.0 && k_percent <= 100.0))
    throw std::invalid_argument("k_percent must be in (0, 100]");

  const std::size_t m = bottom_k_count(scores.size(), k_percent);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), less);

  BottomK out;
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += scores[order[i]];
  out.mean = sum / static_cast<double>(m);
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sample scores

/// Size in bytes of `text` after zlib compression at `level`.
inline std::size_t compressed_size(std::string_view text, int level = Z_DEFAULT_COMPRESSION) {
  uLongf bound = compressBound(static_cast<uLong>(text.size()));
  std::vector<Bytef> buffer(bound);
  const int rc = compress2(buffer.data(), &bound, reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uLong>(text.size()), level);
  if (rc != Z_OK) throw std::runtime_error("zlib compress2 failed with code " + std::to_string(rc));
  return static_cast<std::size_t>(bound);
}

inline double mean_of(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

struct SampleScore {
  double score = 0.0;
  TokenScoreTrace trace;
};

namespace detail {

inline SampleScore aggregate(std::string_view sample_id, std::vector<double> raw, int window,
                             const SmoothingOrder& order, double k_percent) {
  SampleScore out;
  out.trace.sample_id = std::string(sample_id);
  out.trace.smoothed_scores = window > 1 || order.mode == SmoothingOrder::Mode::shuffled
                                  ? smooth(raw, window, order, sample_id)
                                  : raw;
  auto sel = bottom_k_mean(out.trace.smoothed_scores, k_percent);
  out.score = sel.mean;
  out.trace.selected_indices = std::move(sel.indices);
  out.trace.raw_scores = std::move(raw);
  return out;
}

}  // namespace detail

/// Computes one membership score. Throws MissingInputError when the method
/// needs `text` (Zlib) or `neighbor_losses` (Neighbor) and they are absent.
inline SampleScore score_sample(const SampleRecord& sample, const MethodConfig& config) {
  if (sample.tokens.empty()) throw std::invalid_argument("sample has no tokens");
  const auto unsmoothed = SmoothingOrder::sequential();

  SampleScore out;
  out.trace.sample_id = sample.sample_id;
  switch (config.method) {
    case Method::Loss:
      out.score = mean_of(token_logprobs(sample));
      return out;

    case Method::Zlib: {
      if (!sample.text) throw MissingInputError(sample.sample_id, "text");
      const auto lp = token_logprobs(sample);
      const double total = std::accumulate(lp.begin(), lp.end(), 0.0);
      out.score = total / static_cast<double>(compressed_size(*sample.text, config.zlib_level));
      return out;
    }

    case Method::Neighbor: {
      if (!sample.neighbor_losses || sample.neighbor_losses->empty())
        throw MissingInputError(sample.sample_id, "neighbor_losses");
      // (mean neighbor loss) - (sample loss), with loss = -mean log-prob.
      out.score = mean_of(*sample.neighbor_losses) + mean_of(token_logprobs(sample));
      return out;
    }

    case Method::MinK:
      return detail::aggregate(sample.sample_id, token_logprobs(sample), 1, unsmoothed,
                               config.k_percent);
    case Method::MinKpp:
      return detail::aggregate(sample.sample_id, z_scores(sample, config.sigma_floor), 1,
                               unsmoothed, config.k_percent);
    case Method::MinKppSmoothed:
      return detail::aggregate(sample.sample_id, z_scores(sample, config.sigma_floor),
                               config.window, config.smoothing_order, config.k_percent);
    case Method::GapK:
      return detail::aggregate(sample.sample_id, gap_scores(sample, config.sigma_floor),
                               config.window, config.smoothing_order, config.k_percent);
    case Method::GapKUnsmoothedTop1:
      return detail::aggregate(sample.sample_id, gap_scores(sample, config.sigma_floor), 1,
                               unsmoothed, config.k_percent);
  }
  throw std::logic_error("unhandled method");
}

}  // namespace gapk
