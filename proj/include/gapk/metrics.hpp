#pragma once

// ROC analysis over labeled membership scores.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "records.hpp"

namespace gapk {

struct ScoredSample {
  std::string sample_id;
  Label label = Label::nonmember;
  std::map<std::string, double, std::less<>> scores;
};

/// Scores of one method split by class.
struct ClassScores {
  std::vector<double> members;
  std::vector<double> nonmembers;
};

inline ClassScores split_by_label(std::span<const ScoredSample> scored, std::string_view method) {
  ClassScores out;
  for (const auto& s : scored) {
    auto it = s.scores.find(method);
    if (it == s.scores.end()) continue;
    (s.label == Label::member ? out.members : out.nonmembers).push_back(it->second);
  }
  return out;
}

inline void require_both_classes(const ClassScores& cs) {
  if (cs.members.empty() || cs.nonmembers.empty())
    throw DataError("metric needs at least one member and one nonmember (got " +
                    std::to_string(cs.members.size()) + " members, " +
                    std::to_string(cs.nonmembers.size()) + " nonmembers)");
}

/// Mann-Whitney AUROC with midranks: P(member > nonmember) + 0.5 P(tie).
inline double auroc(const ClassScores& cs) {
  require_both_classes(cs);
  struct Entry {
    double score;
    bool member;
  };
  std::vector<Entry> all;
  all.reserve(cs.members.size() + cs.nonmembers.size());
  for (double s : cs.members) all.push_back({s, true});
  for (double s : cs.nonmembers) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Twice the member rank sum keeps every term an integer.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t members_in_group = 0;
    while (j < all.size() && all[j].score == all[i].score) members_in_group += all[j++].member;
    const double twice_midrank = static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    twice_rank_sum += twice_midrank * static_cast<double>(members_in_group);
    i = j;
  }
  const double n1 = static_cast<double>(cs.members.size());
  const double n0 = static_cast<double>(cs.nonmembers.size());
  const double twice_u = twice_rank_sum - n1 * (n1 + 1.0);
  return twice_u / (2.0 * n1 * n0);
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// ROC points for thresholds at each distinct score, descending. Tied scores
/// form a single step. Starts at (0,0) and ends at (1,1).
inline std::vector<RocPoint> roc_curve(const ClassScores& cs) {
  require_both_classes(cs);
  std::vector<std::pair<double, bool>> all;
  all.reserve(cs.members.size() + cs.nonmembers.size());
  for (double s : cs.members) all.emplace_back(s, true);
  for (double s : cs.nonmembers) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  const double p = static_cast<double>(cs.members.size());
  const double n = static_cast<double>(cs.nonmembers.size());
  std::vector<RocPoint> points{{0.0, 0.0}};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? tp : fp) += 1;
      ++j;
    }
    points.push_back({static_cast<double>(fp) / n, static_cast<double>(tp) / p});
    i = j;
  }
  return points;
}

inline double trapezoid_area(std::span<const RocPoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  return area;
}

/// Best TPR among achievable ROC points with FPR <= fpr_level (no interpolation).
inline double tpr_at_fpr(std::span<const RocPoint> roc, double fpr_level) {
  double best = 0.0;
  for (const auto& pt : roc)
    if (pt.fpr <= fpr_level) best = std::max(best, pt.tpr);
  return best;
}

inline double tpr_at_fpr(const ClassScores& cs, double fpr_level) {
  return tpr_at_fpr(roc_curve(cs), fpr_level);
}

struct Histogram {
  std::vector<double> edges;  // n_bins + 1, shared by both classes
  std::vector<std::size_t> member_counts;
  std::vector<std::size_t> nonmember_counts;
};

/// Equal-width bins over [min, max] of all scores; the last bin is closed.
inline Histogram histogram(const ClassScores& cs, std::size_t n_bins) {
  if (n_bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (cs.members.empty() && cs.nonmembers.empty())
    throw DataError("histogram needs at least one score");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* v : {&cs.members, &cs.nonmembers})
    for (double s : *v) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }

  Histogram h;
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i) h.edges.push_back(lo + width * static_cast<double>(i));
  h.edges.back() = hi;
  h.member_counts.assign(n_bins, 0);
  h.nonmember_counts.assign(n_bins, 0);

  auto bin_of = [&](double s) -> std::size_t {
    if (width <= 0.0) return 0;
    const auto b = static_cast<std::size_t>(std::floor((s - lo) / width));
    return std::min(b, n_bins - 1);
  };
  for (double s : cs.members) ++h.member_counts[bin_of(s)];
  for (double s : cs.nonmembers) ++h.nonmember_counts[bin_of(s)];
  return h;
}

/// Most permissive threshold lambda such that predicting "member" for
/// score > lambda keeps the empirical FPR at or below target_fpr. Candidates
/// are the nonmember scores plus -infinity.
inline double calibrate_threshold(const ClassScores& cs, double target_fpr) {
  require_both_classes(cs);
  std::vector<double> neg = cs.nonmembers;
  std::sort(neg.begin(), neg.end());
  const double n = static_cast<double>(neg.size());
  if (target_fpr >= 1.0) return -std::numeric_limits<double>::infinity();

  for (std::size_t i = 0; i < neg.size(); ++i) {
    if (i > 0 && neg[i] == neg[i - 1]) continue;
    const auto above = static_cast<double>(
        neg.end() - std::upper_bound(neg.begin(), neg.end(), neg[i]));
    if (above / n <= target_fpr) return neg[i];
  }
  return neg.back();
}

// Overloads addressing one method inside a list of ScoredSample.

inline double auroc(std::span<const ScoredSample> scored, std::string_view method) {
  return auroc(split_by_label(scored, method));
}
inline std::vector<RocPoint> roc_curve(std::span<const ScoredSample> scored, std::string_view method) {
  return roc_curve(split_by_label(scored, method));
}
inline double tpr_at_fpr(std::span<const ScoredSample> scored, std::string_view method,
                         double fpr_level) {
  return tpr_at_fpr(split_by_label(scored, method), fpr_level);
}
inline Histogram histogram(std::span<const ScoredSample> scored, std::string_view method,
                           std::size_t n_bins) {
  return histogram(split_by_label(scored, method), n_bins);
}
inline double calibrate_threshold(std::span<const ScoredSample> scored, std::string_view method,
                                  double target_fpr) {
  return calibrate_threshold(split_by_label(scored, method), target_fpr);
}

/// Metrics for one method over one labeled score set.
struct EvalReport {
  std::string method;
  double auroc = 0.5;
  std::vector<std::pair<double, double>> tpr_at_fpr;  // (fpr level, tpr)
  std::vector<RocPoint> roc_points;
  Histogram histogram;
  std::size_t n_member = 0;
  std::size_t n_nonmember = 0;
};

inline EvalReport evaluate_scores(std::string method, const ClassScores& cs,
                                  std::span<const double> fpr_levels, std::size_t n_bins = 30) {
  EvalReport r;
  r.method = std::move(method);
  r.auroc = auroc(cs);
  r.roc_points = roc_curve(cs);
  for (double level : fpr_levels) r.tpr_at_fpr.emplace_back(level, tpr_at_fpr(r.roc_points, level));
  r.histogram = histogram(cs, n_bins);
  r.n_member = cs.members.size();
  r.n_nonmember = cs.nonmembers.size();
  return r;
}

/// Compact rendering of an FPR level used as a JSON key and CSV column
/// suffix, e.g. 0.05 -> "0.05".
inline std::string format_level(double level) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", level);
  return buf;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["n_member"] = r.n_member;
  j["n_nonmember"] = r.n_nonmember;
  j["auroc"] = r.auroc;
  auto tpr = nlohmann::ordered_json::object();
  for (const auto& [level, value] : r.tpr_at_fpr) tpr[format_level(level)] = value;
  j["tpr_at_fpr"] = std::move(tpr);
  auto roc = nlohmann::ordered_json::array();
  for (const auto& pt : r.roc_points) roc.push_back({pt.fpr, pt.tpr});
  j["roc_points"] = std::move(roc);
  j["histogram"] = {{"edges", r.histogram.edges},
                    {"member", r.histogram.member_counts},
                    {"nonmember", r.histogram.nonmember_counts}};
  return j;
}

/// Flat CSV: one row per method and scalar metric.
inline std::string to_csv(std::span<const EvalReport> reports) {
  std::string out = "method,metric,value\n";
  auto row = [&](const std::string& method, const std::string& metric, const std::string& value) {
    out += method + "," + metric + "," + value + "\n";
  };
  for (const auto& r : reports) {
    row(r.method, "auroc", nlohmann::json(r.auroc).dump());
    for (const auto& [level, value] : r.tpr_at_fpr)
      row(r.method, "tpr_at_fpr_" + format_level(level), nlohmann::json(value).dump());
    row(r.method, "n_member", std::to_string(r.n_member));
    row(r.method, "n_nonmember", std::to_string(r.n_nonmember));
  }
  return out;
}

}  // namespace gapk
