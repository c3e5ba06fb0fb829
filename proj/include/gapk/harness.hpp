#pragma once

// Experiment orchestration: scores corpora under a grid of method configs,
// reduces to EvalReports and writes a stable on-disk layout:
//
//   <outdir>/scores/<method>.jsonl
//   <outdir>/reports/eval.json, eval.csv, skipped.json
//   <outdir>/sweeps/{k,window}.csv
//   <outdir>/traces/<sample_id>.json
//
// Samples are processed in sample_id order and every reduction runs
// single-threaded in that order, so outputs never depend on worker count.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "metrics.hpp"
#include "records.hpp"
#include "scoring.hpp"

namespace gapk {

inline unsigned default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any task is rethrown after all threads join.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Records sorted by sample_id; the canonical processing order.
inline std::vector<const SampleRecord*> sorted_view(const Corpus& corpus) {
  std::vector<const SampleRecord*> view;
  view.reserve(corpus.records.size());
  for (const auto& r : corpus.records) view.push_back(&r);
  std::sort(view.begin(), view.end(),
            [](const SampleRecord* a, const SampleRecord* b) { return a->sample_id < b->sample_id; });
  return view;
}

struct ScoreEntry {
  std::string sample_id;
  std::optional<Label> label;
  double score = 0.0;
};

struct SkipEntry {
  std::string sample_id;
  std::string reason;
};

struct MethodScores {
  std::string method;
  MethodConfig config;
  std::vector<ScoreEntry> scored;  // sample_id order
  std::vector<SkipEntry> skipped;  // sample_id order
};

/// Scores every record. Samples lacking a required input are skipped, not fatal.
inline MethodScores score_corpus(const Corpus& corpus, const MethodConfig& config, unsigned workers = 1) {
  config.validate();
  const auto view = sorted_view(corpus);
  std::vector<std::optional<double>> scores(view.size());
  std::vector<std::string> reasons(view.size());
  parallel_for(view.size(), workers, [&](std::size_t i) {
    try {
      scores[i] = score_sample(*view[i], config).score;
    } catch (const MissingInputError& e) {
      reasons[i] = e.what();
    }
  });

  MethodScores out;
  out.method = std::string(method_name(config.method));
  out.config = config;
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (scores[i]) out.scored.push_back({view[i]->sample_id, view[i]->label, *scores[i]});
    else out.skipped.push_back({view[i]->sample_id, reasons[i]});
  }
  return out;
}

inline ClassScores labeled_scores(const MethodScores& ms) {
  ClassScores cs;
  for (const auto& e : ms.scored) {
    if (!e.label) continue;
    (*e.label == Label::member ? cs.members : cs.nonmembers).push_back(e.score);
  }
  return cs;
}

inline bool has_labels(const Corpus& corpus) {
  return std::any_of(corpus.records.begin(), corpus.records.end(),
                     [](const SampleRecord& r) { return r.label.has_value(); });
}

inline void require_labels(const Corpus& corpus) {
  if (!has_labels(corpus)) throw DataError("no labeled samples");
}

inline EvalReport evaluate_method(const MethodScores& ms, std::span<const double> fpr_levels,
                                  std::size_t n_bins = 30) {
  const auto cs = labeled_scores(ms);
  if (cs.members.empty() && cs.nonmembers.empty())
    throw DataError("method '" + ms.method + "' has no labeled scored samples");
  return evaluate_scores(ms.method, cs, fpr_levels, n_bins);
}

/// Convenience: AUROC of one config over a corpus.
inline double corpus_auroc(const Corpus& corpus, const MethodConfig& config, unsigned workers = 1) {
  return auroc(labeled_scores(score_corpus(corpus, config, workers)));
}

// ---------------------------------------------------------------------------
// Sweeps and ablation layouts

enum class SweepAxis { k, window };

struct SweepRow {
  double param = 0.0;
  std::string method;
  double auroc = 0.0;
  double tpr = 0.0;
  std::size_t n = 0;
};

inline std::string format_param(SweepAxis axis, double value) {
  return axis == SweepAxis::window ? std::to_string(static_cast<long long>(value)) : format_level(value);
}

/// One row per (grid value, method): each config with the swept field replaced.
inline std::vector<SweepRow> sweep(const Corpus& corpus, std::span<const MethodConfig> methods,
                                   SweepAxis axis, std::span<const double> grid, double fpr_level,
                                   unsigned workers = 1) {
  require_labels(corpus);
  std::vector<SweepRow> rows;
  for (double value : grid) {
    for (MethodConfig cfg : methods) {
      if (axis == SweepAxis::k) cfg.k_percent = value;
      else cfg.window = static_cast<int>(value);
      const auto ms = score_corpus(corpus, cfg, workers);
      const auto cs = labeled_scores(ms);
      const auto roc = roc_curve(cs);
      rows.push_back({value, ms.method, auroc(cs), tpr_at_fpr(roc, fpr_level),
                      cs.members.size() + cs.nonmembers.size()});
    }
  }
  return rows;
}

inline std::string sweep_csv(SweepAxis axis, std::span<const SweepRow> rows, double fpr_level) {
  std::string out = "param,method,auroc,tpr_at_fpr_" + format_level(fpr_level) + ",n\n";
  for (const auto& r : rows) {
    out += format_param(axis, r.param) + "," + r.method + "," + nlohmann::json(r.auroc).dump() + "," +
           nlohmann::json(r.tpr).dump() + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

struct TableRow {
  std::string name;
  bool top1 = false;
  bool smoothing = false;
  double auroc = 0.0;
};

/// Component ablation relative to Min-K%++: mean vs top-1 reference, with
/// and without sequential smoothing. Shares k and w from `base`.
inline std::vector<TableRow> ablation_table(const Corpus& corpus, const MethodConfig& base,
                                            unsigned workers = 1) {
  require_labels(corpus);
  auto with = [&](Method m) {
    MethodConfig c = base;
    c.method = m;
    c.smoothing_order = SmoothingOrder::sequential();
    return corpus_auroc(corpus, c, workers);
  };
  return {
      {"Min-K%++", false, false, with(Method::MinKpp)},
      {"+ Top-1", true, false, with(Method::GapKUnsmoothedTop1)},
      {"+ Smoothing", false, true, with(Method::MinKppSmoothed)},
      {"Gap-K%", true, true, with(Method::GapK)},
  };
}

/// Sequential-locality control: no smoothing vs smoothing after a seeded
/// shuffle vs sequential smoothing. `permutation` replaces the seeded
/// shuffle when set.
inline std::vector<TableRow> shuffle_control(const Corpus& corpus, const MethodConfig& base,
                                             std::uint64_t seed, unsigned workers = 1,
                                             PermutationFn permutation = {}) {
  require_labels(corpus);
  MethodConfig none = base;
  none.method = Method::GapKUnsmoothedTop1;
  MethodConfig shuffled = base;
  shuffled.method = Method::GapK;
  shuffled.smoothing_order = SmoothingOrder::shuffled(seed);
  shuffled.smoothing_order.permutation_override = std::move(permutation);
  MethodConfig sequential = base;
  sequential.method = Method::GapK;
  sequential.smoothing_order = SmoothingOrder::sequential();
  return {
      {"No smoothing", true, false, corpus_auroc(corpus, none, workers)},
      {"Shuffled-order smoothing", true, true, corpus_auroc(corpus, shuffled, workers)},
      {"Sequential smoothing", true, true, corpus_auroc(corpus, sequential, workers)},
  };
}

inline std::string table_csv(std::span<const TableRow> rows) {
  std::string out = "row,top1,smoothing,auroc\n";
  for (const auto& r : rows)
    out += "\"" + r.name + "\"," + (r.top1 ? "1" : "0") + "," + (r.smoothing ? "1" : "0") + "," +
           nlohmann::json(r.auroc).dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Serialization helpers

inline nlohmann::ordered_json config_json(const MethodConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = method_name(c.method);
  j["k_percent"] = c.k_percent;
  j["window"] = c.window;
  j["smoothing_order"] = c.smoothing_order.mode == SmoothingOrder::Mode::sequential ? "sequential" : "shuffled";
  j["seed"] = c.smoothing_order.seed;
  j["sigma_floor"] = c.sigma_floor;
  j["zlib_level"] = c.zlib_level;
  return j;
}

inline nlohmann::ordered_json trace_json(const TokenScoreTrace& t, double score) {
  nlohmann::ordered_json j;
  j["score"] = score;
  j["raw_scores"] = t.raw_scores;
  j["smoothed_scores"] = t.smoothed_scores;
  j["selected_indices"] = t.selected_indices;
  return j;
}

inline std::string scores_jsonl(const MethodScores& ms) {
  std::string out;
  for (const auto& e : ms.scored) {
    nlohmann::ordered_json j;
    j["sample_id"] = e.sample_id;
    j["label"] = e.label ? nlohmann::ordered_json(std::string(to_string(*e.label))) : nullptr;
    j["score"] = e.score;
    out += j.dump() + "\n";
  }
  return out;
}

/// File name for a sample id: characters outside [A-Za-z0-9._-] become '_'.
inline std::string safe_file_stem(std::string_view id) {
  std::string out(id);
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '-' || c == '_';
    if (!ok) c = '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

inline void write_text(const std::filesystem::path& path, std::string_view body) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

// ---------------------------------------------------------------------------
// Plans

struct ExperimentPlan {
  std::vector<std::filesystem::path> corpora;
  std::vector<MethodConfig> methods;
  std::vector<double> fpr_levels{0.05};
  // An empty grid skips that sweep.
  std::vector<double> k_grid;
  std::vector<double> window_grid;
  std::vector<std::string> trace_ids;
  std::filesystem::path outdir = "out";
  unsigned workers = 1;
  std::size_t histogram_bins = 30;

  static std::vector<double> default_k_grid() { return {5, 10, 15, 20, 25, 30, 35, 40, 45, 50}; }
  static std::vector<double> default_window_grid() { return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}; }
};

struct RunResult {
  std::vector<MethodScores> scores;
  std::vector<EvalReport> reports;
  std::vector<SweepRow> k_sweep;
  std::vector<SweepRow> window_sweep;
};

/// Concatenates corpora, enforcing sample_id uniqueness across files.
inline Corpus load_corpora(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw std::invalid_argument("plan has no corpus paths");
  Corpus merged;
  std::set<std::string> seen;
  for (const auto& p : paths) {
    Corpus c = parse_corpus(p);
    for (auto& r : c.records) {
      if (!seen.insert(r.sample_id).second)
        throw DataError("duplicate sample_id '" + r.sample_id + "' across corpora (" + p.string() + ")");
      merged.records.push_back(std::move(r));
    }
    for (auto& [k, v] : c.metadata) merged.metadata.emplace(k, v);
  }
  return merged;
}

inline void check_plan(const ExperimentPlan& plan) {
  if (plan.methods.empty()) throw std::invalid_argument("plan needs at least one method");
  if (plan.fpr_levels.empty()) throw std::invalid_argument("plan needs at least one FPR level");
  std::set<std::string> names;
  for (const auto& m : plan.methods) {
    m.validate();
    if (!names.insert(std::string(method_name(m.method))).second)
      throw std::invalid_argument("method '" + std::string(method_name(m.method)) + "' listed twice");
  }
}

/// Executes a plan on an already-loaded corpus and writes all artifacts.
inline RunResult run(const Corpus& corpus, const ExperimentPlan& plan) {
  check_plan(plan);
  require_labels(corpus);
  namespace fs = std::filesystem;
  RunResult result;

  nlohmann::ordered_json eval;
  auto meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : corpus.metadata) meta[k] = v;
  eval["corpus_metadata"] = std::move(meta);
  eval["n_samples"] = corpus.records.size();
  eval["methods"] = nlohmann::ordered_json::array();
  nlohmann::ordered_json skipped = nlohmann::ordered_json::object();

  for (const auto& cfg : plan.methods) {
    auto ms = score_corpus(corpus, cfg, plan.workers);
    if (ms.scored.empty()) throw DataError("method '" + ms.method + "' could not score any sample");
    auto report = evaluate_method(ms, plan.fpr_levels, plan.histogram_bins);

    auto entry = to_json(report);
    entry["config"] = config_json(cfg);
    entry["n_scored"] = ms.scored.size();
    entry["n_skipped"] = ms.skipped.size();
    eval["methods"].push_back(std::move(entry));

    auto skips = nlohmann::ordered_json::array();
    for (const auto& s : ms.skipped) skips.push_back({{"sample_id", s.sample_id}, {"reason", s.reason}});
    skipped[ms.method] = std::move(skips);

    write_text(plan.outdir / "scores" / (ms.method + ".jsonl"), scores_jsonl(ms));
    result.reports.push_back(std::move(report));
    result.scores.push_back(std::move(ms));
  }

  write_text(plan.outdir / "reports" / "eval.json", eval.dump(2) + "\n");
  write_text(plan.outdir / "reports" / "eval.csv", to_csv(result.reports));
  write_text(plan.outdir / "reports" / "skipped.json", skipped.dump(2) + "\n");

  const double level = plan.fpr_levels.front();
  if (!plan.k_grid.empty()) {
    std::vector<MethodConfig> token_methods;
    for (const auto& m : plan.methods)
      if (m.method != Method::Loss && m.method != Method::Zlib && m.method != Method::Neighbor)
        token_methods.push_back(m);
    if (!token_methods.empty()) {
      result.k_sweep = sweep(corpus, token_methods, SweepAxis::k, plan.k_grid, level, plan.workers);
      write_text(plan.outdir / "sweeps" / "k.csv", sweep_csv(SweepAxis::k, result.k_sweep, level));
    }
  }
  if (!plan.window_grid.empty()) {
    std::vector<MethodConfig> smoothed;
    for (const auto& m : plan.methods)
      if (m.method == Method::GapK || m.method == Method::MinKppSmoothed) smoothed.push_back(m);
    if (!smoothed.empty()) {
      result.window_sweep = sweep(corpus, smoothed, SweepAxis::window, plan.window_grid, level, plan.workers);
      write_text(plan.outdir / "sweeps" / "window.csv", sweep_csv(SweepAxis::window, result.window_sweep, level));
    }
  }

  if (!plan.trace_ids.empty()) {
    for (const auto& id : plan.trace_ids) {
      auto it = std::find_if(corpus.records.begin(), corpus.records.end(),
                             [&](const SampleRecord& r) { return r.sample_id == id; });
      if (it == corpus.records.end()) throw DataError("trace requested for unknown sample_id '" + id + "'");
      nlohmann::ordered_json j;
      j["sample_id"] = id;
      j["methods"] = nlohmann::ordered_json::object();
      for (const auto& cfg : plan.methods) {
        try {
          auto s = score_sample(*it, cfg);
          j["methods"][std::string(method_name(cfg.method))] = trace_json(s.trace, s.score);
        } catch (const MissingInputError&) {
        }
      }
      write_text(plan.outdir / "traces" / (safe_file_stem(id) + ".json"), j.dump(2) + "\n");
    }
  }
  return result;
}

inline RunResult run(const ExperimentPlan& plan) { return run(load_corpora(plan.corpora), plan); }

}  // namespace gapk
