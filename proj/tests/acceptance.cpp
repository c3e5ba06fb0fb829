// Acceptance suite: one PASS/FAIL line per top-level criterion. Exit status is
// nonzero when any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "gapk/gapk.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

int g_failed = 0;

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failed;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

gapk::MethodConfig cfg(gapk::Method m, double k = 20.0, int w = 3) {
  gapk::MethodConfig c;
  c.method = m;
  c.k_percent = k;
  c.window = w;
  return c;
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void decomposition_identity() {
  std::mt19937_64 rng(101);
  std::vector<gapk::SampleRecord> samples;
  for (int i = 0; i < 10000; ++i) {
    gapk::SampleRecord r;
    r.sample_id = std::to_string(i);
    r.tokens.push_back(oracle::random_token(rng));
    samples.push_back(std::move(r));
  }
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& r : samples) {
    const double z = gapk::z_scores(r, 1e-6)[0];
    const double g = gapk::gap_scores(r, 1e-6)[0];
    const double d = gapk::delta_scores(r, 1e-6)[0];
    worst = std::max(worst, std::abs(g - (z - d)) / std::max(1.0, std::abs(g)));
  }
  const double secs = seconds_since(t0);
  report("decomposition-identity", worst <= 1e-9 && secs < 1.0,
         fmt("10000 tokens, max rel err %.3g, %.3f s", worst, secs));
}

void non_positivity() {
  std::mt19937_64 rng(202);
  std::size_t bad = 0, zeros = 0;
  for (int i = 0; i < 10000; ++i) {
    gapk::SampleRecord r;
    auto t = oracle::random_token(rng);
    if (i % 4 == 0) t.target_logprob = t.top1_logprob;
    if (i % 10 == 1) t.std_logprob = 0.0;
    r.tokens.push_back(t);
    const double g = gapk::gap_scores(r, 1e-6)[0];
    const bool equal = t.target_logprob == t.top1_logprob;
    zeros += equal;
    if (g > 0.0 || (g == 0.0) != equal) ++bad;
  }
  report("non-positivity-boundary", bad == 0,
         fmt("10000 tokens (%g with target == top1), %g violations", static_cast<double>(zeros),
             static_cast<double>(bad)));
}

void degeneracy_chain() {
  std::mt19937_64 rng(303);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto r = oracle::random_sample(rng, "deg-" + std::to_string(i));
    const double loss = gapk::score_sample(r, cfg(gapk::Method::Loss)).score;
    const double mink = gapk::score_sample(r, cfg(gapk::Method::MinK, 100)).score;
    const double g1 = gapk::score_sample(r, cfg(gapk::Method::GapK, 20, 1)).score;
    const double top1 = gapk::score_sample(r, cfg(gapk::Method::GapKUnsmoothedTop1, 20, 1)).score;
    auto sh = cfg(gapk::Method::GapK, 20, 1);
    sh.smoothing_order = gapk::SmoothingOrder::shuffled(rng());
    const double shuffled = gapk::score_sample(r, sh).score;
    if (!rel_close(mink, loss, 1e-12) || !rel_close(g1, top1, 1e-12) || !rel_close(shuffled, g1, 1e-12)) ++bad;
  }
  report("degeneracy-chain", bad == 0, fmt("1000 samples, %g mismatches", static_cast<double>(bad)));
}

void metric_oracles() {
  std::mt19937_64 rng(404);
  const auto t0 = Clock::now();
  std::size_t bad = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    gapk::ClassScores cs;
    const std::size_t n = 2 + rng() % 1999;
    const int distinct = trial % 3 == 0 ? 7 : (trial % 3 == 1 ? 200 : 1000000000);
    for (std::size_t i = 0; i < n; ++i) {
      const bool member = i == 0 || (i != 1 && rng() % 2);
      const double v = static_cast<double>(rng() % distinct) / 10.0 + (member ? 0.3 : 0.0);
      (member ? cs.members : cs.nonmembers).push_back(v);
    }
    const double want = oracle::pair_count_auroc(cs.members, cs.nonmembers);
    const double a = gapk::auroc(cs);
    const double area = gapk::trapezoid_area(gapk::roc_curve(cs));
    worst = std::max({worst, std::abs(a - want), std::abs(area - want)});
    for (double level : {0.01, 0.05, 0.1, 0.25}) {
      const double t = gapk::tpr_at_fpr(cs, level);
      const double tw = oracle::exhaustive_tpr_at_fpr(cs.members, cs.nonmembers, level);
      worst = std::max(worst, std::abs(t - tw));
    }
  }
  bad = worst > 1e-12;
  const double secs = seconds_since(t0);
  report("metric-oracle-equivalence", bad == 0 && secs < 30.0,
         fmt("100 sets up to 2000 samples, max abs err %.3g, %.2f s", worst, secs));
}

void selection_oracle() {
  std::mt19937_64 rng(505);
  std::size_t bad = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    const int distinct = trial % 2 ? 3 : 1000000;
    std::vector<double> xs(n);
    for (double& x : xs) x = -static_cast<double>(rng() % distinct) / 4.0;
    const double k = 1.0 + static_cast<double>(rng() % 100);
    const auto got = gapk::bottom_k_mean(xs, k);
    const auto [mean, idx] = oracle::full_sort_bottom_k(xs, k);
    if (got.indices != idx || !rel_close(got.mean, mean, 1e-12)) ++bad;
  }
  report("selection-oracle", bad == 0, fmt("10000 lists, %g mismatches", static_cast<double>(bad)));
}

gapk::SynthConfig pinned_synth() {
  gapk::SynthConfig s;
  s.seed = 42;
  s.vocab_size = 64;
  s.order = 2;
  s.n_member = 500;
  s.n_nonmember = 500;
  s.seq_len = 64;
  s.train_passes = 4;
  s.dirichlet_alpha = 0.1;
  return s;
}

gapk::ExperimentPlan evaluate_plan(const fs::path& out, unsigned workers) {
  gapk::ExperimentPlan plan;
  for (const char* m : {"loss", "zlib", "neighbor", "mink", "minkpp", "gapk"})
    plan.methods.push_back(cfg(*gapk::parse_method(m)));
  plan.outdir = out;
  plan.workers = workers;
  return plan;
}

// AUROCs of the pinned configuration, frozen from the first build and
// cross-checked against pair counting over the emitted scores.
constexpr std::pair<const char*, double> kSnapshot[] = {
    {"loss", 0.822792},  {"zlib", 0.820860},   {"neighbor", 0.636908},
    {"mink", 0.880544},  {"minkpp", 0.817140}, {"gapk", 0.829252},
};

void synthetic_end_to_end(const fs::path& work) {
  const auto corpus = gapk::synthesize_corpus(pinned_synth());
  const auto t0 = Clock::now();
  const auto result = gapk::run(corpus, evaluate_plan(work / "e2e", 1));
  const double secs = seconds_since(t0);

  bool above = true, snap = true, oracle_ok = true;
  std::string detail;
  for (std::size_t i = 0; i < result.reports.size(); ++i) {
    const auto& r = result.reports[i];
    const auto cs = gapk::labeled_scores(result.scores[i]);
    oracle_ok = oracle_ok && std::abs(oracle::pair_count_auroc(cs.members, cs.nonmembers) - r.auroc) <= 1e-12;
    above = above && r.auroc > 0.5;
    snap = snap && r.method == kSnapshot[i].first && std::abs(r.auroc - kSnapshot[i].second) <= 1e-9;
    detail += r.method + "=" + fmt("%.6f", r.auroc) + " ";
  }
  report("synthetic-auroc-above-chance", above && secs < 60.0 && result.reports.size() == 6,
         detail + fmt("(%.2f s, 1 worker)", secs));
  report("synthetic-snapshot", snap && oracle_ok,
         snap ? "matches frozen values" : "differs from frozen values: " + detail);

  auto zero = pinned_synth();
  zero.train_passes = 0;
  const auto null_corpus = gapk::synthesize_corpus(zero);
  const auto null_result = gapk::run(null_corpus, evaluate_plan(work / "null", 1));
  bool chance = true;
  detail.clear();
  for (const auto& r : null_result.reports) {
    chance = chance && r.auroc >= 0.48 && r.auroc <= 0.52;
    detail += r.method + "=" + fmt("%.4f", r.auroc) + " ";
  }
  report("untrained-model-at-chance", chance, detail);
}

void ablation_layouts() {
  const auto corpus = gapk::synthesize_corpus(pinned_synth());
  const auto ab = gapk::ablation_table(corpus, cfg(gapk::Method::GapK, 20, 1));
  report("ablation-window-one", ab[0].name == "Min-K%++" && ab[2].name == "+ Smoothing" && ab[0].auroc == ab[2].auroc,
         fmt("Min-K%%++=%.6f +Smoothing=%.6f", ab[0].auroc, ab[2].auroc));
  const auto sc = gapk::shuffle_control(corpus, cfg(gapk::Method::GapK, 20, 1), 7);
  report("shuffle-control-window-one", sc.size() == 3 && sc[0].auroc == sc[1].auroc && sc[1].auroc == sc[2].auroc,
         fmt("rows %.6f %.6f %.6f", sc[0].auroc, sc[1].auroc, sc[2].auroc));
}

void determinism(const fs::path& work) {
  gapk::SynthConfig s = pinned_synth();
  s.n_member = 200;
  s.n_nonmember = 200;
  const auto corpus = gapk::synthesize_corpus(s);
  auto plan_for = [&](const fs::path& out, unsigned workers) {
    auto plan = evaluate_plan(out, workers);
    plan.methods.push_back(cfg(gapk::Method::MinKppSmoothed));
    plan.k_grid = gapk::ExperimentPlan::default_k_grid();
    plan.window_grid = gapk::ExperimentPlan::default_window_grid();
    plan.trace_ids = {"member-00003", "nonmember-00004"};
    return plan;
  };
  gapk::run(corpus, plan_for(work / "det1", 1));
  gapk::run(corpus, plan_for(work / "det1b", 1));
  gapk::run(corpus, plan_for(work / "det4", 4));
  std::size_t files = 0, diffs = 0;
  for (const auto& e : fs::recursive_directory_iterator(work / "det1")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), work / "det1");
    const auto body = slurp(e.path());
    diffs += body != slurp(work / "det1b" / rel);
    diffs += body != slurp(work / "det4" / rel);
    ++files;
  }
  report("determinism", files > 0 && diffs == 0,
         fmt("%g files compared across reruns and 1 vs 4 workers, %g differ", static_cast<double>(files),
             static_cast<double>(diffs)));
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("gapk_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  try {
    decomposition_identity();
    non_positivity();
    degeneracy_chain();
    metric_oracles();
    selection_oracle();
    synthetic_end_to_end(work);
    ablation_layouts();
    determinism(work);
  } catch (const std::exception& e) {
    report("internal-error", false, e.what());
  }
  fs::remove_all(work);
  std::printf("%d criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
