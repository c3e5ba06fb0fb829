// gapk: membership-inference scoring and benchmark CLI.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gapk/gapk.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by every scoring subcommand; names mirror MethodConfig fields.
struct MethodFlags {
  double k_percent = 20.0;
  int window = 3;
  std::string smoothing_order = "sequential";
  std::uint64_t seed = 0;
  double sigma_floor = 1e-6;
  int zlib_level = 6;

  void add_to(CLI::App& app) {
    app.add_option("--k", k_percent, "Percent of lowest token scores averaged, in (0,100]")
        ->capture_default_str();
    app.add_option("--window", window, "Sliding-window size for smoothed methods")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--smoothing-order", smoothing_order, "Token order before smoothing")
        ->check(CLI::IsMember({"sequential", "shuffled"}))
        ->capture_default_str();
    app.add_option("--seed", seed, "Seed for shuffled smoothing")->capture_default_str();
    app.add_option("--sigma-floor", sigma_floor, "Lower clamp on the std denominator (nats)")
        ->capture_default_str();
    app.add_option("--zlib-level", zlib_level, "DEFLATE level for the zlib baseline")
        ->check(CLI::Range(-1, 9))
        ->capture_default_str();
  }

  gapk::MethodConfig config(gapk::Method m) const {
    gapk::MethodConfig c;
    c.method = m;
    c.k_percent = k_percent;
    c.window = window;
    c.smoothing_order = smoothing_order == "shuffled" ? gapk::SmoothingOrder::shuffled(seed)
                                                     : gapk::SmoothingOrder::sequential();
    c.smoothing_order.seed = seed;
    c.sigma_floor = sigma_floor;
    c.zlib_level = zlib_level;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  std::string banner() const {
    std::ostringstream os;
    os << "k=" << k_percent << " window=" << window << " smoothing_order=" << smoothing_order
       << " seed=" << seed << " sigma_floor=" << sigma_floor << " zlib_level=" << zlib_level;
    return os.str();
  }
};

gapk::Method parse_method_or_throw(const std::string& name) {
  auto m = gapk::parse_method(name);
  if (!m) throw UsageError("unknown method '" + name + "'");
  return *m;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad grid '" + spec + "' (expected start:stop[:step])");
    }
  }
  if (parts.size() == 1) return parts;
  if (parts.size() < 2 || parts.size() > 3) throw UsageError("bad grid '" + spec + "' (expected start:stop[:step])");
  const double step = parts.size() == 3 ? parts[2] : 1.0;
  if (!(step > 0.0) || parts[1] < parts[0]) throw UsageError("bad grid '" + spec + "'");
  std::vector<double> grid;
  for (int i = 0;; ++i) {
    const double v = parts[0] + step * i;
    if (v > parts[1] + 1e-9 * std::max(1.0, std::abs(parts[1]))) break;
    grid.push_back(v);
  }
  return grid;
}

void print_banner(const std::string& sub, const std::string& body) {
  std::cerr << "# gapk " << sub << " " << body << "\n";
}

void print_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c)
      std::cout << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << r[c];
    std::cout << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string join(const std::vector<std::string>& xs, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + xs[i];
  return out;
}

void print_rows(const std::vector<gapk::TableRow>& rows) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows)
    body.push_back({r.name, r.top1 ? "yes" : "no", r.smoothing ? "yes" : "no", fixed(r.auroc)});
  print_table({"row", "top1", "smoothing", "auroc"}, body);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Membership-inference scoring (Gap-K% and baselines) over token-statistics corpora", "gapk"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  MethodFlags mflags;
  unsigned workers = gapk::default_workers();
  std::string outdir = "out";
  bool json_out = false;
  std::vector<std::string> corpora;

  // validate
  auto* validate = app.add_subcommand("validate", "Check a corpus file and report invalid records");
  std::string validate_path;
  validate->add_option("corpus", validate_path, "Corpus file (.jsonl, optionally gzip)")->required();

  // score
  auto* score = app.add_subcommand("score", "Score every sample with one method");
  std::string score_method = "gapk";
  std::string score_out;
  score->add_option("corpus", corpora, "Corpus file(s)")->required();
  score->add_option("--method", score_method, "Method name")->capture_default_str();
  mflags.add_to(*score);
  score->add_option("--out", score_out, "Output directory (default: print scores to stdout)");
  score->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score and compute AUROC / TPR@FPR per method");
  std::string methods_csv = "loss,zlib,neighbor,mink,minkpp,gapk";
  std::vector<double> fpr_levels{0.05};
  std::size_t bins = 30;
  std::vector<std::string> trace_ids;
  evaluate->add_option("corpus", corpora, "Corpus file(s)")->required();
  evaluate->add_option("--methods", methods_csv, "Comma-separated method names")->capture_default_str();
  evaluate->add_option("--fpr", fpr_levels, "FPR level(s) for TPR@FPR")->capture_default_str();
  evaluate->add_option("--bins", bins, "Histogram bins")->check(CLI::PositiveNumber)->capture_default_str();
  evaluate->add_option("--trace-ids", trace_ids, "Sample ids to write token traces for")->delimiter(',');
  mflags.add_to(*evaluate);
  evaluate->add_option("--out", outdir, "Output directory")->capture_default_str();
  evaluate->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  evaluate->add_flag("--json", json_out, "Print eval.json to stdout instead of a table");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "AUROC across a grid of k or window values");
  std::string axis = "window";
  std::string grid_spec;
  std::string sweep_methods;
  double sweep_fpr = 0.05;
  sweep->add_option("corpus", corpora, "Corpus file(s)")->required();
  sweep->add_option("--axis", axis, "Swept parameter")->check(CLI::IsMember({"window", "k"}))->capture_default_str();
  sweep->add_option("--grid", grid_spec, "start:stop[:step] (default 1:10 for window, 5:50:5 for k)");
  sweep->add_option("--methods", sweep_methods, "Methods (default gapk for window, mink,minkpp,gapk for k)");
  sweep->add_option("--fpr", sweep_fpr, "FPR level for the TPR column")->capture_default_str();
  mflags.add_to(*sweep);
  sweep->add_option("--out", outdir, "Output directory")->capture_default_str();
  sweep->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Component ablation: Min-K%++, +Top-1, +Smoothing, Gap-K%");
  ablate->add_option("corpus", corpora, "Corpus file(s)")->required();
  mflags.add_to(*ablate);
  ablate->add_option("--out", outdir, "Output directory")->capture_default_str();
  ablate->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  // shuffle-control
  auto* shuffle = app.add_subcommand("shuffle-control", "No smoothing vs shuffled-order vs sequential smoothing");
  shuffle->add_option("corpus", corpora, "Corpus file(s)")->required();
  mflags.add_to(*shuffle);
  shuffle->add_option("--out", outdir, "Output directory")->capture_default_str();
  shuffle->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  // trace
  auto* trace = app.add_subcommand("trace", "Token-level score traces for selected samples");
  std::string trace_method = "gapk";
  trace->add_option("corpus", corpora, "Corpus file(s)")->required();
  trace->add_option("--ids", trace_ids, "Comma-separated sample ids")->delimiter(',')->required();
  trace->add_option("--method", trace_method, "Method name")->capture_default_str();
  mflags.add_to(*trace);
  trace->add_option("--out", outdir, "Output directory")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the offline synthetic member/nonmember corpus");
  gapk::SynthConfig sc;
  std::string synth_out = "corpus.jsonl";
  synth->add_option("--seed", sc.seed, "Generator seed")->capture_default_str();
  synth->add_option("--vocab-size", sc.vocab_size, "Vocabulary size")->capture_default_str();
  synth->add_option("--order", sc.order, "Markov context length")->capture_default_str();
  synth->add_option("--n-member", sc.n_member, "Member samples")->capture_default_str();
  synth->add_option("--n-nonmember", sc.n_nonmember, "Nonmember samples")->capture_default_str();
  synth->add_option("--seq-len", sc.seq_len, "Tokens per sample")->capture_default_str();
  synth->add_option("--train-passes", sc.train_passes, "Times members are counted into the toy LM")
      ->capture_default_str();
  synth->add_option("--dirichlet-alpha", sc.dirichlet_alpha, "Additive smoothing of the toy LM")
      ->capture_default_str();
  synth->add_option("--neighbors", sc.neighbor_count, "Perturbed neighbors per sample")->capture_default_str();
  synth->add_option("--mask-frac", sc.neighbor_mask_fraction, "Fraction of positions perturbed per neighbor")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output corpus path (.gz for gzip)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  const std::string wbanner = " workers=" + std::to_string(workers);

  if (validate->parsed()) {
    auto result = gapk::parse_corpus_lenient(validate_path);
    for (const auto& d : result.diagnostics) std::cerr << validate_path << ": " << d.describe() << "\n";
    if (!result.diagnostics.empty()) {
      std::cerr << result.diagnostics.size() << " invalid record(s)\n";
      return kExitData;
    }
    std::cout << "ok: " << result.corpus.records.size() << " records\n";
    return kExitOk;
  }

  if (synth->parsed()) {
    try {
      sc.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    print_banner("synth", "seed=" + std::to_string(sc.seed) + " vocab_size=" + std::to_string(sc.vocab_size) +
                              " order=" + std::to_string(sc.order) + " n_member=" + std::to_string(sc.n_member) +
                              " n_nonmember=" + std::to_string(sc.n_nonmember) + " seq_len=" +
                              std::to_string(sc.seq_len) + " train_passes=" + std::to_string(sc.train_passes) +
                              " dirichlet_alpha=" + nlohmann::json(sc.dirichlet_alpha).dump() +
                              " neighbors=" + std::to_string(sc.neighbor_count) +
                              " mask_frac=" + nlohmann::json(sc.neighbor_mask_fraction).dump() + " out=" + synth_out);
    const auto corpus = gapk::synthesize_corpus(sc);
    gapk::write_corpus(corpus, synth_out);
    std::cout << "wrote " << corpus.records.size() << " records to " << synth_out << "\n";
    return kExitOk;
  }

  std::vector<std::filesystem::path> paths(corpora.begin(), corpora.end());
  const auto corpus = gapk::load_corpora(paths);

  if (score->parsed()) {
    const auto cfg = mflags.config(parse_method_or_throw(score_method));
    print_banner("score", "method=" + score_method + " " + mflags.banner() + wbanner +
                              (score_out.empty() ? "" : " out=" + score_out));
    const auto ms = gapk::score_corpus(corpus, cfg, workers);
    if (!ms.skipped.empty())
      std::cerr << "warning: " << ms.skipped.size() << " of " << corpus.records.size()
                << " samples skipped (" << ms.skipped.front().reason << ")\n";
    if (score_out.empty()) {
      std::cout << gapk::scores_jsonl(ms);
    } else {
      const std::filesystem::path dir = score_out;
      gapk::write_text(dir / "scores" / (ms.method + ".jsonl"), gapk::scores_jsonl(ms));
      auto skips = nlohmann::ordered_json::array();
      for (const auto& s : ms.skipped) skips.push_back({{"sample_id", s.sample_id}, {"reason", s.reason}});
      gapk::write_text(dir / "reports" / "skipped.json", nlohmann::ordered_json{{ms.method, skips}}.dump(2) + "\n");
      std::cout << "scored " << ms.scored.size() << ", skipped " << ms.skipped.size() << "\n";
    }
    return kExitOk;
  }

  if (evaluate->parsed()) {
    gapk::ExperimentPlan plan;
    plan.corpora = paths;
    std::vector<std::string> names;
    std::stringstream ss(methods_csv);
    for (std::string m; std::getline(ss, m, ',');) {
      plan.methods.push_back(mflags.config(parse_method_or_throw(m)));
      names.push_back(m);
    }
    for (double level : fpr_levels)
      if (!(level > 0.0 && level < 1.0)) throw UsageError("--fpr levels must be in (0,1)");
    plan.fpr_levels = fpr_levels;
    plan.histogram_bins = bins;
    plan.trace_ids = trace_ids;
    plan.outdir = outdir;
    plan.workers = workers;
    std::vector<std::string> levels;
    for (double l : fpr_levels) levels.push_back(gapk::format_level(l));
    print_banner("evaluate", "methods=" + join(names) + " fpr=" + join(levels) + " bins=" + std::to_string(bins) +
                                 " " + mflags.banner() + wbanner + " out=" + outdir);
    try {
      gapk::check_plan(plan);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto result = gapk::run(corpus, plan);
    for (const auto& ms : result.scores)
      if (!ms.skipped.empty())
        std::cerr << "warning: " << ms.method << " skipped " << ms.skipped.size() << " samples\n";
    if (json_out) {
      std::ifstream in(plan.outdir / "reports" / "eval.json");
      std::cout << in.rdbuf();
    } else {
      std::vector<std::string> header{"method", "auroc"};
      for (const auto& l : levels) header.push_back("tpr@" + l);
      header.insert(header.end(), {"n_member", "n_nonmember"});
      std::vector<std::vector<std::string>> rows;
      for (const auto& r : result.reports) {
        std::vector<std::string> row{r.method, fixed(r.auroc)};
        for (const auto& [level, tpr] : r.tpr_at_fpr) row.push_back(fixed(tpr));
        row.push_back(std::to_string(r.n_member));
        row.push_back(std::to_string(r.n_nonmember));
        rows.push_back(std::move(row));
      }
      print_table(header, rows);
    }
    return kExitOk;
  }

  if (sweep->parsed()) {
    const auto ax = axis == "k" ? gapk::SweepAxis::k : gapk::SweepAxis::window;
    if (grid_spec.empty()) grid_spec = axis == "k" ? "5:50:5" : "1:10";
    if (sweep_methods.empty()) sweep_methods = axis == "k" ? "mink,minkpp,gapk" : "gapk";
    const auto grid = parse_grid(grid_spec);
    std::vector<gapk::MethodConfig> cfgs;
    std::stringstream ss(sweep_methods);
    for (std::string m; std::getline(ss, m, ',');) cfgs.push_back(mflags.config(parse_method_or_throw(m)));
    for (double v : grid) {
      if (ax == gapk::SweepAxis::k && !(v > 0.0 && v <= 100.0)) throw UsageError("k grid values must be in (0,100]");
      if (ax == gapk::SweepAxis::window && (v < 1.0 || v != std::floor(v)))
        throw UsageError("window grid values must be positive integers");
    }
    print_banner("sweep", "axis=" + axis + " grid=" + grid_spec + " methods=" + sweep_methods + " fpr=" +
                              gapk::format_level(sweep_fpr) + " " + mflags.banner() + wbanner + " out=" + outdir);
    const auto rows = gapk::sweep(corpus, cfgs, ax, grid, sweep_fpr, workers);
    gapk::write_text(std::filesystem::path(outdir) / "sweeps" / (axis + ".csv"), gapk::sweep_csv(ax, rows, sweep_fpr));
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rows)
      body.push_back({gapk::format_param(ax, r.param), r.method, fixed(r.auroc), fixed(r.tpr), std::to_string(r.n)});
    print_table({axis, "method", "auroc", "tpr@" + gapk::format_level(sweep_fpr), "n"}, body);
    return kExitOk;
  }

  if (ablate->parsed()) {
    const auto base = mflags.config(gapk::Method::GapK);
    print_banner("ablate", mflags.banner() + wbanner + " out=" + outdir);
    const auto rows = gapk::ablation_table(corpus, base, workers);
    gapk::write_text(std::filesystem::path(outdir) / "reports" / "ablation.csv", gapk::table_csv(rows));
    print_rows(rows);
    return kExitOk;
  }

  if (shuffle->parsed()) {
    const auto base = mflags.config(gapk::Method::GapK);
    print_banner("shuffle-control", mflags.banner() + wbanner + " out=" + outdir);
    const auto rows = gapk::shuffle_control(corpus, base, mflags.seed, workers);
    gapk::write_text(std::filesystem::path(outdir) / "reports" / "shuffle_control.csv", gapk::table_csv(rows));
    print_rows(rows);
    return kExitOk;
  }

  if (trace->parsed()) {
    const auto cfg = mflags.config(parse_method_or_throw(trace_method));
    print_banner("trace", "ids=" + join(trace_ids) + " method=" + trace_method + " " + mflags.banner() +
                              " out=" + outdir);
    for (const auto& id : trace_ids) {
      auto it = std::find_if(corpus.records.begin(), corpus.records.end(),
                             [&](const gapk::SampleRecord& r) { return r.sample_id == id; });
      if (it == corpus.records.end()) throw gapk::DataError("unknown sample_id '" + id + "'");
      const auto s = gapk::score_sample(*it, cfg);
      nlohmann::ordered_json j;
      j["sample_id"] = id;
      j["methods"] = {{trace_method, gapk::trace_json(s.trace, s.score)}};
      gapk::write_text(std::filesystem::path(outdir) / "traces" / (gapk::safe_file_stem(id) + ".json"),
                       j.dump(2) + "\n");
      std::cout << id << " score=" << s.score << " positions=" << s.trace.raw_scores.size()
                << " selected=" << s.trace.selected_indices.size() << "\n";
    }
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const gapk::CorpusError& e) {
    for (const auto& d : e.diagnostics()) std::cerr << "error: " << d.describe() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const gapk::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const gapk::MissingInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
