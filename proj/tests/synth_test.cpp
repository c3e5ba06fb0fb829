#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>

#include "gapk/harness.hpp"
#include "gapk/synth.hpp"
#include "oracles.hpp"

namespace {

gapk::SynthConfig small_config() {
  gapk::SynthConfig c;
  c.vocab_size = 16;
  c.n_member = 40;
  c.n_nonmember = 40;
  c.seq_len = 24;
  c.neighbor_count = 3;
  return c;
}

TEST(Synth, DeterministicGivenSeed) {
  const auto a = gapk::build_toy_lm(small_config());
  const auto b = gapk::build_toy_lm(small_config());
  EXPECT_EQ(a.members, b.members);
  EXPECT_EQ(a.nonmembers, b.nonmembers);
  EXPECT_EQ(a.lm.counts(), b.lm.counts());
  EXPECT_EQ(gapk::synthesize_corpus(small_config()), gapk::synthesize_corpus(small_config()));

  auto other = small_config();
  other.seed = 43;
  EXPECT_NE(gapk::build_toy_lm(other).members, a.members);
}

TEST(Synth, ZeroPassesIsUniformPrior) {
  auto cfg = small_config();
  cfg.train_passes = 0;
  const auto b = gapk::build_toy_lm(cfg);
  EXPECT_TRUE(b.lm.counts().empty());
  for (double p : b.lm.conditional(3)) EXPECT_DOUBLE_EQ(p, 1.0 / 16.0);
}

TEST(Synth, LargeAlphaApproachesUniform) {
  auto cfg = small_config();
  cfg.dirichlet_alpha = 1e9;
  const auto b = gapk::build_toy_lm(cfg);
  const auto ctx = gapk::context_index(b.members[0], 2, 2, 16);
  for (double p : b.lm.conditional(ctx)) EXPECT_NEAR(p, 1.0 / 16.0, 1e-6);
}

TEST(Synth, ConditionalsAreNormalized) {
  const auto b = gapk::build_toy_lm(small_config());
  for (const auto& [ctx, row] : b.lm.counts()) {
    double s = 0.0;
    for (double p : b.lm.conditional(ctx)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  double s = 0.0;
  for (double p : b.truth.conditional(17)) s += p;
  EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(Synth, UniformModelGivesZeroScores) {
  gapk::ToyLM lm(3, 1, 0.5);
  const std::vector<gapk::LabeledText> texts{{"u", {0, 1, 2, 2, 0}, gapk::Label::member}};
  const auto c = gapk::emit_records(lm, texts);
  ASSERT_EQ(c.records[0].tokens.size(), 4u);
  for (const auto& t : c.records[0].tokens) {
    EXPECT_DOUBLE_EQ(t.target_logprob, std::log(1.0 / 3.0));
    EXPECT_EQ(t.target_logprob, t.top1_logprob);
    EXPECT_EQ(t.mean_logprob, t.top1_logprob);
    EXPECT_EQ(t.std_logprob, 0.0);
  }
  for (double g : gapk::gap_scores(c.records[0], 1e-6)) EXPECT_EQ(g, 0.0);
  for (double z : gapk::z_scores(c.records[0], 1e-6)) EXPECT_EQ(z, 0.0);
}

TEST(Synth, ExplicitThreeTokenConditional) {
  // alpha 1 with counts (6, 1, 0) after context 0 gives exactly (0.7, 0.2, 0.1).
  gapk::ToyLM lm(3, 1, 1.0);
  for (int i = 0; i < 6; ++i) lm.observe(std::vector<gapk::TokenId>{0, 0});
  lm.observe(std::vector<gapk::TokenId>{0, 1});
  const std::vector<gapk::LabeledText> texts{{"t", {0, 1}, std::nullopt}};
  const auto t = gapk::emit_records(lm, texts).records[0].tokens[0];
  const auto want = oracle::stats_from_distribution({0.7, 0.2, 0.1}, 1);
  EXPECT_NEAR(t.target_logprob, want.target_logprob, 1e-12);
  EXPECT_NEAR(t.top1_logprob, want.top1_logprob, 1e-12);
  EXPECT_NEAR(t.mean_logprob, want.mean_logprob, 1e-12);
  EXPECT_NEAR(t.std_logprob, want.std_logprob, 1e-12);
}

TEST(Synth, EmittedStatsMatchBruteForce) {
  const auto cfg = small_config();
  const auto b = gapk::build_toy_lm(cfg);
  const auto corpus = gapk::synthesize_corpus(cfg);
  ASSERT_EQ(corpus.records.size(), 80u);
  for (std::size_t s = 0; s < b.members.size(); ++s) {
    const auto& seq = b.members[s];
    const auto& rec = corpus.records[s];
    ASSERT_EQ(rec.tokens.size(), seq.size() - 2);
    for (std::size_t pos = 2; pos < seq.size(); ++pos) {
      // Recount the conditional directly from the sequences.
      std::vector<double> counts(16, 0.0);
      for (const auto& m : b.members)
        for (std::size_t q = 2; q < m.size(); ++q)
          if (m[q - 2] == seq[pos - 2] && m[q - 1] == seq[pos - 1]) counts[m[q]] += cfg.train_passes;
      double total = 0.0;
      for (double c : counts) total += c;
      std::vector<double> p;
      for (double c : counts) p.push_back((c + cfg.dirichlet_alpha) / (total + cfg.dirichlet_alpha * 16));
      const auto want = oracle::stats_from_distribution(p, seq[pos]);
      const auto& got = rec.tokens[pos - 2];
      ASSERT_NEAR(got.target_logprob, want.target_logprob, 1e-12);
      ASSERT_NEAR(got.top1_logprob, want.top1_logprob, 1e-12);
      ASSERT_NEAR(got.mean_logprob, want.mean_logprob, 1e-12);
      ASSERT_NEAR(got.std_logprob, want.std_logprob, 1e-12);
    }
  }
}

TEST(Synth, RecordsPassValidation) {
  const auto corpus = gapk::synthesize_corpus(small_config());
  const auto p = std::filesystem::temp_directory_path() / ("gapk_synth_" + std::to_string(::getpid()) + ".jsonl");
  gapk::write_corpus(corpus, p);
  const auto r = gapk::parse_corpus_lenient(p);
  std::filesystem::remove(p);
  EXPECT_TRUE(r.diagnostics.empty());
  EXPECT_EQ(r.corpus.records.size(), corpus.records.size());
  for (const auto& rec : r.corpus.records) {
    EXPECT_TRUE(rec.text.has_value());
    ASSERT_TRUE(rec.neighbor_losses.has_value());
    EXPECT_EQ(rec.neighbor_losses->size(), 3u);
  }
}

TEST(Synth, ZeroMaskFractionNeighborsEqualOriginalLoss) {
  auto cfg = small_config();
  cfg.neighbor_mask_fraction = 0.0;
  const auto corpus = gapk::synthesize_corpus(cfg);
  for (const auto& r : corpus.records) {
    gapk::MethodConfig m;
    m.method = gapk::Method::Neighbor;
    EXPECT_NEAR(gapk::score_sample(r, m).score, 0.0, 1e-12);
  }
}

TEST(Synth, RejectsShortText) {
  gapk::ToyLM lm(4, 2, 0.1);
  const std::vector<gapk::LabeledText> texts{{"short", {1, 2}, std::nullopt}};
  EXPECT_THROW(gapk::emit_records(lm, texts), std::invalid_argument);
  gapk::SynthConfig bad;
  bad.seq_len = 2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Synth, MembershipSignalOnSmallConfig) {
  auto cfg = small_config();
  cfg.n_member = 150;
  cfg.n_nonmember = 150;
  const auto corpus = gapk::synthesize_corpus(cfg);
  gapk::MethodConfig loss;
  loss.method = gapk::Method::Loss;
  EXPECT_GT(gapk::corpus_auroc(corpus, loss), 0.5);
}

TEST(Synth, RenderedTextIsStable) {
  EXPECT_EQ(gapk::render_text(std::vector<gapk::TokenId>{0, 1, 16, 200}), "ba da be puda");
}

}  // namespace
