// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/curriculum.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "normcl/errors.h"
#include "support/oracles.h"

namespace normcl {
namespace {

TEST(Difficulty, NormSumsWordNorms) {
  std::vector<double> flat(7 * 1, 0.0);
  flat[4] = 1.5, flat[5] = 2.0, flat[6] = -0.5;
  const EmbeddingTable t(flat, 7, 1, {false, false, false, false, true, true, true});
  EXPECT_DOUBLE_EQ(sentence_difficulty_norm(Sentence{4, 5, 6}, t), 4.0);
  EXPECT_DOUBLE_EQ(sentence_difficulty_norm(Sentence{5}, t), 2.0);
  EXPECT_GT(sentence_difficulty_norm(Sentence{4, 5, 6, 4}, t), sentence_difficulty_norm(Sentence{4, 5, 6}, t));
  EXPECT_THROW(sentence_difficulty_norm(Sentence{}, t), ContractViolation);
}

TEST(Difficulty, NormOrderAgreesWithAppendedToken) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> flat(40 * 3);
  for (auto& v : flat) v = n(rng);
  const EmbeddingTable t(flat, 40, 3, std::vector<bool>(40, true));
  std::uniform_int_distribution<TokenId> tok(4, 39);
  for (int trial = 0; trial < 200; ++trial) {
    Sentence s(1 + trial % 9);
    for (auto& x : s) x = tok(rng);
    Sentence longer = s;
    longer.push_back(tok(rng));
    EXPECT_LT(sentence_difficulty_norm(s, t), sentence_difficulty_norm(longer, t));
  }
}

TEST(Difficulty, LengthAndRarity) {
  EXPECT_EQ(sentence_difficulty_length(Sentence{4, 5, 6}), 3.0);
  EXPECT_EQ(sentence_difficulty_length(Sentence(200, 4)), 200.0);
  const auto v = Vocabulary::build(std::vector<std::string>{"a a b c"}, 1);
  const TokenId a = v.id_of("a");
  EXPECT_NEAR(sentence_difficulty_rarity(Sentence{a}, v), 0.6931471805599453, 1e-12);
  EXPECT_NEAR(sentence_difficulty_rarity(Sentence{a, a}, v), 1.3862943611198906, 1e-12);
  EXPECT_LT(sentence_difficulty_rarity(Sentence{a}, v), sentence_difficulty_rarity(Sentence{v.id_of("b")}, v));
  EXPECT_DOUBLE_EQ(sentence_difficulty_rarity(Sentence{kUnkId}, v),
                   sentence_difficulty_rarity(Sentence{v.id_of("c")}, v));
}

TEST(Cdf, Examples) {
  EXPECT_EQ(cdf_normalize(std::vector<double>{2, 5, 3, 9}), (std::vector<double>{0.25, 0.75, 0.5, 1.0}));
  const auto tie = cdf_normalize(std::vector<double>{1, 1, 2});
  EXPECT_EQ(tie[0], 2.0 / 3.0);
  EXPECT_EQ(tie[1], 2.0 / 3.0);
  EXPECT_EQ(tie[2], 1.0);
  EXPECT_EQ(cdf_normalize(std::vector<double>(5, 7.0)), std::vector<double>(5, 1.0));
  EXPECT_THROW(cdf_normalize(std::vector<double>{}), ContractViolation);
}

TEST(Cdf, MatchesBruteForceWithTies) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> v(0, 6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> raw(1 + trial % 30);
    for (auto& x : raw) x = v(rng);
    EXPECT_EQ(cdf_normalize(raw), testing::brute_cdf(raw));
  }
}

TEST(Profile, InvertedReversesOrderAndRoundTrips) {
  const auto p = make_profile(Criterion::length, {2, 5, 9});
  const auto inv = p.inverted();
  EXPECT_EQ(inv.cdf, (std::vector<double>{1.0, 2.0 / 3.0, 1.0 / 3.0}));
  EXPECT_EQ(inv.raw, p.raw);
  const auto dir = testing::temp_dir("profile");
  p.save(dir / "d.tsv");
  const auto back = DifficultyProfile::load(dir / "d.tsv");
  EXPECT_EQ(back.raw, p.raw);
  EXPECT_EQ(back.cdf, p.cdf);
  EXPECT_EQ(back.criterion, Criterion::length);
}

TEST(ScoreCorpus, LengthCdfAndCoverage) {
  const auto c = testing::toy_corpus({{Sentence(2, 4), {4}}, {Sentence(5, 4), {4}}, {Sentence(9, 4), {4}}});
  const auto p = score_corpus(c, Criterion::length, nullptr, nullptr);
  EXPECT_EQ(p.cdf, (std::vector<double>{1.0 / 3.0, 2.0 / 3.0, 1.0}));
  EXPECT_THROW(score_corpus(c, Criterion::norm, nullptr, nullptr), ConfigError);
  EXPECT_THROW(score_corpus(c, Criterion::rarity, nullptr, nullptr), ConfigError);
}

TEST(Competence, TimeSchedule) {
  EXPECT_EQ(competence_time(0, 0.01, 1000), 0.01);
  EXPECT_EQ(competence_time(1000, 0.01, 1000), 1.0);
  EXPECT_EQ(competence_time(5000, 0.01, 1000), 1.0);
  EXPECT_NEAR(competence_time(500, 0.01, 1000), std::sqrt(0.5 * (1 - 1e-4) + 1e-4), 1e-15);
  EXPECT_NEAR(competence_time(500, 0.01, 1000), 0.707142, 1e-6);
  EXPECT_THROW(competence_time(1, 0.01, 0), ConfigError);
  double prev = 0;
  for (int t = 0; t <= 1200; t += 7) {
    const double c = competence_time(t, 0.01, 1000);
    EXPECT_GE(c, prev);
    EXPECT_GT(c, 0.0);
    EXPECT_LE(c, 1.0);
    prev = c;
  }
}

TEST(Competence, NormSchedule) {
  EXPECT_EQ(competence_norm(100, 100, 0.01, 2.5), 0.01);
  EXPECT_EQ(competence_norm(350, 100, 0.01, 2.5), 1.0);
  EXPECT_EQ(competence_norm(80, 100, 0.01, 2.5), 0.01);
  EXPECT_NEAR(competence_norm(225, 100, 0.01, 2.5), 0.707142, 1e-6);
  EXPECT_THROW(competence_norm(1, 0, 0.01, 2.5), ConfigError);
  EXPECT_THROW(competence_norm(1, 1, 0.01, 0), ConfigError);
}

TEST(Competence, ScheduleDispatch) {
  CompetenceSchedule s;
  s.kind = CompetenceKind::none;
  EXPECT_EQ(s(0, 0), 1.0);
  s.kind = CompetenceKind::norm_based;
  s.m0 = 10;
  EXPECT_EQ(s(0, 10), 0.01);
  s.kind = CompetenceKind::time_sqrt;
  EXPECT_EQ(s(1000, 0), 1.0);
}

TEST(Weight, Examples) {
  EXPECT_EQ(sentence_weight(0.3, 0.3, 0.5), 1.0);
  EXPECT_EQ(sentence_weight(0.1, 0.9, 0.0), 1.0);
  EXPECT_EQ(sentence_weight(0.25, 1.0, 0.5), 0.5);
  EXPECT_THROW(sentence_weight(0.2, 0.0, 0.5), ContractViolation);
  double prev = 0;
  for (double d = 0.05; d <= 0.6; d += 0.05) {
    const double w = sentence_weight(d, 0.6, 0.5);
    EXPECT_GT(w, prev);
    EXPECT_LE(w, 1.0 + 1e-15);
    prev = w;
  }
}

TEST(MatrixNorm, RowSumAndFrobenius) {
  EXPECT_DOUBLE_EQ(embedding_matrix_norm(Tensor::from_rows({{3, 4}, {0, 0.5}})), 5.5);
  EXPECT_DOUBLE_EQ(embedding_matrix_norm(Tensor::from_rows({{3, 4}, {0, 0}}), MatrixNorm::frobenius), 5.0);
  Tensor k(4, 4);
  for (int i = 0; i < 4; ++i) k(i, i) = -2.5;
  EXPECT_DOUBLE_EQ(embedding_matrix_norm(k), 10.0);
  EXPECT_THROW(embedding_matrix_norm(Tensor(3, 2)), DegenerateStateError);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  Tensor r(10, 4);
  for (auto& v : r.values()) v = n(rng);
  double expect = 0;
  for (int i = 0; i < 10; ++i) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += r(i, j) * r(i, j);
    expect += std::sqrt(s);
  }
  EXPECT_NEAR(embedding_matrix_norm(r), expect, 1e-12);
}

TEST(Sampler, StrictEligibilityAndFloor) {
  std::vector<double> raw;
  for (int k = 1; k <= 10; ++k) raw.push_back(k);
  const auto p = make_profile(Criterion::length, raw);
  std::vector<std::pair<Sentence, Sentence>> pairs(10, {{4}, {4}});
  const auto c = testing::toy_corpus(pairs);

  CurriculumSampler s(p, 1, 1, 3);
  EXPECT_EQ(s.eligible_ids(0.35), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(s.eligible_count(0.3), 2u);
  EXPECT_EQ(s.eligible_count(1.0), 10u);

  CurriculumSampler floor(p, 2, 1, 3);
  for (int i = 0; i < 100; ++i) {
    const auto ids = floor.sample(0.01, c);
    ASSERT_EQ(ids.size(), 1u);
    EXPECT_LT(ids[0], 2u);
  }
}

TEST(Sampler, BoundaryNeverShrinks) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 10);
  std::vector<double> raw(300);
  for (auto& v : raw) v = u(rng);
  const auto p = make_profile(Criterion::norm, raw);
  CurriculumSampler s(p, 64, 10, 1);
  std::size_t prev = 0;
  for (int t = 0; t <= 1000; t += 10) {
    const std::size_t k = s.eligible_count(competence_time(t, 0.01, 800));
    EXPECT_GE(k, prev);
    prev = k;
  }
  EXPECT_EQ(prev, 300u);
}

TEST(Sampler, FullCompetenceMatchesPlainBatcher) {
  const auto c = testing::copy_task(40, 8, 1, 6, 2);
  std::vector<double> raw(c.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<double>((i * 7) % 13);
  CurriculumSampler s(make_profile(Criterion::length, raw), 4, 20, 11);
  std::mt19937_64 rng(11);
  std::vector<std::size_t> all(c.size());
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(s.sample(1.0, c), draw_batch(all, c, 20, rng));
}

}  // namespace
}  // namespace normcl
