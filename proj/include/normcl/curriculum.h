// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// Sentence difficulty, its CDF normalisation, competence schedules, sentence
// weights, and the competence-gated batch sampler.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "normcl/corpus.h"
#include "normcl/embedding.h"
#include "normcl/tensor.h"

namespace normcl {

enum class Criterion { norm, length, rarity };
std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view s);

// Sum of word norms; throws ContractViolation on an empty sentence.
double sentence_difficulty_norm(std::span<const TokenId> sentence, const EmbeddingTable& table);
double sentence_difficulty_length(std::span<const TokenId> sentence);
// Sum of -log(count/total); unknown ids use the smallest in-vocabulary probability.
double sentence_difficulty_rarity(std::span<const TokenId> sentence, const Vocabulary& vocab);

// Empirical CDF: out[n] = #{k : raw[k] <= raw[n]} / N.
std::vector<double> cdf_normalize(std::span<const double> raws);

struct DifficultyProfile {
  Criterion criterion = Criterion::norm;
  std::vector<double> raw;  // indexed by sentence id
  std::vector<double> cdf;

  std::size_t size() const { return raw.size(); }
  // Same sentences with the order reversed (hardest first); used for the
  // anti-curriculum control.
  DifficultyProfile inverted() const;

  void save(const std::filesystem::path& path) const;
  static DifficultyProfile load(const std::filesystem::path& path);
};

DifficultyProfile make_profile(Criterion criterion, std::vector<double> raw);
// Scores the source side. table is required for norm, vocab for rarity.
DifficultyProfile score_corpus(const ParallelCorpus& corpus, Criterion criterion,
                               const EmbeddingTable* table, const Vocabulary* source_vocab);

// min(1, sqrt(t (1 - c0^2) / lambda_t + c0^2))
double competence_time(double t, double c0, double lambda_t);
// min(1, sqrt(max(0, m_t - m0) (1 - c0^2) / (lambda_m m0) + c0^2))
double competence_norm(double m_t, double m0, double c0, double lambda_m);
// (d_hat / c_hat)^lambda_w
double sentence_weight(double d_hat, double c_hat, double lambda_w);

enum class MatrixNorm { row_sum, frobenius };
std::string_view to_string(MatrixNorm n);
MatrixNorm parse_matrix_norm(std::string_view s);

// Norm of the model's source embedding matrix. row_sum adds up the Euclidean
// norm of every row. Throws DegenerateStateError on an all-zero matrix.
double embedding_matrix_norm(const Tensor& matrix, MatrixNorm kind = MatrixNorm::row_sum);

enum class CompetenceKind { none, time_sqrt, norm_based };
std::string_view to_string(CompetenceKind k);
CompetenceKind parse_competence_kind(std::string_view s);

struct CompetenceSchedule {
  CompetenceKind kind = CompetenceKind::norm_based;
  double c0 = 0.01;
  double lambda_t = 1000.0;
  double lambda_m = 2.5;
  double m0 = 0.0;  // set once from the freshly initialised model

  void validate() const;
  // Competence given the number of completed updates and the current norm.
  double operator()(double completed_steps, double m_t) const;
};

// Draws token-budget batches from the sentences whose cdf lies strictly below
// the competence. The eligible set never shrinks below the min_pool easiest
// sentences; competence 1 makes every sentence eligible.
class CurriculumSampler {
 public:
  CurriculumSampler(const DifficultyProfile& profile, std::size_t min_pool,
                    std::size_t token_budget, std::uint64_t seed);

  std::size_t eligible_count(double c_hat) const;
  std::vector<std::size_t> eligible_ids(double c_hat) const;
  std::vector<std::size_t> sample(double c_hat, const ParallelCorpus& corpus);

  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }
  std::span<const std::size_t> order() const { return order_; }

 private:
  std::vector<std::size_t> all_ids_;
  std::vector<std::size_t> order_;  // ids sorted by cdf ascending
  std::vector<double> sorted_cdf_;
  std::size_t min_pool_;
  std::size_t token_budget_;
  std::mt19937_64 rng_;
};

}  // namespace normcl
