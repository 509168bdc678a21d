// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// Skip-gram with negative sampling and the per-word vector norms used to
// score sentence difficulty.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "normcl/corpus.h"

namespace normcl {

struct SgnsConfig {
  int dim = 100;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double initial_lr = 0.05;
  int min_count = 5;
  double subsample_threshold = 1e-4;
  std::uint64_t seed = 1;
  // Worker count for asynchronous training; ignored when deterministic.
  int threads = 1;
  bool deterministic = true;

  void validate() const;
};

// Word-vector matrix with cached row norms. Rows that were never trained
// (below min_count, or the unknown token) are "unknown" and score as the
// largest known norm.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t rows, std::size_t dim);
  EmbeddingTable(std::vector<double> matrix, std::size_t rows, std::size_t dim,
                 std::vector<bool> known);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t i) const { return {matrix_.data() + i * dim_, dim_}; }
  std::span<const double> norms() const { return norms_; }
  bool known(std::size_t i) const { return known_[i]; }
  double max_known_norm() const { return max_norm_; }

  void scale(double k);

  void save_vectors(const std::filesystem::path& path, const Vocabulary& vocab) const;
  // Word norms as scored, so unknown rows carry the max known norm.
  void save_norms(const std::filesystem::path& path, const Vocabulary& vocab) const;
  // Rows are matched to `vocab` by token; all-zero or missing rows are unknown.
  static EmbeddingTable load_vectors(const std::filesystem::path& path, const Vocabulary& vocab);

 private:
  void refresh_norms();

  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> matrix_;
  std::vector<double> norms_;
  std::vector<bool> known_;
  double max_norm_ = 0.0;
};

// Euclidean norm of row `id`; the unknown id and untrained rows return the
// maximum norm over known rows. Throws IndexError when id is out of range.
double word_norm(const EmbeddingTable& table, TokenId id);

// Trains input vectors over sentences of ids in [0, vocab_size). Words with
// fewer than config.min_count occurrences, and the unknown id, are dropped
// from the stream and left unknown. Negatives follow unigram^0.75 and the
// learning rate decays linearly to zero over all processed tokens.
EmbeddingTable train_sgns(std::span<const Sentence> corpus, std::size_t vocab_size,
                          const SgnsConfig& config);

// One logistic update of a (center, context) pair with label 1 (observed) or
// 0 (negative). The context vector is updated in place; the center gradient
// is accumulated into center_update for the caller to apply.
void sgns_pair_update(std::span<const double> center, std::span<double> context, double label,
                      double lr, std::span<double> center_update);

}  // namespace normcl
