// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// Greedy and beam decoding with a length penalty, and corpus-level BLEU.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "normcl/corpus.h"
#include "normcl/nmt.h"
#include "normcl/tensor.h"

namespace normcl {

struct BeamConfig {
  std::size_t beam_size = 6;
  double alpha = 0.6;
  std::size_t max_decode_len = 200;  // generated tokens, end-of-sentence included

  void validate() const;
};

// ((5 + len) / 6)^alpha
double length_penalty(std::size_t len, double alpha);

// Next-token distribution for a batch of target prefixes (BOS excluded).
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual Tensor next_log_probs(std::span<const Sentence> prefixes) = 0;
};

// Scores prefixes against one encoded source sentence.
class ModelScorer final : public StepScorer {
 public:
  ModelScorer(const Transformer& model, std::span<const TokenId> source);
  std::size_t vocab_size() const override;
  Tensor next_log_probs(std::span<const Sentence> prefixes) override;

 private:
  const Transformer& model_;
  Var memory_;
};

struct Hypothesis {
  Sentence tokens;  // end-of-sentence stripped
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / lp(length incl. end-of-sentence when finished)
  bool truncated = false;
};

// Argmax rollout, lowest id on ties. score is the raw log-probability.
Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_decode_len);

// Runs beams of every width 1..beam_size side by side and returns the
// best-scoring result (ties go to the narrower beam). Width 1 is exactly the
// greedy rollout. When no beam emits end-of-sentence the best partial
// hypothesis comes back with truncated set.
Hypothesis beam_decode(StepScorer& scorer, const BeamConfig& cfg);
Hypothesis beam_decode(const Transformer& model, std::span<const TokenId> source,
                       const BeamConfig& cfg);

std::vector<Hypothesis> translate(const Transformer& model, std::span<const Sentence> sources,
                                  const BeamConfig& cfg);

struct BleuResult {
  double bleu = 0.0;  // 0..100
  double brevity_penalty = 0.0;
  std::array<double, 4> precisions{};
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
};

using WordSequence = std::vector<std::string>;

// Corpus 4-gram BLEU with clipped counts. Unsmoothed, a zero precision gives 0;
// smooth adds one to numerator and denominator for n >= 2.
BleuResult corpus_bleu(std::span<const WordSequence> hypotheses,
                       std::span<const WordSequence> references, bool smooth = false);

}  // namespace normcl
