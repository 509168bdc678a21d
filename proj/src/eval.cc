// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/eval.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "normcl/errors.h"

namespace normcl {

void BeamConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam: beam_size must be >= 1");
  if (max_decode_len < 1) throw ConfigError("beam: max_decode_len must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("beam: alpha must be >= 0");
}

double length_penalty(std::size_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

ModelScorer::ModelScorer(const Transformer& model, std::span<const TokenId> source)
    : model_(model), memory_(model.encode(source)) {}

std::size_t ModelScorer::vocab_size() const { return model_.config().target_vocab; }

Tensor ModelScorer::next_log_probs(std::span<const Sentence> prefixes) {
  return model_.next_token_log_probs(memory_, prefixes);
}

Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_decode_len) {
  if (max_decode_len < 1) throw ConfigError("greedy: max_decode_len must be >= 1");
  Hypothesis h;
  for (std::size_t step = 0; step < max_decode_len; ++step) {
    const Tensor lp = scorer.next_log_probs(std::span<const Sentence>(&h.tokens, 1));
    auto row = lp.row(0);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    h.log_prob += row[static_cast<std::size_t>(best)];
    if (best == kEosId) {
      h.score = h.log_prob;
      return h;
    }
    h.tokens.push_back(best);
  }
  h.truncated = true;
  h.score = h.log_prob;
  return h;
}

namespace {

struct Partial {
  Sentence tokens;
  double log_prob = 0.0;
};

struct Beam {
  std::size_t width = 1;
  std::vector<Partial> active{Partial{}};
  std::vector<Hypothesis> finished;
  bool done = false;

  const Hypothesis* best_finished() const {
    const Hypothesis* best = nullptr;
    for (const auto& h : finished)
      if (best == nullptr || h.score > best->score) best = &h;
    return best;
  }
};

void advance(Beam& beam, const Tensor& lp, std::size_t row0, const BeamConfig& cfg) {
  struct Candidate {
    double log_prob;
    std::size_t beam;
    TokenId token;
  };
  std::vector<Candidate> cands;
  cands.reserve(beam.active.size() * lp.cols());
  for (std::size_t i = 0; i < beam.active.size(); ++i) {
    auto row = lp.row(row0 + i);
    for (std::size_t v = 0; v < row.size(); ++v)
      cands.push_back({beam.active[i].log_prob + row[v], i, static_cast<TokenId>(v)});
  }
  const std::size_t k = std::min(beam.width, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return std::tie(b.log_prob, a.beam, a.token) <
                             std::tie(a.log_prob, b.beam, b.token);
                    });
  std::vector<Partial> next;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& cand = cands[c];
    const Partial& parent = beam.active[cand.beam];
    if (cand.token == kEosId) {
      Hypothesis h{parent.tokens, cand.log_prob, 0.0, false};
      h.score = h.log_prob / length_penalty(h.tokens.size() + 1, cfg.alpha);
      beam.finished.push_back(std::move(h));
    } else {
      Partial p{parent.tokens, cand.log_prob};
      p.tokens.push_back(cand.token);
      next.push_back(std::move(p));
    }
  }
  beam.active = std::move(next);
  if (beam.active.empty()) {
    beam.done = true;
    return;
  }
  // No active beam can still overtake the best finished hypothesis.
  if (const Hypothesis* best = beam.best_finished()) {
    const double bound_lp = length_penalty(cfg.max_decode_len, cfg.alpha);
    bool open = false;
    for (const auto& a : beam.active) open = open || a.log_prob / bound_lp > best->score;
    beam.done = !open;
  }
}

Hypothesis conclude(const Beam& beam, const BeamConfig& cfg) {
  if (const Hypothesis* best = beam.best_finished()) return *best;
  Hypothesis out;
  bool have = false;
  for (const auto& a : beam.active) {
    const double score = a.log_prob / length_penalty(a.tokens.size(), cfg.alpha);
    if (!have || score > out.score) {
      out = {a.tokens, a.log_prob, score, true};
      have = true;
    }
  }
  return out;
}

}  // namespace

Hypothesis beam_decode(StepScorer& scorer, const BeamConfig& cfg) {
  cfg.validate();
  std::vector<Beam> beams(cfg.beam_size);
  for (std::size_t w = 0; w < beams.size(); ++w) beams[w].width = w + 1;

  for (std::size_t step = 0; step < cfg.max_decode_len; ++step) {
    std::vector<Sentence> prefixes;
    for (const auto& b : beams)
      if (!b.done)
        for (const auto& a : b.active) prefixes.push_back(a.tokens);
    if (prefixes.empty()) break;
    const Tensor lp = scorer.next_log_probs(prefixes);
    std::size_t row = 0;
    for (auto& b : beams) {
      if (b.done) continue;
      const std::size_t n = b.active.size();
      advance(b, lp, row, cfg);
      row += n;
    }
  }

  Hypothesis best = conclude(beams.front(), cfg);
  for (std::size_t w = 1; w < beams.size(); ++w) {
    Hypothesis h = conclude(beams[w], cfg);
    if (h.score > best.score) best = std::move(h);
  }
  return best;
}

Hypothesis beam_decode(const Transformer& model, std::span<const TokenId> source,
                       const BeamConfig& cfg) {
  if (source.empty()) throw ContractViolation("beam_decode: empty source sentence");
  ModelScorer scorer(model, source);
  return beam_decode(scorer, cfg);
}

std::vector<Hypothesis> translate(const Transformer& model, std::span<const Sentence> sources,
                                  const BeamConfig& cfg) {
  std::vector<Hypothesis> out;
  out.reserve(sources.size());
  for (const auto& s : sources) out.push_back(beam_decode(model, s, cfg));
  return out;
}

// ---------------------------------------------------------------- BLEU

BleuResult corpus_bleu(std::span<const WordSequence> hypotheses,
                       std::span<const WordSequence> references, bool smooth) {
  if (hypotheses.empty()) throw ContractViolation("bleu: empty hypothesis list");
  if (hypotheses.size() != references.size()) {
    throw ContractViolation("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                            std::to_string(references.size()) + " references");
  }
  std::array<double, 4> matched{}, total{};
  BleuResult r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    r.hypothesis_length += hyp.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i)
        ++ref_counts[{ref.begin() + static_cast<std::ptrdiff_t>(i),
                      ref.begin() + static_cast<std::ptrdiff_t>(i + n)}];
      for (std::size_t i = 0; i + n <= hyp.size(); ++i)
        ++hyp_counts[{hyp.begin() + static_cast<std::ptrdiff_t>(i),
                      hyp.begin() + static_cast<std::ptrdiff_t>(i + n)}];
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += static_cast<double>(std::min(count, it->second));
        total[n - 1] += static_cast<double>(count);
      }
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = matched[n], t = total[n];
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    r.precisions[n] = t > 0.0 ? m / t : 0.0;
    if (r.precisions[n] <= 0.0) zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  const double c = static_cast<double>(r.hypothesis_length);
  const double ref_len = static_cast<double>(r.reference_length);
  if (c == 0.0) {
    r.brevity_penalty = 0.0;
    return r;
  }
  r.brevity_penalty = c > ref_len ? 1.0 : std::exp(1.0 - ref_len / c);
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

}  // namespace normcl
