// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/curriculum.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "normcl/errors.h"

namespace normcl {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::norm: return "norm";
    case Criterion::length: return "length";
    case Criterion::rarity: return "rarity";
  }
  return "?";
}

Criterion parse_criterion(std::string_view s) {
  if (s == "norm") return Criterion::norm;
  if (s == "length") return Criterion::length;
  if (s == "rarity") return Criterion::rarity;
  throw ConfigError("unknown difficulty criterion '" + std::string(s) + "'");
}

std::string_view to_string(MatrixNorm n) {
  return n == MatrixNorm::row_sum ? "row_sum" : "frobenius";
}

MatrixNorm parse_matrix_norm(std::string_view s) {
  if (s == "row_sum") return MatrixNorm::row_sum;
  if (s == "frobenius") return MatrixNorm::frobenius;
  throw ConfigError("unknown matrix norm '" + std::string(s) + "'");
}

std::string_view to_string(CompetenceKind k) {
  switch (k) {
    case CompetenceKind::none: return "none";
    case CompetenceKind::time_sqrt: return "time_sqrt";
    case CompetenceKind::norm_based: return "norm_based";
  }
  return "?";
}

CompetenceKind parse_competence_kind(std::string_view s) {
  if (s == "none") return CompetenceKind::none;
  if (s == "time_sqrt") return CompetenceKind::time_sqrt;
  if (s == "norm_based") return CompetenceKind::norm_based;
  throw ConfigError("unknown competence kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- difficulty

double sentence_difficulty_norm(std::span<const TokenId> sentence, const EmbeddingTable& table) {
  if (sentence.empty()) throw ContractViolation("sentence_difficulty_norm: empty sentence");
  double d = 0.0;
  for (TokenId id : sentence) d += word_norm(table, id);
  return d;
}

double sentence_difficulty_length(std::span<const TokenId> sentence) {
  return static_cast<double>(sentence.size());
}

double sentence_difficulty_rarity(std::span<const TokenId> sentence, const Vocabulary& vocab) {
  const double total = static_cast<double>(vocab.total_count());
  if (total <= 0.0) throw ContractViolation("sentence_difficulty_rarity: vocabulary has no counts");
  std::uint64_t min_count = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t i = kNumSpecials; i < vocab.size(); ++i)
    min_count = std::min(min_count, vocab.entries()[i].count);
  if (min_count == 0 || min_count == std::numeric_limits<std::uint64_t>::max()) min_count = 1;

  double d = 0.0;
  for (TokenId id : sentence) {
    std::uint64_t c = id >= static_cast<TokenId>(kNumSpecials) ? vocab.count(id) : 0;
    if (c == 0) c = min_count;
    d -= std::log(static_cast<double>(c) / total);
  }
  return d;
}

std::vector<double> cdf_normalize(std::span<const double> raws) {
  if (raws.empty()) throw ContractViolation("cdf_normalize: empty input");
  std::vector<double> sorted(raws.begin(), raws.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(raws.size());
  std::vector<double> out(raws.size());
  for (std::size_t i = 0; i < raws.size(); ++i) {
    const auto le = std::upper_bound(sorted.begin(), sorted.end(), raws[i]) - sorted.begin();
    out[i] = static_cast<double>(le) / n;
  }
  return out;
}

DifficultyProfile make_profile(Criterion criterion, std::vector<double> raw) {
  DifficultyProfile p;
  p.criterion = criterion;
  p.cdf = cdf_normalize(raw);
  p.raw = std::move(raw);
  return p;
}

DifficultyProfile DifficultyProfile::inverted() const {
  std::vector<double> negated(raw.size());
  std::transform(raw.begin(), raw.end(), negated.begin(), [](double v) { return -v; });
  DifficultyProfile p = *this;
  p.cdf = cdf_normalize(negated);
  return p;
}

DifficultyProfile score_corpus(const ParallelCorpus& corpus, Criterion criterion,
                               const EmbeddingTable* table, const Vocabulary* source_vocab) {
  if (criterion == Criterion::norm && table == nullptr) {
    throw ConfigError("criterion 'norm' requires word vectors");
  }
  if (criterion == Criterion::rarity && source_vocab == nullptr) {
    throw ConfigError("criterion 'rarity' requires the source vocabulary");
  }
  std::vector<double> raw(corpus.size());
  for (const auto& p : corpus.pairs) {
    switch (criterion) {
      case Criterion::norm: raw[p.id] = sentence_difficulty_norm(p.source, *table); break;
      case Criterion::length: raw[p.id] = sentence_difficulty_length(p.source); break;
      case Criterion::rarity: raw[p.id] = sentence_difficulty_rarity(p.source, *source_vocab); break;
    }
  }
  return make_profile(criterion, std::move(raw));
}

void DifficultyProfile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < raw.size(); ++i)
    out << i << '\t' << raw[i] << '\t' << cdf[i] << '\t' << to_string(criterion) << '\n';
}

DifficultyProfile DifficultyProfile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open difficulty file " + path.string());
  DifficultyProfile p;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t id = 0;
    double raw = 0.0, cdf = 0.0;
    std::string crit;
    if (!(ls >> id >> raw >> cdf >> crit)) throw LoadError("malformed difficulty line: " + line);
    if (id != p.raw.size()) throw LoadError("difficulty ids must be contiguous: " + line);
    p.criterion = parse_criterion(crit);
    p.raw.push_back(raw);
    p.cdf.push_back(cdf);
  }
  if (p.raw.empty()) throw LoadError("empty difficulty file " + path.string());
  return p;
}

// ---------------------------------------------------------------- competence

double competence_time(double t, double c0, double lambda_t) {
  if (!(lambda_t > 0.0)) throw ConfigError("competence_time: lambda_t must be > 0");
  if (t < 0.0) throw ContractViolation("competence_time: negative step");
  const double progress = t / lambda_t;
  if (progress <= 0.0) return c0;
  if (progress >= 1.0) return 1.0;
  return std::min(1.0, std::sqrt(progress * (1.0 - c0 * c0) + c0 * c0));
}

double competence_norm(double m_t, double m0, double c0, double lambda_m) {
  if (!(m0 > 0.0)) throw ConfigError("competence_norm: m0 must be > 0");
  if (!(lambda_m > 0.0)) throw ConfigError("competence_norm: lambda_m must be > 0");
  const double progress = std::max(0.0, m_t - m0) / (lambda_m * m0);
  if (progress <= 0.0) return c0;
  if (progress >= 1.0) return 1.0;
  return std::min(1.0, std::sqrt(progress * (1.0 - c0 * c0) + c0 * c0));
}

double sentence_weight(double d_hat, double c_hat, double lambda_w) {
  if (!(c_hat > 0.0)) throw ContractViolation("sentence_weight: competence must be > 0");
  return std::pow(d_hat / c_hat, lambda_w);
}

double embedding_matrix_norm(const Tensor& matrix, MatrixNorm kind) {
  double total = 0.0;
  bool nonzero = false;
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    double s = 0.0;
    for (double v : matrix.row(i)) s += v * v;
    nonzero = nonzero || s > 0.0;
    total += kind == MatrixNorm::row_sum ? std::sqrt(s) : s;
  }
  if (!nonzero) throw DegenerateStateError("embedding_matrix_norm: all-zero matrix");
  return kind == MatrixNorm::row_sum ? total : std::sqrt(total);
}

void CompetenceSchedule::validate() const {
  if (!(c0 > 0.0 && c0 <= 1.0)) throw ConfigError("competence: c0 must lie in (0, 1]");
  if (kind == CompetenceKind::time_sqrt && !(lambda_t > 0.0)) {
    throw ConfigError("competence: lambda_t must be > 0");
  }
  if (kind == CompetenceKind::norm_based && !(lambda_m > 0.0)) {
    throw ConfigError("competence: lambda_m must be > 0");
  }
}

double CompetenceSchedule::operator()(double completed_steps, double m_t) const {
  switch (kind) {
    case CompetenceKind::none: return 1.0;
    case CompetenceKind::time_sqrt: return competence_time(completed_steps, c0, lambda_t);
    case CompetenceKind::norm_based: return competence_norm(m_t, m0, c0, lambda_m);
  }
  return 1.0;
}

// ---------------------------------------------------------------- sampler

CurriculumSampler::CurriculumSampler(const DifficultyProfile& profile, std::size_t min_pool,
                                     std::size_t token_budget, std::uint64_t seed)
    : min_pool_(min_pool), token_budget_(token_budget), rng_(seed) {
  if (profile.cdf.empty()) throw ContractViolation("sampler: empty difficulty profile");
  if (min_pool == 0) throw ConfigError("sampler: min_pool must be >= 1");
  if (token_budget == 0) throw ConfigError("sampler: token_budget must be >= 1");
  all_ids_.resize(profile.cdf.size());
  std::iota(all_ids_.begin(), all_ids_.end(), 0);
  order_ = all_ids_;
  std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
    return profile.cdf[a] < profile.cdf[b];
  });
  sorted_cdf_.reserve(order_.size());
  for (auto id : order_) sorted_cdf_.push_back(profile.cdf[id]);
}

std::size_t CurriculumSampler::eligible_count(double c_hat) const {
  const std::size_t n = order_.size();
  if (c_hat >= 1.0) return n;
  const auto below = static_cast<std::size_t>(
      std::lower_bound(sorted_cdf_.begin(), sorted_cdf_.end(), c_hat) - sorted_cdf_.begin());
  return std::max(below, std::min(min_pool_, n));
}

std::vector<std::size_t> CurriculumSampler::eligible_ids(double c_hat) const {
  const std::size_t k = eligible_count(c_hat);
  return {order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(k)};
}

std::vector<std::size_t> CurriculumSampler::sample(double c_hat, const ParallelCorpus& corpus) {
  if (corpus.size() != order_.size()) {
    throw ContractViolation("sampler: profile does not cover the corpus");
  }
  // Full competence samples over ids in corpus order, which is exactly the
  // plain uniform batcher.
  if (c_hat >= 1.0) return draw_batch(all_ids_, corpus, token_budget_, rng_);
  const std::size_t k = eligible_count(c_hat);
  return draw_batch(std::span<const std::size_t>(order_.data(), k), corpus, token_budget_, rng_);
}

}  // namespace normcl
