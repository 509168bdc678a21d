// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/embedding.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "normcl/errors.h"

namespace normcl {

void SgnsConfig::validate() const {
  if (dim < 1 || window < 1 || negatives < 1 || epochs < 1 || min_count < 1 || threads < 1) {
    throw ConfigError("sgns: dim, window, negatives, epochs, min_count and threads must be >= 1");
  }
  if (!(initial_lr > 0.0)) throw ConfigError("sgns: initial_lr must be > 0");
  if (!(subsample_threshold > 0.0 && subsample_threshold <= 1.0)) {
    throw ConfigError("sgns: subsample_threshold must lie in (0, 1]");
  }
}

// ---------------------------------------------------------------- table

EmbeddingTable::EmbeddingTable(std::size_t rows, std::size_t dim)
    : rows_(rows), dim_(dim), matrix_(rows * dim, 0.0), known_(rows, true) {
  if (dim == 0) throw ConfigError("embedding dim must be >= 1");
  refresh_norms();
}

EmbeddingTable::EmbeddingTable(std::vector<double> matrix, std::size_t rows, std::size_t dim,
                               std::vector<bool> known)
    : rows_(rows), dim_(dim), matrix_(std::move(matrix)), known_(std::move(known)) {
  if (dim == 0) throw ConfigError("embedding dim must be >= 1");
  if (matrix_.size() != rows * dim || known_.size() != rows) {
    throw ShapeError("embedding table buffers do not match " + std::to_string(rows) + "x" +
                     std::to_string(dim));
  }
  refresh_norms();
}

void EmbeddingTable::refresh_norms() {
  norms_.assign(rows_, 0.0);
  max_norm_ = 0.0;
  for (std::size_t i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (double v : row(i)) s += v * v;
    norms_[i] = std::sqrt(s);
    if (known_[i]) max_norm_ = std::max(max_norm_, norms_[i]);
  }
}

void EmbeddingTable::scale(double k) {
  for (auto& v : matrix_) v *= k;
  refresh_norms();
}

double word_norm(const EmbeddingTable& table, TokenId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
    throw IndexError("word_norm: id " + std::to_string(id) + " outside table of " +
                     std::to_string(table.rows()) + " rows");
  }
  const auto i = static_cast<std::size_t>(id);
  if (id == kUnkId || !table.known(i)) return table.max_known_norm();
  return table.norms()[i];
}

void EmbeddingTable::save_vectors(const std::filesystem::path& path,
                                  const Vocabulary& vocab) const {
  if (vocab.size() != rows_) throw ShapeError("save_vectors: vocabulary/table size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << rows_ << ' ' << dim_ << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < rows_; ++i) {
    out << vocab.token(static_cast<TokenId>(i));
    for (double v : row(i)) out << ' ' << (known_[i] ? v : 0.0);
    out << '\n';
  }
}

void EmbeddingTable::save_norms(const std::filesystem::path& path, const Vocabulary& vocab) const {
  if (vocab.size() != rows_) throw ShapeError("save_norms: vocabulary/table size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < rows_; ++i) {
    out << vocab.token(static_cast<TokenId>(i)) << '\t'
        << word_norm(*this, static_cast<TokenId>(i)) << '\n';
  }
}

EmbeddingTable EmbeddingTable::load_vectors(const std::filesystem::path& path,
                                            const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open vectors " + path.string());
  std::size_t n = 0, dim = 0;
  std::string header;
  if (!std::getline(in, header)) throw LoadError("empty vectors file " + path.string());
  std::istringstream hs(header);
  if (!(hs >> n >> dim) || dim == 0) throw LoadError("malformed vectors header: " + header);

  std::vector<double> matrix(vocab.size() * dim, 0.0);
  std::vector<bool> known(vocab.size(), false);
  std::string line;
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::getline(in, line)) throw LoadError("vectors file truncated at row " + std::to_string(r));
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> vals(dim);
    for (auto& v : vals)
      if (!(ls >> v)) throw LoadError("vectors row has too few values: " + token);
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.id_of(token));
    std::copy(vals.begin(), vals.end(), matrix.begin() + static_cast<std::ptrdiff_t>(id * dim));
    known[id] = std::any_of(vals.begin(), vals.end(), [](double v) { return v != 0.0; });
  }
  return EmbeddingTable(std::move(matrix), vocab.size(), dim, std::move(known));
}

// ---------------------------------------------------------------- training

void sgns_pair_update(std::span<const double> center, std::span<double> context, double label,
                      double lr, std::span<double> center_update) {
  const std::size_t d = center.size();
  double f = 0.0;
  for (std::size_t i = 0; i < d; ++i) f += center[i] * context[i];
  const double g = (label - 1.0 / (1.0 + std::exp(-f))) * lr;
  for (std::size_t i = 0; i < d; ++i) center_update[i] += g * context[i];
  for (std::size_t i = 0; i < d; ++i) context[i] += g * center[i];
}

namespace {

// Parameter rows are shared between workers without locks; relaxed atomic
// access keeps the races well-defined.
void load_row(double* src, std::span<double> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] = std::atomic_ref<double>(src[i]).load(std::memory_order_relaxed);
}

void store_row(std::span<const double> src, double* dst) {
  for (std::size_t i = 0; i < src.size(); ++i)
    std::atomic_ref<double>(dst[i]).store(src[i], std::memory_order_relaxed);
}

struct SgnsModel {
  std::size_t dim;
  std::vector<double> input;
  std::vector<double> output;
  std::vector<std::uint64_t> counts;
  std::vector<bool> known;
  std::vector<TokenId> neg_ids;
  std::vector<double> neg_cdf;
  std::uint64_t train_words = 0;
};

class Worker {
 public:
  Worker(SgnsModel& model, const SgnsConfig& cfg, std::uint64_t seed,
         std::atomic<std::uint64_t>& processed)
      : model_(model), cfg_(cfg), rng_(seed), processed_(processed),
        center_(model.dim), context_(model.dim), update_(model.dim) {}

  void run(std::span<const Sentence> corpus, std::size_t begin, std::size_t end) {
    const double total = static_cast<double>(cfg_.epochs) * static_cast<double>(model_.train_words) + 1.0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> shrink(0, cfg_.window - 1);
    const double sample_words = cfg_.subsample_threshold * static_cast<double>(model_.train_words);
    std::vector<TokenId> kept;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      for (std::size_t s = begin; s < end; ++s) {
        const double progress =
            static_cast<double>(processed_.load(std::memory_order_relaxed)) / total;
        const double lr = cfg_.initial_lr * std::max(0.0, 1.0 - progress);
        kept.clear();
        std::uint64_t raw = 0;
        for (TokenId id : corpus[s]) {
          const auto u = static_cast<std::size_t>(id);
          if (!model_.known[u]) continue;
          ++raw;
          const double cn = static_cast<double>(model_.counts[u]);
          const double keep = (std::sqrt(cn / sample_words) + 1.0) * sample_words / cn;
          if (keep < unit(rng_)) continue;
          kept.push_back(id);
        }
        processed_.fetch_add(raw, std::memory_order_relaxed);
        train_sentence(kept, lr, shrink, unit);
      }
    }
  }

 private:
  template <class Shrink, class Unit>
  void train_sentence(const std::vector<TokenId>& words, double lr, Shrink& shrink, Unit& unit) {
    const auto n = static_cast<std::ptrdiff_t>(words.size());
    const std::size_t d = model_.dim;
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const int w = cfg_.window - shrink(rng_);
      const auto center_id = static_cast<std::size_t>(words[static_cast<std::size_t>(i)]);
      double* center_row = model_.input.data() + center_id * d;
      for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - w);
           j <= std::min<std::ptrdiff_t>(n - 1, i + w); ++j) {
        if (j == i) continue;
        const TokenId positive = words[static_cast<std::size_t>(j)];
        load_row(center_row, center_);
        std::fill(update_.begin(), update_.end(), 0.0);
        for (int k = 0; k <= cfg_.negatives; ++k) {
          TokenId target = positive;
          double label = 1.0;
          if (k > 0) {
            target = sample_negative(unit);
            if (target == positive) continue;
            label = 0.0;
          }
          double* ctx_row = model_.output.data() + static_cast<std::size_t>(target) * d;
          load_row(ctx_row, context_);
          sgns_pair_update(center_, context_, label, lr, update_);
          store_row(context_, ctx_row);
        }
        load_row(center_row, center_);
        for (std::size_t q = 0; q < d; ++q) center_[q] += update_[q];
        store_row(center_, center_row);
      }
    }
  }

  template <class Unit>
  TokenId sample_negative(Unit& unit) {
    const double u = unit(rng_) * model_.neg_cdf.back();
    auto it = std::upper_bound(model_.neg_cdf.begin(), model_.neg_cdf.end(), u);
    if (it == model_.neg_cdf.end()) --it;
    return model_.neg_ids[static_cast<std::size_t>(it - model_.neg_cdf.begin())];
  }

  SgnsModel& model_;
  const SgnsConfig& cfg_;
  std::mt19937_64 rng_;
  std::atomic<std::uint64_t>& processed_;
  std::vector<double> center_;
  std::vector<double> context_;
  std::vector<double> update_;
};

}  // namespace

EmbeddingTable train_sgns(std::span<const Sentence> corpus, std::size_t vocab_size,
                          const SgnsConfig& config) {
  config.validate();
  if (corpus.empty()) throw IngestionError("train_sgns: empty corpus");

  SgnsModel model;
  model.dim = static_cast<std::size_t>(config.dim);
  model.counts.assign(vocab_size, 0);
  for (const auto& s : corpus) {
    for (TokenId id : s) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw IndexError("train_sgns: token id " + std::to_string(id) + " outside vocabulary");
      }
      ++model.counts[static_cast<std::size_t>(id)];
    }
  }
  model.known.assign(vocab_size, false);
  for (std::size_t i = kNumSpecials; i < vocab_size; ++i) {
    if (model.counts[i] >= static_cast<std::uint64_t>(config.min_count)) {
      model.known[i] = true;
      model.train_words += model.counts[i];
      model.neg_ids.push_back(static_cast<TokenId>(i));
      const double prev = model.neg_cdf.empty() ? 0.0 : model.neg_cdf.back();
      model.neg_cdf.push_back(prev + std::pow(static_cast<double>(model.counts[i]), 0.75));
    }
  }
  if (model.neg_ids.size() < static_cast<std::size_t>(config.negatives) + 1) {
    throw ConfigError("train_sgns: " + std::to_string(model.neg_ids.size()) +
                      " trainable words is fewer than negatives + 1");
  }

  const std::size_t d = model.dim;
  model.input.assign(vocab_size * d, 0.0);
  model.output.assign(vocab_size * d, 0.0);
  {
    std::mt19937_64 init(config.seed);
    std::uniform_real_distribution<double> u(-0.5 / static_cast<double>(d),
                                             0.5 / static_cast<double>(d));
    for (std::size_t i = 0; i < vocab_size; ++i)
      if (model.known[i])
        for (std::size_t q = 0; q < d; ++q) model.input[i * d + q] = u(init);
  }

  std::atomic<std::uint64_t> processed{0};
  const int workers = config.deterministic ? 1 : config.threads;
  if (workers == 1) {
    Worker(model, config, config.seed + 1, processed).run(corpus, 0, corpus.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (corpus.size() + static_cast<std::size_t>(workers) - 1) /
                              static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(corpus.size(), chunk * static_cast<std::size_t>(w));
      const std::size_t end = std::min(corpus.size(), begin + chunk);
      pool.emplace_back([&, w, begin, end] {
        Worker(model, config, config.seed + 1 + static_cast<std::uint64_t>(w), processed)
            .run(corpus, begin, end);
      });
    }
    for (auto& t : pool) t.join();
  }

  return EmbeddingTable(std::move(model.input), vocab_size, d, std::move(model.known));
}

}  // namespace normcl
