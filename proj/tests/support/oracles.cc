// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace normcl::testing {

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> brute_cdf(std::span<const double> raws) {
  std::vector<double> out;
  for (double a : raws) {
    std::size_t le = 0;
    for (double b : raws) le += b <= a ? 1 : 0;
    out.push_back(static_cast<double>(le) / static_cast<double>(raws.size()));
  }
  return out;
}

BruteBleu brute_bleu(const std::vector<std::vector<std::string>>& hyps,
                     const std::vector<std::vector<std::string>>& refs) {
  double matched[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  double c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& ref = refs[s];
    c += static_cast<double>(h.size());
    r += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      // Distinct hypothesis n-grams with their counts, found by linear scan.
      std::vector<std::vector<std::string>> seen;
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        std::vector<std::string> g(h.begin() + static_cast<long>(i), h.begin() + static_cast<long>(i + n));
        if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
        seen.push_back(g);
        double in_h = 0, in_r = 0;
        for (std::size_t k = 0; k + n <= h.size(); ++k)
          in_h += std::equal(g.begin(), g.end(), h.begin() + static_cast<long>(k)) ? 1 : 0;
        for (std::size_t k = 0; k + n <= ref.size(); ++k)
          in_r += std::equal(g.begin(), g.end(), ref.begin() + static_cast<long>(k)) ? 1 : 0;
        matched[n - 1] += std::min(in_h, in_r);
        total[n - 1] += in_h;
      }
    }
  }
  BruteBleu out;
  double log_sum = 0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    out.precisions[n] = total[n] > 0 ? matched[n] / total[n] : 0.0;
    if (out.precisions[n] == 0) zero = true;
    else log_sum += std::log(out.precisions[n]);
  }
  out.brevity_penalty = c == 0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
  out.bleu = zero || c == 0 ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

std::vector<Sentence> zipf_topic_corpus(std::size_t vocab, std::size_t sentences,
                                        std::size_t topics, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> weight(vocab);
  for (std::size_t r = 0; r < vocab; ++r) weight[r] = 1.0 / static_cast<double>(r + 1);
  std::discrete_distribution<std::size_t> global(weight.begin(), weight.end());
  std::vector<std::vector<std::size_t>> members(topics);
  for (std::size_t r = 0; r < vocab; ++r) members[r % topics].push_back(r);
  std::uniform_int_distribution<std::size_t> topic(0, topics - 1), len(5, 20);
  std::bernoulli_distribution from_topic(0.5);
  std::vector<Sentence> out(sentences);
  for (auto& s : out) {
    const std::size_t t = topic(rng);
    const std::size_t n = len(rng);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t r = from_topic(rng) ? members[t][std::uniform_int_distribution<std::size_t>(0, members[t].size() - 1)(rng)] : global(rng);
      s.push_back(static_cast<TokenId>(kNumSpecials + r));
    }
  }
  return out;
}

ParallelCorpus toy_corpus(const std::vector<std::pair<Sentence, Sentence>>& pairs) {
  ParallelCorpus c;
  for (const auto& [s, t] : pairs) c.pairs.push_back({c.pairs.size(), s, t});
  return c;
}

ParallelCorpus copy_task(std::size_t pairs, std::size_t vocab, std::size_t min_len,
                         std::size_t max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(static_cast<TokenId>(kNumSpecials),
                                             static_cast<TokenId>(kNumSpecials + vocab - 1));
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::vector<std::pair<Sentence, Sentence>> out;
  for (std::size_t i = 0; i < pairs; ++i) {
    Sentence s(len(rng));
    for (auto& t : s) t = tok(rng);
    out.emplace_back(s, s);
  }
  return toy_corpus(out);
}

ModelConfig tiny_model(std::size_t vocab, std::uint64_t seed) {
  ModelConfig m;
  m.source_vocab = vocab;
  m.target_vocab = vocab;
  m.d_model = 16;
  m.n_heads = 2;
  m.n_layers = 1;
  m.d_ff = 32;
  m.dropout = 0.0;
  m.max_positions = 64;
  m.seed = seed;
  return m;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("normcl-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

RunConfig desk_config(const std::filesystem::path& root, std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.paths.raw_dir = root / "raw";
  cfg.paths.data_dir = root / "data";
  cfg.paths.output_dir = root / "out";
  cfg.corpus.bpe_merges = 2000;
  cfg.corpus.min_count = 1;
  cfg.sgns.dim = 32;
  cfg.sgns.min_count = 2;
  cfg.model.dropout = 0.0;
  cfg.model.scale_embeddings = false;
  cfg.optimizer.warmup = 200;
  cfg.optimizer.peak_lr = 2e-3;
  cfg.curriculum.lambda_m = 0.05;
  cfg.curriculum.token_budget = 200;
  cfg.total_steps = 1000;
  cfg.log_interval = 50;
  cfg.eval_interval = 50;
  return cfg;
}

void prepare_desk(const RunConfig& cfg, const DeskTaskConfig& task) {
  generate_desk_task(task, cfg.paths.raw_dir);
  cmd_prepare(cfg);
  cmd_embed(cfg);
  cmd_score(cfg);
}

}  // namespace normcl::testing
