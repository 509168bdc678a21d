// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion.
//
//   normcl_acceptance [criterion ...]
//
// With no arguments every criterion runs. Scratch data goes under
// $NORMCL_ACCEPTANCE_DIR or the system temp directory.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "normcl/corpus.h"
#include "normcl/curriculum.h"
#include "normcl/embedding.h"
#include "normcl/eval.h"
#include "normcl/nmt.h"
#include "normcl/pipeline.h"
#include "normcl/tensor.h"
#include "support/kernels.h"
#include "support/oracles.h"

namespace fs = std::filesystem;
using namespace normcl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const char* env = std::getenv("NORMCL_ACCEPTANCE_DIR");
  const fs::path root = env ? fs::path(env) : fs::temp_directory_path() / "normcl-acceptance";
  const fs::path p = root / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------- 1

Outcome formula_exactness() {
  int bad = 0;
  for (double c0 : {0.01, 0.1, 0.3, 1.0}) {
    for (double lt : {1.0, 7.0, 1000.0, 12345.0}) {
      bad += competence_time(0, c0, lt) != c0;
      bad += competence_time(lt, c0, lt) != 1.0;
    }
    for (double m0 : {1.0, 206.25, 1e4}) {
      for (double lm : {0.05, 1.0, 2.5}) {
        bad += competence_norm(m0, m0, c0, lm) != c0;
        bad += competence_norm((1 + lm) * m0, m0, c0, lm) != 1.0;
      }
    }
  }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-6, 1.0), lw(0.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double d = u(rng), c = u(rng);
    bad += sentence_weight(d, d, lw(rng)) != 1.0;
    bad += sentence_weight(d, c, 0.0) != 1.0;
  }
  return {bad == 0, std::to_string(bad) + " mismatches"};
}

// ---------------------------------------------------------------- 2

Outcome cdf_suite() {
  int bad = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    std::vector<double> base(n);
    for (std::size_t i = 0; i < n; ++i) base[i] = 0.5 + 1.7 * static_cast<double>(i);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      std::vector<double> raw(n);
      for (std::size_t i = 0; i < n; ++i) raw[i] = base[perm[i]];
      const auto cdf = cdf_normalize(raw);
      std::vector<double> sorted = cdf;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t k = 0; k < n; ++k)
        bad += sorted[k] != static_cast<double>(k + 1) / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        bad += cdf[i] != static_cast<double>(perm[i] + 1) / static_cast<double>(n);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  const auto tie = cdf_normalize(std::vector<double>{1, 1, 2});
  bad += tie != std::vector<double>{2.0 / 3.0, 2.0 / 3.0, 1.0};

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> v(0, 3000);
  std::vector<double> raw(10000);
  for (auto& x : raw) x = v(rng);
  const auto cdf = cdf_normalize(raw);
  bad += cdf != testing::brute_cdf(raw);
  std::vector<std::size_t> perm(raw.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> shuffled(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) shuffled[i] = raw[perm[i]];
  const auto cdf2 = cdf_normalize(shuffled);
  for (std::size_t i = 0; i < raw.size(); ++i) bad += cdf2[i] != cdf[perm[i]];
  return {bad == 0, std::to_string(bad) + " mismatches"};
}

// ---------------------------------------------------------------- 3

Outcome sampler_soundness() {
  constexpr std::size_t kN = 60;
  std::vector<std::pair<Sentence, Sentence>> pairs(kN, {{5}, {5}});
  const auto corpus = testing::toy_corpus(pairs);
  std::vector<double> raw(kN);
  std::mt19937_64 shuffle_rng(3);
  std::iota(raw.begin(), raw.end(), 1.0);
  std::shuffle(raw.begin(), raw.end(), shuffle_rng);
  const auto profile = make_profile(Criterion::norm, raw);

  std::size_t violations = 0, drawn = 0;
  double worst_z = 0.0;
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    // Uniformity on a fixed 10-element pool.
    CurriculumSampler s(profile, 1, 4, seed);
    const double c = 10.5 / kN;
    std::map<std::size_t, std::size_t> freq;
    std::size_t total = 0;
    while (total < 100000) {
      for (auto id : s.sample(c, corpus)) {
        violations += profile.cdf[id] < c ? 0 : 1;
        ++freq[id];
        ++total;
      }
    }
    drawn += total;
    const double p = 0.1, mean = p * static_cast<double>(total);
    const double sd = std::sqrt(static_cast<double>(total) * p * (1 - p));
    if (freq.size() != 10) violations += 1;
    for (const auto& [id, f] : freq) worst_z = std::max(worst_z, std::abs(static_cast<double>(f) - mean) / sd);

    // Soundness over a sweep of competences.
    CurriculumSampler sweep(profile, 1, 7, seed + 1);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.02, 1.0);
    std::size_t n = 0;
    while (n < 100000) {
      const double cc = u(rng);
      for (auto id : sweep.sample(cc, corpus)) {
        violations += (cc >= 1.0 || profile.cdf[id] < cc) ? 0 : 1;
        ++n;
      }
    }
    drawn += n;
  }
  return {violations == 0 && worst_z <= 3.0,
          std::to_string(violations) + " violations in " + std::to_string(drawn) +
              " draws, max |z| " + fmt("%.3f", worst_z)};
}

// ---------------------------------------------------------------- 4

Outcome gradient_fidelity() {
  double kernel_worst = 0.0;
  std::string worst_kernel;
  for (const auto& [kernel, err] : testing::kernel_grad_errors(25, 4)) {
    if (err > kernel_worst) kernel_worst = err, worst_kernel = kernel;
  }
  auto cfg = testing::tiny_model(12, 5);
  const Transformer model(cfg);
  const auto corpus = testing::toy_corpus({{{4, 5, 6, 7}, {8, 9, 10}}, {{11, 4}, {5, 6, 7, 8, 9}}});
  const std::vector<std::size_t> ids{0, 1};
  const std::vector<double> w{0.8, 0.3};
  const double model_err = testing::model_grad_error(model, make_batch(corpus, ids), w, 1e-4);
  return {kernel_worst <= 1e-6 && model_err <= 1e-5,
          "kernels max " + fmt("%.2e", kernel_worst) + " (" + worst_kernel + "), full model " +
              fmt("%.2e", model_err)};
}

// ---------------------------------------------------------------- 5

Outcome norm_frequency() {
  std::vector<double> rhos;
  std::size_t min_tokens = std::numeric_limits<std::size_t>::max();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto corpus = testing::zipf_topic_corpus(400, 17000, 8, seed);
    const std::size_t vocab = kNumSpecials + 400;
    std::vector<double> count(vocab, 0.0);
    std::size_t tokens = 0;
    for (const auto& s : corpus) {
      tokens += s.size();
      for (TokenId t : s) count[static_cast<std::size_t>(t)] += 1;
    }
    min_tokens = std::min(min_tokens, tokens);
    SgnsConfig cfg;
    cfg.dim = 50;
    cfg.seed = seed;
    const auto table = train_sgns(corpus, vocab, cfg);
    std::vector<double> logf, norm;
    for (std::size_t id = kNumSpecials; id < vocab; ++id) {
      if (!table.known(id)) continue;
      logf.push_back(std::log(count[id]));
      norm.push_back(table.norms()[id]);
    }
    rhos.push_back(testing::spearman(logf, norm));
  }
  std::vector<double> sorted = rhos;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[1];
  return {median <= -0.3 && min_tokens >= 200000,
          "median Spearman " + fmt("%.4f", median) + " over >= " + std::to_string(min_tokens) +
              " tokens (seeds: " + fmt("%.3f", rhos[0]) + ", " + fmt("%.3f", rhos[1]) + ", " +
              fmt("%.3f", rhos[2]) + ")"};
}

// ---------------------------------------------------------------- desk task

struct Desk {
  fs::path root;
  RunConfig cfg;
};

Desk& desk() {
  static Desk d = [] {
    Desk out;
    out.root = scratch("desk");
    out.cfg = testing::desk_config(out.root);
    testing::prepare_desk(out.cfg, DeskTaskConfig{});
    return out;
  }();
  return d;
}

Outcome norm_growth() {
  auto cfg = desk().cfg;
  cfg.paths.run_name = "growth";
  cfg.total_steps = 500;
  cfg.log_interval = 50;
  cfg.eval_interval = 500;
  const auto r = cmd_train(cfg);
  std::vector<double> samples{r.m0};
  for (const auto& row : r.trace)
    if (row.step % 50 == 0) samples.push_back(row.embedding_norm);
  int positive = 0;
  for (std::size_t i = 1; i < samples.size() && i <= 10; ++i) positive += samples[i] > samples[i - 1];
  const double m500 = samples.back();
  return {samples.size() == 11 && m500 > r.m0 && positive >= 8,
          "m0 " + fmt("%.4f", r.m0) + ", m_500 " + fmt("%.4f", m500) + ", positive increments " +
              std::to_string(positive) + "/10"};
}

std::string steps_text(const std::optional<double>& s) {
  return s ? fmt("%.0f", *s) : std::string("not reached");
}

Outcome directional_speedup() {
  const auto base = desk().cfg;
  auto vanilla = base, norm = base, anti = base;
  vanilla.curriculum.kind = CompetenceKind::none;
  anti.curriculum.anti = true;
  CompareOptions opt;
  opt.seeds = {1, 2, 3};
  opt.target_fraction = 0.9;
  const auto rep = cmd_compare({{"vanilla", vanilla}, {"norm", norm}, {"anti", anti}}, opt);
  std::ofstream(base.paths.output_dir / "compare.json") << rep.to_json().dump(2) << '\n';

  const auto sv = rep.median_steps("vanilla"), sn = rep.median_steps("norm"), sa = rep.median_steps("anti");
  const double inf = std::numeric_limits<double>::infinity();
  const double n = sn.value_or(inf), v = sv.value_or(inf), a = sa.value_or(inf);
  const double bn = rep.median_bleu("norm"), bv = rep.median_bleu("vanilla");
  const bool pass = sn.has_value() && n <= v && n <= a && bn >= bv - 0.5;
  return {pass, "median steps-to-target vanilla " + steps_text(sv) + ", norm " + steps_text(sn) +
                    ", anti " + steps_text(sa) + "; BLEU norm " + fmt("%.2f", bn) + " vs vanilla " +
                    fmt("%.2f", bv)};
}

// ---------------------------------------------------------------- 8

Outcome vanilla_reduction() {
  auto cfg = desk().cfg;
  cfg.paths.run_name = "reduction";
  cfg.curriculum.kind = CompetenceKind::none;
  cfg.curriculum.lambda_w = 0.0;
  cfg.total_steps = 150;
  cfg.eval_interval = 150;
  const auto r = cmd_train(cfg);

  // The same loop with the curriculum module left out.
  const auto ws = load_workspace(cfg);
  ModelConfig mc = cfg.model;
  mc.source_vocab = ws.source_vocab.size();
  mc.target_vocab = ws.target_vocab.size();
  mc.seed = model_seed(cfg);
  Trainer trainer(mc, cfg.optimizer, cfg.curriculum.matrix_norm, cfg.curriculum.norm_interval);
  std::mt19937_64 rng(sampler_seed(cfg));
  std::vector<std::size_t> all(ws.train.size());
  std::iota(all.begin(), all.end(), 0);
  double worst = 0.0;
  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    const auto ids = draw_batch(all, ws.train, cfg.curriculum.token_budget, rng);
    const std::vector<double> w(ids.size(), 1.0);
    const double loss = trainer.train_step(make_batch(ws.train, ids), w).loss;
    worst = std::max(worst, std::abs(loss - r.trace[t].loss));
  }
  return {r.trace.size() == cfg.total_steps && worst <= 1e-12,
          "max |loss difference| " + fmt("%.3e", worst) + " over " + std::to_string(cfg.total_steps) + " steps"};
}

// ---------------------------------------------------------------- 9

Outcome bleu_oracle() {
  auto words = [](std::initializer_list<const char*> lines) {
    std::vector<WordSequence> out;
    for (const char* l : lines) out.push_back(split_whitespace(l));
    return out;
  };
  const auto ident = words({"the cat sat on the mat", "there is a cat on the mat"});
  const double b_ident = corpus_bleu(ident, ident).bleu;
  const double b_short = corpus_bleu(words({"a b c", "d e"}), words({"x b c", "f g"})).bleu;
  const auto hyp = words({"the the the the the the the"});
  const auto ref = words({"the cat is on the mat"});
  const auto r = corpus_bleu(hyp, ref);
  const auto brute = testing::brute_bleu(hyp, ref);
  double clip_err = std::abs(r.precisions[0] - 2.0 / 7.0);
  for (int n = 0; n < 4; ++n) clip_err = std::max(clip_err, std::abs(r.precisions[n] - brute.precisions[n]));
  clip_err = std::max(clip_err, std::abs(r.bleu - brute.bleu));
  return {b_ident == 100.0 && b_short == 0.0 && clip_err <= 1e-9,
          "identity " + fmt("%.6f", b_ident) + ", short " + fmt("%.6f", b_short) + ", clipping error " +
              fmt("%.2e", clip_err)};
}

// ---------------------------------------------------------------- 10

Outcome persistence() {
  auto cfg = desk().cfg;
  cfg.total_steps = 80;
  cfg.log_interval = 1;
  cfg.eval_interval = 40;
  cfg.paths.run_name = "unbroken";
  const auto full = cmd_train(cfg);

  auto part = cfg;
  part.paths.run_name = "resumed";
  TrainOptions stop;
  stop.stop_after = 40;
  cmd_train(part, stop);
  TrainOptions resume;
  resume.resume = true;
  const auto rest = cmd_train(part, resume);
  double worst = rest.trace.size() == full.trace.size() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < std::min(rest.trace.size(), full.trace.size()); ++i)
    worst = std::max(worst, std::abs(rest.trace[i].loss - full.trace[i].loss));

  const auto a = load_checkpoint(full.final_checkpoint);
  const fs::path copy = full.run_dir / "copy.ckpt";
  save_checkpoint(a.trainer, copy, a.metadata);
  const auto b = load_checkpoint(copy);
  const auto ws = load_workspace(cfg);
  const std::vector<std::size_t> ids{0, 1, 2, 3};
  const auto batch = make_batch(ws.valid, ids);
  const Tensor la = a.trainer.model().logits(batch)->value, lb = b.trainer.model().logits(batch)->value;
  bool identical = la.same_shape(lb);
  for (std::size_t i = 0; identical && i < la.size(); ++i)
    identical = std::bit_cast<std::uint64_t>(la[i]) == std::bit_cast<std::uint64_t>(lb[i]);
  const bool m0_kept = a.trainer.m0() == full.m0 && b.trainer.m0() == full.m0;
  return {identical && m0_kept && worst <= 1e-9,
          std::string("logits ") + (identical ? "bit-identical" : "differ") + ", m0 " +
              (m0_kept ? "preserved" : "changed") + ", resume max |loss difference| " + fmt("%.3e", worst)};
}

struct Check {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Check> all = {
      {1, "formula exactness", formula_exactness},
      {2, "CDF suite", cdf_suite},
      {3, "sampler soundness and uniformity", sampler_soundness},
      {4, "gradient fidelity", gradient_fidelity},
      {5, "norm decreases with frequency", norm_frequency},
      {6, "embedding norm growth", norm_growth},
      {7, "directional speedup", directional_speedup},
      {8, "vanilla reduction", vanilla_reduction},
      {9, "BLEU oracle", bleu_oracle},
      {10, "persistence", persistence},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
