// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "normcl/errors.h"

namespace normcl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

void reject_unknown(const json& j, std::string_view section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config: '" + std::string(section) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : keys) ok = ok || key == k;
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in '" + std::string(section) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

fs::path output_root(const RunConfig& cfg) {
  if (!cfg.paths.output_dir.empty()) return cfg.paths.output_dir;
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
  return "runs";
}

}  // namespace

void RunConfig::validate() const {
  if (corpus.bpe_merges < 0) throw ConfigError("corpus.bpe_merges must be >= 0");
  if (corpus.min_count < 1) throw ConfigError("corpus.min_count must be >= 1");
  if (corpus.max_len < 1) throw ConfigError("corpus.max_len must be >= 1");
  sgns.validate();

  const auto& c = curriculum;
  if (!(c.c0 > 0.0 && c.c0 <= 1.0)) throw ConfigError("curriculum.c0 must lie in (0, 1]");
  if (!(c.lambda_t > 0.0)) throw ConfigError("curriculum.lambda_t must be > 0");
  if (!(c.lambda_m > 0.0)) throw ConfigError("curriculum.lambda_m must be > 0");
  if (!(c.lambda_w >= 0.0)) throw ConfigError("curriculum.lambda_w must be >= 0");
  if (c.norm_interval < 1) throw ConfigError("curriculum.norm_interval must be >= 1");
  if (c.min_pool < 1) throw ConfigError("curriculum.min_pool must be >= 1");
  if (c.token_budget < 1) throw ConfigError("curriculum.token_budget must be >= 1");

  ModelConfig m = model;
  m.source_vocab = std::max<std::size_t>(m.source_vocab, kNumSpecials + 1);
  m.target_vocab = std::max<std::size_t>(m.target_vocab, kNumSpecials + 1);
  m.validate();

  if (optimizer.warmup < 1) throw ConfigError("optimizer.warmup must be >= 1");
  if (!(optimizer.peak_lr > 0.0)) throw ConfigError("optimizer.peak_lr must be > 0");
  const auto& a = optimizer.adam;
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(a.eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
  eval.beam.validate();
  if (eval.accuracy_chunk < 1) throw ConfigError("eval.accuracy_chunk must be >= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["deterministic"] = deterministic;
  j["paths"] = {{"raw_dir", paths.raw_dir.string()},
                {"data_dir", paths.data_dir.string()},
                {"output_dir", output_root(*this).string()},
                {"run_name", paths.run_name}};
  j["corpus"] = {{"bpe_merges", corpus.bpe_merges},
                 {"min_count", corpus.min_count},
                 {"max_len", corpus.max_len}};
  j["sgns"] = {{"dim", sgns.dim},
               {"window", sgns.window},
               {"negatives", sgns.negatives},
               {"epochs", sgns.epochs},
               {"initial_lr", sgns.initial_lr},
               {"min_count", sgns.min_count},
               {"subsample_threshold", sgns.subsample_threshold},
               {"threads", sgns.threads}};
  const auto& c = curriculum;
  j["curriculum"] = {{"criterion", to_string(c.criterion)},
                     {"kind", to_string(c.kind)},
                     {"c0", c.c0},
                     {"lambda_t", c.lambda_t},
                     {"lambda_m", c.lambda_m},
                     {"lambda_w", c.lambda_w},
                     {"matrix_norm", to_string(c.matrix_norm)},
                     {"norm_interval", c.norm_interval},
                     {"min_pool", c.min_pool},
                     {"token_budget", c.token_budget},
                     {"anti", c.anti}};
  json m = model.to_json();
  m.erase("seed");
  j["model"] = m;
  j["optimizer"] = optimizer.to_json();
  j["eval"] = {{"beam_size", eval.beam.beam_size},
               {"alpha", eval.beam.alpha},
               {"max_decode_len", eval.beam.max_decode_len},
               {"smooth_bleu", eval.smooth_bleu},
               {"accuracy_chunk", eval.accuracy_chunk}};
  j["total_steps"] = total_steps;
  j["log_interval"] = log_interval;
  j["eval_interval"] = eval_interval;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, "root",
                 {"seed", "deterministic", "paths", "corpus", "sgns", "curriculum", "model",
                  "optimizer", "eval", "total_steps", "log_interval", "eval_interval"});
  RunConfig cfg;
  read(j, "seed", cfg.seed);
  read(j, "deterministic", cfg.deterministic);
  read(j, "total_steps", cfg.total_steps);
  read(j, "log_interval", cfg.log_interval);
  read(j, "eval_interval", cfg.eval_interval);

  if (j.contains("paths")) {
    const auto& p = j["paths"];
    reject_unknown(p, "paths", {"raw_dir", "data_dir", "output_dir", "run_name"});
    std::string s;
    if (p.contains("raw_dir")) read(p, "raw_dir", s), cfg.paths.raw_dir = s;
    if (p.contains("data_dir")) read(p, "data_dir", s), cfg.paths.data_dir = s;
    if (p.contains("output_dir")) read(p, "output_dir", s), cfg.paths.output_dir = s;
    read(p, "run_name", cfg.paths.run_name);
  }
  if (j.contains("corpus")) {
    const auto& p = j["corpus"];
    reject_unknown(p, "corpus", {"bpe_merges", "min_count", "max_len"});
    read(p, "bpe_merges", cfg.corpus.bpe_merges);
    read(p, "min_count", cfg.corpus.min_count);
    read(p, "max_len", cfg.corpus.max_len);
  }
  if (j.contains("sgns")) {
    const auto& p = j["sgns"];
    reject_unknown(p, "sgns",
                   {"dim", "window", "negatives", "epochs", "initial_lr", "min_count",
                    "subsample_threshold", "threads"});
    read(p, "dim", cfg.sgns.dim);
    read(p, "window", cfg.sgns.window);
    read(p, "negatives", cfg.sgns.negatives);
    read(p, "epochs", cfg.sgns.epochs);
    read(p, "initial_lr", cfg.sgns.initial_lr);
    read(p, "min_count", cfg.sgns.min_count);
    read(p, "subsample_threshold", cfg.sgns.subsample_threshold);
    read(p, "threads", cfg.sgns.threads);
  }
  if (j.contains("curriculum")) {
    const auto& p = j["curriculum"];
    reject_unknown(p, "curriculum",
                   {"criterion", "kind", "c0", "lambda_t", "lambda_m", "lambda_w", "matrix_norm",
                    "norm_interval", "min_pool", "token_budget", "anti"});
    auto& c = cfg.curriculum;
    std::string s;
    if (p.contains("criterion")) read(p, "criterion", s), c.criterion = parse_criterion(s);
    if (p.contains("kind")) read(p, "kind", s), c.kind = parse_competence_kind(s);
    if (p.contains("matrix_norm")) read(p, "matrix_norm", s), c.matrix_norm = parse_matrix_norm(s);
    read(p, "c0", c.c0);
    read(p, "lambda_t", c.lambda_t);
    read(p, "lambda_m", c.lambda_m);
    read(p, "lambda_w", c.lambda_w);
    read(p, "norm_interval", c.norm_interval);
    read(p, "min_pool", c.min_pool);
    read(p, "token_budget", c.token_budget);
    read(p, "anti", c.anti);
  }
  if (j.contains("model")) {
    const auto& p = j["model"];
    reject_unknown(p, "model",
                   {"source_vocab", "target_vocab", "d_model", "n_heads", "n_layers", "d_ff",
                    "dropout", "max_positions", "tie_target_embeddings", "pre_norm",
                    "label_smoothing", "scale_embeddings"});
    try {
      cfg.model = ModelConfig::from_json(p);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad model section: ") + e.what());
    }
  }
  if (j.contains("optimizer")) {
    const auto& p = j["optimizer"];
    reject_unknown(p, "optimizer", {"warmup", "peak_lr", "beta1", "beta2", "eps"});
    try {
      cfg.optimizer = OptimizerConfig::from_json(p);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad optimizer section: ") + e.what());
    }
  }
  if (j.contains("eval")) {
    const auto& p = j["eval"];
    reject_unknown(p, "eval", {"beam_size", "alpha", "max_decode_len", "smooth_bleu", "accuracy_chunk"});
    read(p, "beam_size", cfg.eval.beam.beam_size);
    read(p, "alpha", cfg.eval.beam.alpha);
    read(p, "max_decode_len", cfg.eval.beam.max_decode_len);
    read(p, "smooth_bleu", cfg.eval.smooth_bleu);
    read(p, "accuracy_chunk", cfg.eval.accuracy_chunk);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

json apply_overrides(json config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + o);
    std::string pointer = "/" + o.substr(0, eq);
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    config[json::json_pointer(pointer)] = value;
  }
  return config;
}

std::string config_hash(const RunConfig& cfg) {
  json j = cfg.to_json();
  j.erase("paths");
  j.erase("total_steps");
  j.erase("log_interval");
  j.erase("eval_interval");
  j.erase("eval");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::uint64_t sampler_seed(const RunConfig& cfg) { return cfg.seed * 2654435761ULL + 101; }
std::uint64_t model_seed(const RunConfig& cfg) { return cfg.seed; }

DataFiles data_files(const fs::path& d) {
  return {d / "train.src", d / "train.tgt", d / "valid.src", d / "valid.tgt",
          d / "test.src",  d / "test.tgt",  d / "vocab.src", d / "vocab.tgt",
          d / "merges.src", d / "merges.tgt"};
}

ArtifactFiles artifact_files(const RunConfig& cfg) {
  const fs::path root = output_root(cfg);
  return {root / "vectors.txt", root / "norms.tsv", root / "difficulty.tsv"};
}

fs::path run_dir(const RunConfig& cfg) { return output_root(cfg) / cfg.paths.run_name; }

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  out << cfg.to_json().dump(2) << '\n';
}

namespace {

void require_file(const fs::path& p, std::string_view what) {
  if (p.empty() || !fs::is_regular_file(p)) {
    throw ValidationError(std::string(what) + " not found: " + (p.empty() ? "<unset>" : p.string()));
  }
}

}  // namespace

// ---------------------------------------------------------------- prepare / embed / score

void cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.paths.data_dir.empty()) throw ConfigError("paths.data_dir is required");
  const DataFiles raw = data_files(cfg.paths.raw_dir);
  for (const auto& p : {raw.train_source, raw.train_target, raw.valid_source, raw.valid_target,
                        raw.test_source, raw.test_target})
    require_file(p, "raw corpus file");
  fs::create_directories(cfg.paths.data_dir);
  const DataFiles out = data_files(cfg.paths.data_dir);

  auto tokenized = [](const fs::path& p) {
    std::vector<std::string> lines;
    for (const auto& line : read_lines(p)) {
      const auto toks = tokenize(line);
      lines.push_back(join(toks));
    }
    return lines;
  };
  struct Side {
    fs::path train, valid, test, out_train, out_valid, out_test, vocab, merges;
  };
  const Side sides[] = {
      {raw.train_source, raw.valid_source, raw.test_source, out.train_source, out.valid_source,
       out.test_source, out.source_vocab, out.source_merges},
      {raw.train_target, raw.valid_target, raw.test_target, out.train_target, out.valid_target,
       out.test_target, out.target_vocab, out.target_merges}};
  for (const auto& side : sides) {
    const auto train = tokenized(side.train);
    const MergeTable merges = MergeTable::learn(train, cfg.corpus.bpe_merges);
    merges.save(side.merges);
    auto segment = [&](const std::vector<std::string>& lines) {
      std::vector<std::string> seg;
      seg.reserve(lines.size());
      for (const auto& l : lines) seg.push_back(merges.apply(l));
      return seg;
    };
    const auto train_seg = segment(train);
    write_lines(side.out_train, train_seg);
    write_lines(side.out_valid, segment(tokenized(side.valid)));
    write_lines(side.out_test, segment(tokenized(side.test)));
    Vocabulary::build(train_seg, cfg.corpus.min_count).save(side.vocab);
  }
  echo_config(cfg, cfg.paths.data_dir);
}

Workspace load_workspace(const RunConfig& cfg) {
  const DataFiles f = data_files(cfg.paths.data_dir);
  for (const auto& p : {f.train_source, f.train_target, f.valid_source, f.valid_target,
                        f.source_vocab, f.target_vocab})
    require_file(p, "prepared corpus file");
  Workspace ws;
  ws.source_vocab = Vocabulary::load(f.source_vocab);
  ws.target_vocab = Vocabulary::load(f.target_vocab);
  ws.train = load_parallel(f.train_source, f.train_target, ws.source_vocab, ws.target_vocab,
                           cfg.corpus.max_len);
  ws.valid = load_parallel(f.valid_source, f.valid_target, ws.source_vocab, ws.target_vocab,
                           cfg.corpus.max_len);
  return ws;
}

EmbeddingTable cmd_embed(const RunConfig& cfg) {
  cfg.validate();
  const Workspace ws = load_workspace(cfg);
  std::vector<Sentence> sources;
  sources.reserve(ws.train.size());
  for (const auto& p : ws.train.pairs) sources.push_back(p.source);
  SgnsConfig s = cfg.sgns;
  s.seed = cfg.seed;
  s.deterministic = cfg.deterministic;
  EmbeddingTable table = train_sgns(sources, ws.source_vocab.size(), s);
  const ArtifactFiles a = artifact_files(cfg);
  fs::create_directories(a.vectors.parent_path());
  table.save_vectors(a.vectors, ws.source_vocab);
  table.save_norms(a.norms, ws.source_vocab);
  echo_config(cfg, a.vectors.parent_path());
  return table;
}

DifficultyProfile cmd_score(const RunConfig& cfg) {
  cfg.validate();
  const Workspace ws = load_workspace(cfg);
  const ArtifactFiles a = artifact_files(cfg);
  std::optional<EmbeddingTable> table;
  if (cfg.curriculum.criterion == Criterion::norm) {
    if (!fs::is_regular_file(a.vectors)) {
      throw ConfigError("criterion 'norm' needs word vectors; run embed first (" +
                        a.vectors.string() + ")");
    }
    table = EmbeddingTable::load_vectors(a.vectors, ws.source_vocab);
  }
  DifficultyProfile profile = score_corpus(ws.train, cfg.curriculum.criterion,
                                           table ? &*table : nullptr, &ws.source_vocab);
  fs::create_directories(a.difficulty.parent_path());
  profile.save(a.difficulty);
  return profile;
}

// ---------------------------------------------------------------- train

namespace {

std::string format_row(const TraceRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(r.step), r.m_t, r.competence, r.eligible_fraction,
                r.mean_weight, r.loss, r.lr, r.embedding_norm);
  return buf;
}

std::vector<TraceRow> read_trace(const fs::path& p, std::uint64_t up_to) {
  std::vector<TraceRow> rows;
  if (!fs::is_regular_file(p)) return rows;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRow r;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &step, &r.m_t, &r.competence,
                    &r.eligible_fraction, &r.mean_weight, &r.loss, &r.lr, &r.embedding_norm) != 8) {
      throw LoadError("malformed trace line: " + line);
    }
    r.step = step;
    if (r.step <= up_to) rows.push_back(r);
  }
  return rows;
}

std::vector<EvalRow> read_evals(const fs::path& p, std::uint64_t up_to) {
  std::vector<EvalRow> rows;
  if (!fs::is_regular_file(p)) return rows;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EvalRow r;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf", &step, &r.token_accuracy, &r.token_nll) != 3) {
      throw LoadError("malformed eval line: " + line);
    }
    r.step = step;
    if (r.step <= up_to) rows.push_back(r);
  }
  return rows;
}

void write_trace(const fs::path& p, const std::vector<TraceRow>& rows, std::uint64_t log_interval) {
  std::ofstream out(p);
  out << kTraceHeader << '\n';
  for (const auto& r : rows)
    if (r.step % log_interval == 0) out << format_row(r) << '\n';
}

void write_evals(const fs::path& p, const std::vector<EvalRow>& rows) {
  std::ofstream out(p);
  out << "step,token_accuracy,token_nll\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g", static_cast<unsigned long long>(r.step),
                  r.token_accuracy, r.token_nll);
    out << buf << '\n';
  }
}

DifficultyProfile training_profile(const RunConfig& cfg, const ParallelCorpus& train) {
  if (cfg.curriculum.kind == CompetenceKind::none) {
    return make_profile(cfg.curriculum.criterion, std::vector<double>(train.size(), 0.0));
  }
  const fs::path p = artifact_files(cfg).difficulty;
  if (!fs::is_regular_file(p)) throw ConfigError("difficulty file not found (run score first): " + p.string());
  DifficultyProfile profile = DifficultyProfile::load(p);
  if (profile.size() != train.size()) {
    throw ConfigError("difficulty file covers " + std::to_string(profile.size()) +
                      " sentences but the corpus has " + std::to_string(train.size()));
  }
  return cfg.curriculum.anti ? profile.inverted() : profile;
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const Workspace ws = load_workspace(cfg);
  const auto& cur = cfg.curriculum;

  ModelConfig mc = cfg.model;
  mc.source_vocab = ws.source_vocab.size();
  mc.target_vocab = ws.target_vocab.size();
  mc.seed = model_seed(cfg);

  const DifficultyProfile profile = training_profile(cfg, ws.train);
  CurriculumSampler sampler(profile, cur.min_pool, cur.token_budget, sampler_seed(cfg));

  TrainResult result;
  result.run_dir = run_dir(cfg);
  fs::create_directories(result.run_dir);
  echo_config(cfg, result.run_dir);
  const fs::path latest = result.run_dir / "latest.ckpt";
  const fs::path best = result.run_dir / "best.ckpt";
  const fs::path trace_path = result.run_dir / "trace.csv";
  const fs::path eval_path = result.run_dir / "eval.csv";
  const std::string hash = config_hash(cfg);

  Trainer trainer(mc, cfg.optimizer, cur.matrix_norm, cur.norm_interval);
  double best_accuracy = -1.0;
  if (options.resume && fs::is_regular_file(latest)) {
    LoadedCheckpoint loaded = load_checkpoint(latest);
    if (loaded.metadata.value("config_hash", std::string()) != hash) {
      throw ConfigError("refusing to resume " + latest.string() +
                        ": configuration hash differs from the checkpoint's");
    }
    trainer = std::move(loaded.trainer);
    std::istringstream rng(loaded.metadata.at("sampler_rng").get<std::string>());
    rng >> sampler.rng();
    best_accuracy = loaded.metadata.value("best_accuracy", -1.0);
    result.trace = read_trace(trace_path, trainer.step());
    result.evals = read_evals(eval_path, trainer.step());
  }
  result.m0 = trainer.m0();

  CompetenceSchedule schedule{cur.kind, cur.c0, cur.lambda_t, cur.lambda_m, trainer.m0()};
  schedule.validate();
  const double n = static_cast<double>(ws.train.size());
  const std::uint64_t last =
      options.stop_after > 0 ? std::min(options.stop_after, cfg.total_steps) : cfg.total_steps;

  auto checkpoint = [&](std::uint64_t step) {
    const TokenAccuracy acc = trainer.model().teacher_forced_accuracy(ws.valid, cfg.eval.accuracy_chunk);
    result.evals.push_back({step, acc.accuracy(), acc.mean_nll()});
    const bool improved = acc.accuracy() > best_accuracy;
    if (improved) best_accuracy = acc.accuracy();
    std::ostringstream rng;
    rng << sampler.rng();
    const json meta = {{"config_hash", hash},
                       {"sampler_rng", rng.str()},
                       {"best_accuracy", best_accuracy},
                       {"competence", to_string(cur.kind)}};
    save_checkpoint(trainer, latest, meta);
    if (improved) fs::copy_file(latest, best, fs::copy_options::overwrite_existing);
    write_trace(trace_path, result.trace, cfg.log_interval);
    write_evals(eval_path, result.evals);
    if (!options.quiet) {
      std::cerr << "step " << step << " valid_acc " << acc.accuracy() << " valid_nll "
                << acc.mean_nll() << '\n';
    }
  };

  std::vector<double> weights;
  for (std::uint64_t t = trainer.step() + 1; t <= last; ++t) {
    const double m = trainer.m_t();
    const double c = schedule(static_cast<double>(t), m);
    const auto ids = sampler.sample(c, ws.train);
    weights.assign(ids.size(), 1.0);
    if (cur.kind != CompetenceKind::none) {
      for (std::size_t i = 0; i < ids.size(); ++i)
        weights[i] = sentence_weight(profile.cdf[ids[i]], c, cur.lambda_w);
    }
    const StepMetrics sm = trainer.train_step(make_batch(ws.train, ids), weights);
    TraceRow row;
    row.step = t;
    row.m_t = m;
    row.competence = c;
    row.eligible_fraction = static_cast<double>(sampler.eligible_count(c)) / n;
    row.mean_weight = std::accumulate(weights.begin(), weights.end(), 0.0) /
                      static_cast<double>(weights.size());
    row.loss = sm.loss;
    row.lr = sm.lr;
    row.embedding_norm = trainer.current_embedding_norm();
    result.trace.push_back(row);
    if (!options.quiet && t % cfg.log_interval == 0) {
      std::cerr << format_row(row) << '\n';
    }
    if (t % cfg.eval_interval == 0 || t == last) checkpoint(t);
  }
  if (!fs::is_regular_file(latest)) checkpoint(trainer.step());
  result.final_checkpoint = latest;
  result.best_checkpoint = best;
  return result;
}

// ---------------------------------------------------------------- evaluate

WordSequence detokenize(const Vocabulary& vocab, std::span<const TokenId> ids) {
  const auto subwords = vocab.decode(ids);
  return split_whitespace(join_subwords(subwords));
}

json EvaluationReport::to_json() const {
  return {{"bleu", bleu.bleu},
          {"brevity_penalty", bleu.brevity_penalty},
          {"precisions", bleu.precisions},
          {"n_sentences", n_sentences},
          {"hypothesis_length", bleu.hypothesis_length},
          {"reference_length", bleu.reference_length},
          {"truncated", truncated}};
}

EvaluationReport cmd_evaluate(const RunConfig& cfg, const fs::path& checkpoint,
                              const fs::path& source_file, const fs::path& reference_file,
                              const fs::path& out_dir) {
  cfg.validate();
  require_file(checkpoint, "checkpoint");
  require_file(source_file, "test source file");
  require_file(reference_file, "test reference file");
  const DataFiles f = data_files(cfg.paths.data_dir);
  require_file(f.source_vocab, "source vocabulary");
  require_file(f.target_vocab, "target vocabulary");
  const auto sources = read_lines(source_file);
  const auto references = read_lines(reference_file);
  if (sources.empty()) throw ValidationError("test file is empty: " + source_file.string());
  if (sources.size() != references.size()) {
    throw AlignmentError("test source has " + std::to_string(sources.size()) +
                         " lines but the reference has " + std::to_string(references.size()));
  }
  const Vocabulary sv = Vocabulary::load(f.source_vocab);
  const Vocabulary tv = Vocabulary::load(f.target_vocab);
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  const Transformer& model = loaded.trainer.model();

  BeamConfig beam = cfg.eval.beam;
  beam.max_decode_len = std::min(beam.max_decode_len, model.config().max_positions - 1);

  EvaluationReport report;
  std::vector<WordSequence> hyps, refs;
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Sentence src = sv.encode(sources[i]);
    if (src.size() > model.config().max_positions) src.resize(model.config().max_positions);
    WordSequence words;
    if (!src.empty()) {
      const Hypothesis h = beam_decode(model, src, beam);
      report.truncated += h.truncated ? 1 : 0;
      words = detokenize(tv, h.tokens);
    }
    lines.push_back(join(words));
    hyps.push_back(std::move(words));
    refs.push_back(split_whitespace(join_subwords(split_whitespace(references[i]))));
  }
  report.bleu = corpus_bleu(hyps, refs, cfg.eval.smooth_bleu);
  report.n_sentences = sources.size();
  fs::create_directories(out_dir);
  write_lines(out_dir / "translations.txt", lines);
  std::ofstream(out_dir / "report.json") << report.to_json().dump(2) << '\n';
  return report;
}

// ---------------------------------------------------------------- compare

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  if (k == 0) return std::numeric_limits<double>::quiet_NaN();
  return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

}  // namespace

std::optional<double> CompareReport::median_steps(const std::string& label) const {
  std::vector<double> v;
  for (const auto& r : runs)
    if (r.label == label)
      v.push_back(r.steps_to_target ? static_cast<double>(*r.steps_to_target)
                                    : std::numeric_limits<double>::infinity());
  const double m = median_of(std::move(v));
  if (!std::isfinite(m)) return std::nullopt;
  return m;
}

double CompareReport::median_bleu(const std::string& label) const {
  std::vector<double> v;
  for (const auto& r : runs)
    if (r.label == label) v.push_back(r.bleu);
  return median_of(std::move(v));
}

json CompareReport::to_json() const {
  json rows = json::array();
  std::vector<std::uint64_t> seeds;
  for (const auto& r : runs)
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    json row = {{"seed", seeds[s]}, {"target", s < targets.size() ? targets[s] : 0.0}};
    std::optional<std::uint64_t> ref_steps;
    for (const auto& r : runs) {
      if (r.seed != seeds[s]) continue;
      json cell = {{"steps_to_target", r.steps_to_target ? json(*r.steps_to_target) : json("not reached")},
                   {"final_accuracy", r.final_accuracy},
                   {"bleu", r.bleu}};
      if (r.label == labels.front()) ref_steps = r.steps_to_target;
      if (r.label != labels.front() && ref_steps && r.steps_to_target) {
        cell["speedup"] = static_cast<double>(*ref_steps) / static_cast<double>(*r.steps_to_target);
      }
      row[r.label] = cell;
    }
    rows.push_back(row);
  }
  json median = {{"seed", "median"}};
  const auto ref = median_steps(labels.front());
  for (const auto& label : labels) {
    const auto m = median_steps(label);
    json cell = {{"steps_to_target", m ? json(*m) : json("not reached")}, {"bleu", median_bleu(label)}};
    if (label != labels.front() && m && ref) cell["speedup"] = *ref / *m;
    median[label] = cell;
  }
  rows.push_back(median);
  return {{"labels", labels}, {"rows", rows}};
}

CompareReport cmd_compare(const std::vector<std::pair<std::string, RunConfig>>& configs,
                          const CompareOptions& options) {
  if (configs.size() < 2) throw ConfigError("compare needs at least two configurations");
  if (options.seeds.empty()) throw ConfigError("compare needs at least one seed");
  const auto& first = configs.front().second;
  for (const auto& [label, c] : configs) {
    c.validate();
    if (c.paths.data_dir != first.paths.data_dir || c.model.d_model != first.model.d_model ||
        c.model.n_layers != first.model.n_layers || c.model.n_heads != first.model.n_heads ||
        c.model.d_ff != first.model.d_ff) {
      throw ConfigError("compare: configuration '" + label + "' differs in corpus or model size");
    }
  }
  CompareReport report;
  for (const auto& [label, c] : configs) report.labels.push_back(label);

  for (std::uint64_t seed : options.seeds) {
    std::vector<CompareRun> seed_runs;
    for (const auto& [label, base] : configs) {
      RunConfig c = base;
      c.seed = seed;
      c.paths.run_name = (fs::path(label) / ("seed-" + std::to_string(seed))).string();
      const TrainResult tr = cmd_train(c);
      CompareRun run;
      run.label = label;
      run.seed = seed;
      run.final_accuracy = tr.evals.empty() ? 0.0 : tr.evals.back().token_accuracy;
      if (options.evaluate_bleu) {
        const DataFiles f = data_files(c.paths.data_dir);
        run.bleu = cmd_evaluate(c, tr.final_checkpoint, f.test_source, f.test_target,
                                tr.run_dir / "test")
                       .bleu.bleu;
      }
      // The reference configuration runs first, so its final accuracy is known here.
      const double target = options.absolute_target
                                ? *options.absolute_target
                                : options.target_fraction *
                                      (seed_runs.empty() ? run.final_accuracy
                                                         : seed_runs.front().final_accuracy);
      for (const auto& e : tr.evals) {
        if (e.token_accuracy >= target) {
          run.steps_to_target = e.step;
          break;
        }
      }
      seed_runs.push_back(run);
    }
    report.targets.push_back(options.absolute_target
                                 ? *options.absolute_target
                                 : options.target_fraction * seed_runs.front().final_accuracy);
    for (auto& r : seed_runs) report.runs.push_back(std::move(r));
  }
  return report;
}

std::vector<std::pair<double, double>> cmd_schedule_dump(const CurriculumConfig& cfg, double m0,
                                                         std::uint64_t points, double t_max) {
  if (points < 2) throw ConfigError("schedule-dump needs at least 2 points");
  CompetenceSchedule s{cfg.kind, cfg.c0, cfg.lambda_t, cfg.lambda_m, m0};
  s.validate();
  std::vector<std::pair<double, double>> out;
  for (std::uint64_t i = 0; i < points; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(points - 1);
    if (cfg.kind == CompetenceKind::norm_based) {
      const double m = m0 * (1.0 + cfg.lambda_m * frac);
      out.emplace_back(m, s(0.0, m));
    } else {
      const double t = t_max * frac;
      out.emplace_back(t, s(t, m0));
    }
  }
  return out;
}

// ---------------------------------------------------------------- desk task

namespace {

std::vector<std::string> pseudo_words(std::size_t n, std::string_view consonants,
                                      std::string_view vowels, std::mt19937_64& rng,
                                      std::set<std::string>& taken) {
  std::uniform_int_distribution<std::size_t> ci(0, consonants.size() - 1), vi(0, vowels.size() - 1),
      syl(2, 3);
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const std::size_t k = syl(rng);
    for (std::size_t s = 0; s < k; ++s) {
      w += consonants[ci(rng)];
      w += vowels[vi(rng)];
    }
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

}  // namespace

void generate_desk_task(const DeskTaskConfig& cfg, const fs::path& raw_dir) {
  if (cfg.vocab < cfg.topics || cfg.topics == 0) throw ConfigError("desk task: need vocab >= topics >= 1");
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) throw ConfigError("desk task: bad length range");
  std::mt19937_64 rng(cfg.seed);
  std::set<std::string> taken;
  const auto src_words = pseudo_words(cfg.vocab, "bdgklmnprstvz", "aeiou", rng, taken);
  const auto tgt_words = pseudo_words(cfg.vocab, "cfhjqwxy", "aeiouy", rng, taken);

  // Rank r has Zipf weight 1/(r+1)^s; word r lives in topic r % topics.
  std::vector<double> global(cfg.vocab);
  for (std::size_t r = 0; r < cfg.vocab; ++r) global[r] = 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf);
  std::vector<std::discrete_distribution<std::size_t>> topic_dists;
  std::vector<std::vector<std::size_t>> topic_words(cfg.topics);
  for (std::size_t r = 0; r < cfg.vocab; ++r) topic_words[r % cfg.topics].push_back(r);
  for (const auto& words : topic_words) {
    std::vector<double> w;
    for (auto r : words) w.push_back(global[r]);
    topic_dists.emplace_back(w.begin(), w.end());
  }
  std::discrete_distribution<std::size_t> global_dist(global.begin(), global.end());
  std::uniform_int_distribution<std::size_t> topic_pick(0, cfg.topics - 1);
  std::uniform_int_distribution<std::size_t> len_pick(cfg.min_len, cfg.max_len);
  std::bernoulli_distribution from_topic(0.5);

  auto make_split = [&](std::size_t count, const std::string& name) {
    std::vector<std::string> src, tgt;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t topic = topic_pick(rng);
      const std::size_t len = len_pick(rng);
      std::vector<std::string> s, t;
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t r = from_topic(rng) ? topic_words[topic][topic_dists[topic](rng)]
                                              : global_dist(rng);
        s.push_back(src_words[r]);
        t.push_back(tgt_words[r]);
      }
      if (cfg.reverse) std::reverse(t.begin(), t.end());
      src.push_back(join(s));
      tgt.push_back(join(t));
    }
    write_lines(raw_dir / (name + ".src"), src);
    write_lines(raw_dir / (name + ".tgt"), tgt);
  };
  fs::create_directories(raw_dir);
  make_split(cfg.n_train, "train");
  make_split(cfg.n_valid, "valid");
  make_split(cfg.n_test, "test");
}

}  // namespace normcl
