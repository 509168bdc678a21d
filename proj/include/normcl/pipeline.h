// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration and the end-to-end workflow behind the command line:
// corpus preparation, word vectors, difficulty scoring, curriculum training,
// evaluation and multi-seed comparison.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "normcl/corpus.h"
#include "normcl/curriculum.h"
#include "normcl/embedding.h"
#include "normcl/eval.h"
#include "normcl/nmt.h"

namespace normcl {

// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "NORMCL_OUTPUT_ROOT";

struct CorpusConfig {
  int bpe_merges = 500;
  int min_count = 2;
  std::size_t max_len = 200;
};

struct CurriculumConfig {
  Criterion criterion = Criterion::norm;
  CompetenceKind kind = CompetenceKind::norm_based;
  double c0 = 0.01;
  double lambda_t = 1000.0;
  double lambda_m = 2.5;
  double lambda_w = 0.5;
  MatrixNorm matrix_norm = MatrixNorm::row_sum;
  std::uint64_t norm_interval = 1;
  std::size_t min_pool = 64;
  std::size_t token_budget = 256;
  bool anti = false;  // hardest-first control
};

struct EvalConfig {
  BeamConfig beam;
  bool smooth_bleu = false;
  std::size_t accuracy_chunk = 32;
};

struct PathConfig {
  std::filesystem::path raw_dir;     // {train,valid,test}.{src,tgt} before segmentation
  std::filesystem::path data_dir;    // prepared corpus and vocabularies
  std::filesystem::path output_dir;  // vectors, difficulty file, runs
  std::string run_name = "run";
};

struct RunConfig {
  std::uint64_t seed = 1;
  bool deterministic = true;
  PathConfig paths;
  CorpusConfig corpus;
  SgnsConfig sgns;
  CurriculumConfig curriculum;
  ModelConfig model;  // vocabulary sizes are filled in from the prepared data
  OptimizerConfig optimizer;
  EvalConfig eval;
  std::uint64_t total_steps = 2000;
  std::uint64_t log_interval = 10;
  std::uint64_t eval_interval = 100;

  // Range checks only; file existence is checked per command.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

// Applies "a.b.c=value" overrides; the value is parsed as JSON when possible
// and taken as a string otherwise.
nlohmann::json apply_overrides(nlohmann::json config, const std::vector<std::string>& overrides);

// Hash of the training-relevant configuration (paths and step counts excluded).
std::string config_hash(const RunConfig& cfg);

// Seeds derived from the run seed.
std::uint64_t sampler_seed(const RunConfig& cfg);
std::uint64_t model_seed(const RunConfig& cfg);

struct DataFiles {
  std::filesystem::path train_source, train_target;
  std::filesystem::path valid_source, valid_target;
  std::filesystem::path test_source, test_target;
  std::filesystem::path source_vocab, target_vocab;
  std::filesystem::path source_merges, target_merges;
};
DataFiles data_files(const std::filesystem::path& data_dir);

struct ArtifactFiles {
  std::filesystem::path vectors, norms, difficulty;
};
ArtifactFiles artifact_files(const RunConfig& cfg);
std::filesystem::path run_dir(const RunConfig& cfg);

// Writes the effective configuration to dir/config.json.
void echo_config(const RunConfig& cfg, const std::filesystem::path& dir);

// ---------------------------------------------------------------- commands

// Tokenizes raw_dir, learns merges per language on the training side, writes
// segmented splits and vocabularies into data_dir.
void cmd_prepare(const RunConfig& cfg);

struct Workspace {
  Vocabulary source_vocab, target_vocab;
  ParallelCorpus train, valid;
};
Workspace load_workspace(const RunConfig& cfg);

EmbeddingTable cmd_embed(const RunConfig& cfg);
DifficultyProfile cmd_score(const RunConfig& cfg);

struct TraceRow {
  std::uint64_t step = 0;
  double m_t = 0.0;  // drives this step's competence
  double competence = 0.0;
  double eligible_fraction = 0.0;
  double mean_weight = 0.0;
  double loss = 0.0;
  double lr = 0.0;
  double embedding_norm = 0.0;  // source embedding norm after the update
};
inline constexpr const char* kTraceHeader =
    "step,m_t,competence,eligible_fraction,mean_weight,loss,lr,embedding_norm";

struct EvalRow {
  std::uint64_t step = 0;
  double token_accuracy = 0.0;
  double token_nll = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::vector<EvalRow> evals;
  double m0 = 0.0;
  std::filesystem::path run_dir;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
};

struct TrainOptions {
  bool resume = false;
  // Stop after this step without finishing the run (the checkpoint is still
  // written); 0 runs to total_steps.
  std::uint64_t stop_after = 0;
  bool quiet = true;
};

// The curriculum loop. Trace rows are kept in memory for every step and
// written every log interval; the validation set is scored and a checkpoint
// written every eval interval and at the end.
TrainResult cmd_train(const RunConfig& cfg, const TrainOptions& options = {});

struct EvaluationReport {
  BleuResult bleu;
  std::size_t n_sentences = 0;
  std::size_t truncated = 0;
  nlohmann::json to_json() const;
};

// Decodes source_file, scores it against reference_file, and writes
// translations.txt plus report.json into out_dir.
EvaluationReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                              const std::filesystem::path& source_file,
                              const std::filesystem::path& reference_file,
                              const std::filesystem::path& out_dir);

// Word sequences for BLEU from subword token ids.
WordSequence detokenize(const Vocabulary& vocab, std::span<const TokenId> ids);

struct CompareOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  // Target = fraction x the first configuration's final held-out token accuracy
  // for the same seed. An absolute target overrides it.
  double target_fraction = 0.9;
  std::optional<double> absolute_target;
  bool evaluate_bleu = true;
};

struct CompareRun {
  std::string label;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> steps_to_target;
  double final_accuracy = 0.0;
  double bleu = 0.0;
};

struct CompareReport {
  std::vector<std::string> labels;
  std::vector<CompareRun> runs;
  std::vector<double> targets;  // per seed
  nlohmann::json to_json() const;
  // Median over seeds; reached-never seeds count as +infinity. nullopt when
  // the median itself was not reached.
  std::optional<double> median_steps(const std::string& label) const;
  double median_bleu(const std::string& label) const;
};

// Trains every configuration for every seed (the configs' own seeds are
// replaced) and records steps-to-target on the validation set. The first
// configuration is the reference that defines the target.
CompareReport cmd_compare(const std::vector<std::pair<std::string, RunConfig>>& configs,
                          const CompareOptions& options);

// Competence curve without training: for time_sqrt the driver is the step,
// for norm_based it is m_t sampled on [m0, (1 + lambda_m) m0].
std::vector<std::pair<double, double>> cmd_schedule_dump(const CurriculumConfig& cfg, double m0,
                                                         std::uint64_t points, double t_max);

// ---------------------------------------------------------------- desk task

// Synthetic translation task: Zipfian source words drawn around topics and
// a fixed word-for-word lexicon into the target language.
struct DeskTaskConfig {
  std::size_t n_train = 5000;
  std::size_t n_valid = 300;
  std::size_t n_test = 300;
  std::size_t vocab = 200;
  std::size_t topics = 8;
  std::size_t min_len = 3;
  std::size_t max_len = 16;
  double zipf = 1.0;
  bool reverse = false;  // emit the target in reverse word order
  std::uint64_t seed = 7;
};

void generate_desk_task(const DeskTaskConfig& cfg, const std::filesystem::path& raw_dir);

}  // namespace normcl
