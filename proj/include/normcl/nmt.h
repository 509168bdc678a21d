// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// A compact transformer encoder-decoder on top of the autodiff tensors.
//
// Batches are packed: the tokens of all sentences are stacked into one matrix
// and attention runs per sentence over its own rows, so no padding ever
// reaches a kernel. Trailing pad ids in a batch are stripped on entry.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "normcl/corpus.h"
#include "normcl/curriculum.h"
#include "normcl/tensor.h"

namespace normcl {

struct ModelConfig {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  std::size_t max_positions = 256;
  bool tie_target_embeddings = true;
  bool pre_norm = true;
  double label_smoothing = 0.0;
  // Multiply looked-up embeddings by sqrt(d_model) before adding positions.
  bool scale_embeddings = true;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Batch {
  std::vector<std::size_t> ids;
  std::vector<Sentence> source;
  std::vector<Sentence> target;

  std::size_t size() const { return source.size(); }
};

Batch make_batch(const ParallelCorpus& corpus, std::span<const std::size_t> ids);

struct ForwardResult {
  Var loss;
  std::vector<double> sentence_nll;  // unweighted, summed over target tokens
  std::size_t target_tokens = 0;
};

struct TokenAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double nll = 0.0;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  double mean_nll() const { return total ? nll / static_cast<double>(total) : 0.0; }
};

class Transformer {
 public:
  explicit Transformer(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<Var>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  Var parameter(std::string_view name) const;

  const Var& source_embedding() const { return src_embed_; }
  const Var& target_embedding() const { return tgt_embed_; }
  // Same node as target_embedding() when embeddings are tied.
  const Var& output_projection() const { return out_proj_; }

  // Weighted per-token loss: sum_s w_s NLL_s / sum_s w_s |y_s|, where |y_s|
  // counts the end-of-sentence token. Dropout runs only when rng is given.
  ForwardResult forward_loss(const Batch& batch, std::span<const double> weights,
                             std::mt19937_64* dropout_rng = nullptr) const;
  // Decoder logits for every target position (rows follow the packed batch).
  Var logits(const Batch& batch) const;

  // Encoder output for one source sentence; no gradient is recorded.
  Var encode(std::span<const TokenId> source) const;
  // Log-probabilities of the next token for each prefix (BOS excluded) given
  // the encoded source; rows follow prefixes.
  Tensor next_token_log_probs(const Var& memory, std::span<const Sentence> prefixes) const;

  TokenAccuracy teacher_forced_accuracy(const ParallelCorpus& corpus,
                                        std::size_t chunk = 32) const;

 private:
  struct Segment {
    std::size_t offset;
    std::size_t length;
  };
  struct Norm {
    Var gain, bias;
  };
  struct Attention {
    Var wq, bq, wk, wv, bv, wo, bo;
  };
  struct FeedForward {
    Var w1, b1, w2, b2;
  };
  struct EncoderLayer {
    Norm ln1, ln2;
    Attention self;
    FeedForward ff;
  };
  struct DecoderLayer {
    Norm ln1, ln2, ln3;
    Attention self, cross;
    FeedForward ff;
  };
  struct Dropout {
    double rate = 0.0;
    std::mt19937_64* rng = nullptr;
  };

  Var add_param(const std::string& name, Tensor value);
  Norm make_norm(const std::string& prefix);
  Attention make_attention(const std::string& prefix, std::mt19937_64& rng);
  FeedForward make_ff(const std::string& prefix, std::mt19937_64& rng);

  Var embed(const Var& table, std::span<const TokenId> ids, const std::vector<Segment>& segs,
            Dropout drop) const;
  Var attend(const Var& xq, const Var& xkv, const Attention& w, const std::vector<Segment>& qs,
             const std::vector<Segment>& ks, bool causal) const;
  Var feed_forward(const Var& x, const FeedForward& w, Dropout drop) const;
  Var norm(const Var& x, const Norm& n) const;
  Var residual(const Var& x, const Norm& n, Dropout drop,
               const std::function<Var(const Var&)>& sublayer) const;
  Var run_encoder(std::span<const TokenId> ids, const std::vector<Segment>& segs,
                  Dropout drop) const;
  Var run_decoder(std::span<const TokenId> ids, const std::vector<Segment>& segs,
                  const Var& memory, const std::vector<Segment>& mem_segs, Dropout drop) const;
  Var project(const Var& hidden) const;

  struct Packed {
    std::vector<TokenId> src, tgt_in, tgt_out;
    std::vector<Segment> src_segs, tgt_segs;
  };
  Packed pack(const Batch& batch) const;
  Var decoder_logits(const Packed& p, Dropout drop) const;

  ModelConfig config_;
  std::vector<Var> params_;
  std::vector<std::string> names_;
  Var src_embed_, tgt_embed_, out_proj_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  Norm enc_final_, dec_final_;
  Tensor positions_;
};

struct OptimizerConfig {
  std::uint64_t warmup = 4000;
  double peak_lr = 3e-4;
  AdamConfig adam;

  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

struct StepMetrics {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double m_t = 0.0;
};

// Model + optimizer + step counter. m0 is taken from the freshly initialised
// source embedding and only ever restored from a checkpoint afterwards.
class Trainer {
 public:
  Trainer(const ModelConfig& model, const OptimizerConfig& optimizer,
          MatrixNorm norm_kind = MatrixNorm::row_sum, std::uint64_t norm_interval = 1);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) = default;
  Trainer& operator=(Trainer&&) = default;

  // One forward/backward/Adam update; every norm_interval steps m_t is raised
  // to the current embedding norm if that is larger, so m_t never decreases.
  // Throws TrainingAborted on a non-finite loss.
  StepMetrics train_step(const Batch& batch, std::span<const double> weights);

  const Transformer& model() const { return model_; }
  Transformer& model() { return model_; }
  const OptimizerConfig& optimizer_config() const { return opt_config_; }
  const Adam& optimizer() const { return adam_; }
  Adam& optimizer() { return adam_; }
  std::uint64_t step() const { return step_; }
  double m0() const { return m0_; }
  double m_t() const { return m_t_; }
  MatrixNorm norm_kind() const { return norm_kind_; }
  std::uint64_t norm_interval() const { return norm_interval_; }
  std::mt19937_64& dropout_rng() { return dropout_rng_; }
  const std::mt19937_64& dropout_rng() const { return dropout_rng_; }

  // The source embedding norm right now, without the running maximum.
  double current_embedding_norm() const;

 private:
  friend struct CheckpointIo;

  Transformer model_;
  OptimizerConfig opt_config_;
  Adam adam_;
  MatrixNorm norm_kind_;
  std::uint64_t norm_interval_;
  std::uint64_t step_ = 0;
  double m0_ = 0.0;
  double m_t_ = 0.0;
  std::mt19937_64 dropout_rng_;
};

inline constexpr char kCheckpointMagic[8] = {'N', 'O', 'R', 'M', 'C', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, u64 length + UTF-8 JSON (config, scalar state,
// caller metadata), u64 tensor count, then per tensor: u64 name length,
// name, u64 rank, u64 dims, f64 data. All integers and floats little-endian.
void save_checkpoint(const Trainer& trainer, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  Trainer trainer;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace normcl
