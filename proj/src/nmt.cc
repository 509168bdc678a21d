// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/nmt.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "normcl/errors.h"

namespace normcl {

// ---------------------------------------------------------------- configs

void ModelConfig::validate() const {
  if (source_vocab < kNumSpecials + 1 || target_vocab < kNumSpecials + 1) {
    throw ConfigError("model: vocabularies must hold at least one non-special token");
  }
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_positions == 0) {
    throw ConfigError("model: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ConfigError("model: label_smoothing must lie in [0, 1)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"source_vocab", source_vocab}, {"target_vocab", target_vocab},
          {"d_model", d_model},           {"n_heads", n_heads},
          {"n_layers", n_layers},         {"d_ff", d_ff},
          {"dropout", dropout},           {"max_positions", max_positions},
          {"tie_target_embeddings", tie_target_embeddings},
          {"pre_norm", pre_norm},         {"label_smoothing", label_smoothing},
          {"scale_embeddings", scale_embeddings},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.source_vocab = j.value("source_vocab", c.source_vocab);
  c.target_vocab = j.value("target_vocab", c.target_vocab);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.tie_target_embeddings = j.value("tie_target_embeddings", c.tie_target_embeddings);
  c.pre_norm = j.value("pre_norm", c.pre_norm);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.scale_embeddings = j.value("scale_embeddings", c.scale_embeddings);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"warmup", warmup},       {"peak_lr", peak_lr}, {"beta1", adam.beta1},
          {"beta2", adam.beta2},    {"eps", adam.eps}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.warmup = j.value("warmup", c.warmup);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("eps", c.adam.eps);
  if (c.warmup < 1) throw ConfigError("optimizer: warmup must be >= 1");
  if (!(c.peak_lr > 0.0)) throw ConfigError("optimizer: peak_lr must be > 0");
  return c;
}

Batch make_batch(const ParallelCorpus& corpus, std::span<const std::size_t> ids) {
  Batch b;
  for (auto id : ids) {
    if (id >= corpus.size()) throw IndexError("make_batch: sentence id out of range");
    b.ids.push_back(id);
    b.source.push_back(corpus[id].source);
    b.target.push_back(corpus[id].target);
  }
  return b;
}

// ---------------------------------------------------------------- model

namespace {

Tensor sinusoid_table(std::size_t positions, std::size_t d) {
  Tensor t(positions, d);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      t(p, i) = std::sin(static_cast<double>(p) * freq);
      if (i + 1 < d) t(p, i + 1) = std::cos(static_cast<double>(p) * freq);
    }
  }
  return t;
}

Tensor uniform_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Tensor normal_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

Sentence strip_pad(std::span<const TokenId> s) {
  Sentence out;
  for (TokenId id : s)
    if (id != kPadId) out.push_back(id);
  return out;
}

}  // namespace

Var Transformer::add_param(const std::string& name, Tensor value) {
  Var v = normcl::parameter(std::move(value));
  params_.push_back(v);
  names_.push_back(name);
  return v;
}

Transformer::Norm Transformer::make_norm(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  return {add_param(prefix + ".gain", Tensor(1, d, 1.0)), add_param(prefix + ".bias", Tensor(1, d))};
}

Transformer::Attention Transformer::make_attention(const std::string& prefix,
                                                   std::mt19937_64& rng) {
  const std::size_t d = config_.d_model;
  Attention a;
  a.wq = add_param(prefix + ".wq", uniform_init(d, d, rng));
  a.bq = add_param(prefix + ".bq", Tensor(1, d));
  a.wk = add_param(prefix + ".wk", uniform_init(d, d, rng));
  a.wv = add_param(prefix + ".wv", uniform_init(d, d, rng));
  a.bv = add_param(prefix + ".bv", Tensor(1, d));
  a.wo = add_param(prefix + ".wo", uniform_init(d, d, rng));
  a.bo = add_param(prefix + ".bo", Tensor(1, d));
  return a;
}

Transformer::FeedForward Transformer::make_ff(const std::string& prefix, std::mt19937_64& rng) {
  const std::size_t d = config_.d_model, f = config_.d_ff;
  FeedForward ff;
  ff.w1 = add_param(prefix + ".w1", uniform_init(d, f, rng));
  ff.b1 = add_param(prefix + ".b1", Tensor(1, f));
  ff.w2 = add_param(prefix + ".w2", uniform_init(f, d, rng));
  ff.b2 = add_param(prefix + ".b2", Tensor(1, d));
  return ff;
}

Transformer::Transformer(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.d_model;
  src_embed_ = add_param("src_embed", normal_init(config_.source_vocab, d, rng));
  tgt_embed_ = add_param("tgt_embed", normal_init(config_.target_vocab, d, rng));
  out_proj_ = config_.tie_target_embeddings
                  ? tgt_embed_
                  : add_param("out_proj", uniform_init(config_.target_vocab, d, rng));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = make_norm(p + ".ln1");
    layer.self = make_attention(p + ".self", rng);
    layer.ln2 = make_norm(p + ".ln2");
    layer.ff = make_ff(p + ".ff", rng);
    enc_.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = make_norm(p + ".ln1");
    layer.self = make_attention(p + ".self", rng);
    layer.ln2 = make_norm(p + ".ln2");
    layer.cross = make_attention(p + ".cross", rng);
    layer.ln3 = make_norm(p + ".ln3");
    layer.ff = make_ff(p + ".ff", rng);
    dec_.push_back(std::move(layer));
  }
  if (config_.pre_norm) {
    enc_final_ = make_norm("enc.final");
    dec_final_ = make_norm("dec.final");
  }
  positions_ = sinusoid_table(config_.max_positions, d);
}

Var Transformer::parameter(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return params_[i];
  throw IndexError("no parameter named " + std::string(name));
}

namespace {

Var dropout(const Var& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(x->value.rows(), x->value.cols());
  const double scale_kept = 1.0 / (1.0 - rate);
  for (auto& v : mask.values()) v = keep(*rng) ? scale_kept : 0.0;
  return multiply(x, constant(std::move(mask)));
}

Var causal_mask(std::size_t n) {
  Tensor m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = -1e9;
  return constant(std::move(m));
}

}  // namespace

Var Transformer::embed(const Var& table, std::span<const TokenId> ids,
                       const std::vector<Segment>& segs, Dropout drop) const {
  const std::size_t d = config_.d_model;
  Tensor pos(ids.size(), d);
  for (const auto& s : segs) {
    if (s.length > config_.max_positions) {
      throw ContractViolation("sequence of length " + std::to_string(s.length) +
                              " exceeds max_positions " + std::to_string(config_.max_positions));
    }
    for (std::size_t i = 0; i < s.length; ++i) {
      auto src = positions_.row(i);
      std::copy(src.begin(), src.end(), pos.row(s.offset + i).begin());
    }
  }
  Var x = embedding_lookup(table, ids);
  if (config_.scale_embeddings) x = scale(x, std::sqrt(static_cast<double>(d)));
  x = add(x, constant(std::move(pos)));
  return dropout(x, drop.rate, drop.rng);
}

Var Transformer::attend(const Var& xq, const Var& xkv, const Attention& w,
                        const std::vector<Segment>& qs, const std::vector<Segment>& ks,
                        bool causal) const {
  const std::size_t d = config_.d_model;
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = add(matmul(xq, w.wq), w.bq);
  Var k = matmul(xkv, w.wk);
  Var v = add(matmul(xkv, w.wv), w.bv);

  std::vector<Var> per_sentence;
  per_sentence.reserve(qs.size());
  for (std::size_t s = 0; s < qs.size(); ++s) {
    const auto [qo, ql] = qs[s];
    const auto [ko, kl] = ks[s];
    Var qsent = slice(q, qo, qo + ql, 0, d);
    Var ktrans = transpose(slice(k, ko, ko + kl, 0, d));
    Var vsent = slice(v, ko, ko + kl, 0, d);
    Var mask = causal ? causal_mask(ql) : nullptr;
    std::vector<Var> per_head;
    per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = heads == 1 ? qsent : slice(qsent, 0, ql, h * dh, (h + 1) * dh);
      Var kh = heads == 1 ? ktrans : slice(ktrans, h * dh, (h + 1) * dh, 0, kl);
      Var vh = heads == 1 ? vsent : slice(vsent, 0, kl, h * dh, (h + 1) * dh);
      Var scores = scale(matmul(qh, kh), inv);
      if (causal) scores = add(scores, mask);
      per_head.push_back(matmul(softmax_rows(scores), vh));
    }
    per_sentence.push_back(heads == 1 ? per_head.front() : concat(per_head, 1));
  }
  Var out = per_sentence.size() == 1 ? per_sentence.front() : concat(per_sentence, 0);
  return add(matmul(out, w.wo), w.bo);
}

Var Transformer::feed_forward(const Var& x, const FeedForward& w, Dropout drop) const {
  Var h = relu(add(matmul(x, w.w1), w.b1));
  h = dropout(h, drop.rate, drop.rng);
  return add(matmul(h, w.w2), w.b2);
}

Var Transformer::norm(const Var& x, const Norm& n) const {
  return layer_norm(x, n.gain, n.bias);
}

Var Transformer::residual(const Var& x, const Norm& n, Dropout drop,
                          const std::function<Var(const Var&)>& sublayer) const {
  if (config_.pre_norm) {
    return add(x, dropout(sublayer(norm(x, n)), drop.rate, drop.rng));
  }
  return norm(add(x, dropout(sublayer(x), drop.rate, drop.rng)), n);
}

Var Transformer::run_encoder(std::span<const TokenId> ids, const std::vector<Segment>& segs,
                             Dropout drop) const {
  Var x = embed(src_embed_, ids, segs, drop);
  for (const auto& layer : enc_) {
    x = residual(x, layer.ln1, drop,
                 [&](const Var& h) { return attend(h, h, layer.self, segs, segs, false); });
    x = residual(x, layer.ln2, drop, [&](const Var& h) { return feed_forward(h, layer.ff, drop); });
  }
  return config_.pre_norm ? norm(x, enc_final_) : x;
}

Var Transformer::run_decoder(std::span<const TokenId> ids, const std::vector<Segment>& segs,
                             const Var& memory, const std::vector<Segment>& mem_segs,
                             Dropout drop) const {
  Var y = embed(tgt_embed_, ids, segs, drop);
  for (const auto& layer : dec_) {
    y = residual(y, layer.ln1, drop,
                 [&](const Var& h) { return attend(h, h, layer.self, segs, segs, true); });
    y = residual(y, layer.ln2, drop, [&](const Var& h) {
      return attend(h, memory, layer.cross, segs, mem_segs, false);
    });
    y = residual(y, layer.ln3, drop, [&](const Var& h) { return feed_forward(h, layer.ff, drop); });
  }
  return config_.pre_norm ? norm(y, dec_final_) : y;
}

Var Transformer::project(const Var& hidden) const {
  return matmul(hidden, transpose(out_proj_));
}

Transformer::Packed Transformer::pack(const Batch& batch) const {
  if (batch.source.size() != batch.target.size() || batch.source.empty()) {
    throw ContractViolation("batch must hold at least one aligned sentence pair");
  }
  Packed p;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Sentence src = strip_pad(batch.source[s]);
    const Sentence tgt = strip_pad(batch.target[s]);
    if (src.empty()) throw ContractViolation("batch holds an empty source sentence");
    p.src_segs.push_back({p.src.size(), src.size()});
    p.src.insert(p.src.end(), src.begin(), src.end());
    p.tgt_segs.push_back({p.tgt_in.size(), tgt.size() + 1});
    p.tgt_in.push_back(kBosId);
    p.tgt_in.insert(p.tgt_in.end(), tgt.begin(), tgt.end());
    p.tgt_out.insert(p.tgt_out.end(), tgt.begin(), tgt.end());
    p.tgt_out.push_back(kEosId);
  }
  return p;
}

Var Transformer::decoder_logits(const Packed& p, Dropout drop) const {
  Var memory = run_encoder(p.src, p.src_segs, drop);
  Var hidden = run_decoder(p.tgt_in, p.tgt_segs, memory, p.src_segs, drop);
  return project(hidden);
}

Var Transformer::logits(const Batch& batch) const { return decoder_logits(pack(batch), {}); }

ForwardResult Transformer::forward_loss(const Batch& batch, std::span<const double> weights,
                                        std::mt19937_64* dropout_rng) const {
  if (weights.size() != batch.size()) {
    throw ContractViolation("forward_loss: " + std::to_string(weights.size()) + " weights for " +
                            std::to_string(batch.size()) + " sentences");
  }
  for (double w : weights)
    if (!(w > 0.0)) throw ContractViolation("forward_loss: sentence weights must be > 0");
  const Packed p = pack(batch);
  if (p.tgt_out.empty()) throw ContractViolation("forward_loss: batch has no target tokens");

  Var logits = decoder_logits(p, {config_.dropout, dropout_rng});
  Var nll = cross_entropy_rows(logits, p.tgt_out, config_.label_smoothing);

  double denom = 0.0;
  for (std::size_t s = 0; s < p.tgt_segs.size(); ++s)
    denom += weights[s] * static_cast<double>(p.tgt_segs[s].length);
  Tensor row_weights(p.tgt_out.size(), 1);
  ForwardResult r;
  r.sentence_nll.assign(p.tgt_segs.size(), 0.0);
  for (std::size_t s = 0; s < p.tgt_segs.size(); ++s) {
    const auto [off, len] = p.tgt_segs[s];
    for (std::size_t i = off; i < off + len; ++i) {
      row_weights(i, 0) = weights[s] / denom;
      r.sentence_nll[s] += nll->value(i, 0);
    }
  }
  r.loss = sum(multiply(nll, constant(std::move(row_weights))));
  r.target_tokens = p.tgt_out.size();
  return r;
}

Var Transformer::encode(std::span<const TokenId> source) const {
  NoGradGuard guard;
  const Sentence src = strip_pad(source);
  if (src.empty()) throw ContractViolation("encode: empty source sentence");
  return run_encoder(src, {{0, src.size()}}, {});
}

Tensor Transformer::next_token_log_probs(const Var& memory,
                                         std::span<const Sentence> prefixes) const {
  NoGradGuard guard;
  if (prefixes.empty()) return Tensor(0, config_.target_vocab);
  std::vector<TokenId> ids;
  std::vector<Segment> segs, mem_segs;
  const std::size_t mem_len = memory->value.rows();
  for (const auto& prefix : prefixes) {
    segs.push_back({ids.size(), prefix.size() + 1});
    mem_segs.push_back({0, mem_len});
    ids.push_back(kBosId);
    ids.insert(ids.end(), prefix.begin(), prefix.end());
  }
  Var hidden = run_decoder(ids, segs, memory, mem_segs, {});
  std::vector<Var> last;
  for (const auto& s : segs) {
    const std::size_t r = s.offset + s.length - 1;
    last.push_back(slice(hidden, r, r + 1, 0, config_.d_model));
  }
  Tensor out = project(last.size() == 1 ? last.front() : concat(last, 0))->value;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : row) v -= lse;
  }
  return out;
}

TokenAccuracy Transformer::teacher_forced_accuracy(const ParallelCorpus& corpus,
                                                   std::size_t chunk) const {
  NoGradGuard guard;
  TokenAccuracy acc;
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < corpus.size(); begin += chunk) {
    std::vector<std::size_t> ids;
    for (std::size_t i = begin; i < std::min(corpus.size(), begin + chunk); ++i) ids.push_back(i);
    const Packed p = pack(make_batch(corpus, ids));
    const Tensor lg = decoder_logits(p, {})->value;
    for (std::size_t r = 0; r < lg.rows(); ++r) {
      auto row = lg.row(r);
      const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      const double mx = row[static_cast<std::size_t>(best)];
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      acc.nll += mx + std::log(z) - row[static_cast<std::size_t>(p.tgt_out[r])];
      acc.correct += best == p.tgt_out[r] ? 1 : 0;
      ++acc.total;
    }
  }
  return acc;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const ModelConfig& model, const OptimizerConfig& optimizer, MatrixNorm norm_kind,
                 std::uint64_t norm_interval)
    : model_(model),
      opt_config_(optimizer),
      adam_(model_.parameters(), optimizer.adam),
      norm_kind_(norm_kind),
      norm_interval_(norm_interval),
      dropout_rng_(model.seed * 0x9E3779B97F4A7C15ULL + 17) {
  if (norm_interval_ == 0) throw ConfigError("trainer: norm interval must be >= 1");
  m0_ = m_t_ = current_embedding_norm();
}

double Trainer::current_embedding_norm() const {
  return embedding_matrix_norm(model_.source_embedding()->value, norm_kind_);
}

StepMetrics Trainer::train_step(const Batch& batch, std::span<const double> weights) {
  if (batch.size() == 0) throw ContractViolation("train_step: empty batch");
  adam_.zero_grad();
  ForwardResult fr = model_.forward_loss(batch, weights, &dropout_rng_);
  const double loss = fr.loss->value[0];
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss " << loss << " at step " << (step_ + 1) << "; batch ids:";
    for (auto id : batch.ids) os << ' ' << id;
    throw TrainingAborted(os.str());
  }
  backward(fr.loss);
  ++step_;
  const double lr = lr_schedule(step_, opt_config_.warmup, opt_config_.peak_lr);
  try {
    adam_.step(lr);
  } catch (const TrainingAborted& e) {
    std::ostringstream os;
    os << e.what() << "; batch ids:";
    for (auto id : batch.ids) os << ' ' << id;
    throw TrainingAborted(os.str());
  }
  if (step_ % norm_interval_ == 0) m_t_ = std::max(m_t_, current_embedding_norm());
  return {step_, loss, lr, m_t_};
}

// ---------------------------------------------------------------- checkpoints

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put_u64(out, name.size());
  out += name;
  put_u64(out, t.rank());
  for (auto d : t.shape()) put_u64(out, d);
  for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor(std::string& name) {
    name = bytes(u64());
    const std::uint64_t rank = u64();
    if (rank > 8) throw LoadError("checkpoint: implausible tensor rank for " + name);
    std::vector<std::size_t> shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = u64();
      n *= d;
    }
    if (n > (data_.size() - pos_) / 8) throw LoadError("checkpoint truncated in tensor " + name);
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(u64());
    return Tensor(std::move(shape), std::move(values));
  }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw LoadError("checkpoint truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

struct CheckpointIo {
  static void save(const Trainer& t, const std::filesystem::path& path,
                   const nlohmann::json& metadata) {
    std::ostringstream rng;
    rng << t.dropout_rng_;
    nlohmann::json header = {
        {"model", t.model_.config().to_json()},
        {"optimizer", t.opt_config_.to_json()},
        {"norm_kind", std::string(to_string(t.norm_kind_))},
        {"norm_interval", t.norm_interval_},
        {"state", {{"step", t.step_}, {"adam_steps", t.adam_.steps()}, {"dropout_rng", rng.str()}}},
        {"metadata", metadata}};
    const std::string json = header.dump();

    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    put_u64(out, json.size());
    out += json;

    const auto& names = t.model_.parameter_names();
    const auto& params = t.model_.parameters();
    put_u64(out, 3 * params.size() + 2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_tensor(out, "param/" + names[i], params[i]->value);
      put_tensor(out, "adam_m/" + names[i], t.adam_.first_moments()[i]);
      put_tensor(out, "adam_v/" + names[i], t.adam_.second_moments()[i]);
    }
    put_tensor(out, "state/m0", Tensor(1, 1, t.m0_));
    put_tensor(out, "state/m_t", Tensor(1, 1, t.m_t_));

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream f(tmp, std::ios::binary);
      if (!f) throw IngestionError("cannot write checkpoint " + tmp.string());
      f.write(out.data(), static_cast<std::streamsize>(out.size()));
      if (!f) throw IngestionError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static LoadedCheckpoint load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open checkpoint " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(std::move(data));
    if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
      throw LoadError("not a checkpoint (bad magic): " + path.string());
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
      throw LoadError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(r.bytes(r.u64()));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    Trainer t(ModelConfig::from_json(header.at("model")),
              OptimizerConfig::from_json(header.at("optimizer")),
              parse_matrix_norm(header.at("norm_kind").get<std::string>()),
              header.at("norm_interval").get<std::uint64_t>());

    std::unordered_map<std::string, Tensor> tensors;
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string name;
      Tensor value = r.tensor(name);
      tensors.emplace(std::move(name), std::move(value));
    }
    auto take = [&](const std::string& name, const Tensor& like) -> Tensor {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw LoadError("checkpoint lacks tensor " + name);
      if (!it->second.same_shape(like)) {
        throw LoadError("checkpoint tensor " + name + " has shape " + it->second.shape_string() +
                        ", expected " + like.shape_string());
      }
      return std::move(it->second);
    };
    const auto& names = t.model_.parameter_names();
    const auto& params = t.model_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->value = take("param/" + names[i], params[i]->value);
      t.adam_.first_moments()[i] = take("adam_m/" + names[i], t.adam_.first_moments()[i]);
      t.adam_.second_moments()[i] = take("adam_v/" + names[i], t.adam_.second_moments()[i]);
    }
    t.m0_ = take("state/m0", Tensor(1, 1))[0];
    t.m_t_ = take("state/m_t", Tensor(1, 1))[0];
    const auto& state = header.at("state");
    t.step_ = state.at("step").get<std::uint64_t>();
    t.adam_.set_steps(state.at("adam_steps").get<std::uint64_t>());
    std::istringstream rng(state.at("dropout_rng").get<std::string>());
    rng >> t.dropout_rng_;
    if (!rng) throw LoadError("checkpoint has a malformed RNG state");
    return {std::move(t), header.value("metadata", nlohmann::json::object())};
  }
};

void save_checkpoint(const Trainer& trainer, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  CheckpointIo::save(trainer, path, metadata);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return CheckpointIo::load(path);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint header incomplete: ") + e.what());
  }
}

}  // namespace normcl
