// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/corpus.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "normcl/errors.h"

namespace normcl {

namespace {

constexpr std::string_view kSpecialTokens[kNumSpecials] = {"<pad>", "<unk>", "<s>", "</s>"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 128 && std::ispunct(u);
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view line) {
  std::string spaced;
  spaced.reserve(line.size() * 2);
  for (char c : line) {
    if (is_ascii_punct(c)) {
      spaced.push_back(' ');
      spaced.push_back(c);
      spaced.push_back(' ');
    } else {
      spaced.push_back(c);
    }
  }
  return split_whitespace(spaced);
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

// ---------------------------------------------------------------- Vocabulary

Vocabulary Vocabulary::build(std::span<const std::string> lines, int min_count) {
  if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
  std::unordered_map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& line : lines) {
    for (auto& tok : split_whitespace(line)) {
      ++counts[std::move(tok)];
      ++total;
    }
  }
  if (total == 0) throw IngestionError("build_vocab: empty token stream");

  std::vector<std::pair<std::string, std::uint64_t>> kept;
  std::uint64_t unknown = 0;
  for (auto& [tok, c] : counts) {
    if (c >= static_cast<std::uint64_t>(min_count)) kept.emplace_back(tok, c);
    else unknown += c;
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  Vocabulary v;
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    v.entries_.push_back({std::string(kSpecialTokens[i]), static_cast<TokenId>(i),
                          i == static_cast<std::size_t>(kUnkId) ? unknown : 0});
  }
  for (auto& [tok, c] : kept) {
    v.entries_.push_back({tok, static_cast<TokenId>(v.entries_.size()), c});
  }
  v.index();
  return v;
}

void Vocabulary::index() {
  lookup_.clear();
  total_ = 0;
  for (const auto& e : entries_) {
    lookup_.emplace(e.token, e.id);
    total_ += e.count;
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw LoadError("malformed vocabulary line: " + line);
    Entry e;
    e.token = line.substr(0, t1);
    try {
      e.id = static_cast<TokenId>(std::stol(line.substr(t1 + 1, t2 - t1 - 1)));
      e.count = std::stoull(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw LoadError("malformed vocabulary line: " + line);
    }
    if (e.id != static_cast<TokenId>(v.entries_.size())) {
      throw LoadError("vocabulary ids must be contiguous from 0: " + line);
    }
    v.entries_.push_back(std::move(e));
  }
  if (v.entries_.size() < kNumSpecials) throw LoadError("vocabulary lacks special tokens");
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (v.entries_[i].token != kSpecialTokens[i]) {
      throw LoadError("vocabulary special token mismatch at id " + std::to_string(i));
    }
  }
  v.index();
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& e : entries_) out << e.token << '\t' << e.id << '\t' << e.count << '\n';
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return entries_[static_cast<std::size_t>(id)].token;
}

std::uint64_t Vocabulary::count(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return entries_[static_cast<std::size_t>(id)].count;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  return it == lookup_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return lookup_.count(std::string(token)) > 0;
}

Sentence Vocabulary::encode(std::string_view line) const {
  Sentence out;
  for (const auto& tok : split_whitespace(line)) out.push_back(id_of(tok));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---------------------------------------------------------------- merges

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

std::vector<std::string> initial_symbols(std::string_view word) {
  auto syms = utf8_chars(word);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

void merge_pair(std::vector<std::string>& syms, const std::string& a, const std::string& b) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (std::size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(std::move(syms[i]));
    }
  }
  syms = std::move(out);
}

}  // namespace

MergeTable::MergeTable(std::vector<Pair> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    rank_.emplace(merges_[i].first + '\x1f' + merges_[i].second, i);
  }
}

MergeTable MergeTable::learn(std::span<const std::string> lines, int n_merges) {
  if (n_merges < 0) throw ConfigError("learn_merges: n_merges must be >= 0");
  std::map<std::string, std::uint64_t> word_counts;
  for (const auto& line : lines)
    for (auto& w : split_whitespace(line)) ++word_counts[std::move(w)];
  if (word_counts.empty()) throw IngestionError("learn_merges: empty token stream");

  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  words.reserve(word_counts.size());
  for (const auto& [w, c] : word_counts) words.emplace_back(initial_symbols(w), c);

  std::vector<Pair> merges;
  for (int step = 0; step < n_merges; ++step) {
    std::map<Pair, std::uint64_t> pair_counts;
    for (const auto& [syms, c] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pair_counts[{syms[i], syms[i + 1]}] += c;
    const Pair* best = nullptr;
    std::uint64_t best_count = 0;
    for (const auto& [p, c] : pair_counts) {
      if (c > best_count) {
        best = &p;
        best_count = c;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const Pair chosen = *best;
    for (auto& [syms, c] : words) merge_pair(syms, chosen.first, chosen.second);
    merges.push_back(chosen);
  }
  return MergeTable(std::move(merges));
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
  std::vector<Pair> merges;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto parts = split_whitespace(line);
    if (parts.size() != 2) throw LoadError("malformed merge rule: " + line);
    merges.emplace_back(std::move(parts[0]), std::move(parts[1]));
  }
  return MergeTable(std::move(merges));
}

void MergeTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
}

std::vector<std::string> MergeTable::segment_word(std::string_view word) const {
  auto syms = initial_symbols(word);
  while (syms.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = rank_.find(syms[i] + '\x1f' + syms[i + 1]);
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_at = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const std::string a = syms[best_at], b = syms[best_at + 1];
    merge_pair(syms, a, b);
  }
  return syms;
}

std::string MergeTable::apply(std::string_view line) const {
  std::vector<std::string> out;
  for (const auto& w : split_whitespace(line))
    for (auto& s : segment_word(w)) out.push_back(std::move(s));
  return join(out);
}

std::string join_subwords(std::span<const std::string> subwords) {
  std::string text;
  for (const auto& s : subwords) text += s;
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto hit = text.find(kEndOfWord, pos);
    if (hit == std::string::npos) {
      out += text.substr(pos);
      break;
    }
    out += text.substr(pos, hit - pos);
    out += ' ';
    pos = hit + kEndOfWord.size();
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// ---------------------------------------------------------------- parallel data

ParallelCorpus make_parallel(std::span<const std::string> source_lines,
                             std::span<const std::string> target_lines,
                             const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                             std::size_t max_len) {
  if (source_lines.size() != target_lines.size()) {
    throw AlignmentError("parallel files differ in line count: " +
                         std::to_string(source_lines.size()) + " vs " +
                         std::to_string(target_lines.size()));
  }
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    Sentence src = source_vocab.encode(source_lines[i]);
    Sentence tgt = target_vocab.encode(target_lines[i]);
    if (src.empty() || tgt.empty() || src.size() > max_len || tgt.size() > max_len) continue;
    corpus.pairs.push_back({corpus.pairs.size(), std::move(src), std::move(tgt)});
  }
  if (corpus.pairs.empty()) throw EmptyCorpusError("no sentence pair survived filtering");
  return corpus;
}

ParallelCorpus load_parallel(const std::filesystem::path& source_file,
                             const std::filesystem::path& target_file,
                             const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                             std::size_t max_len) {
  const auto src = read_lines(source_file);
  const auto tgt = read_lines(target_file);
  return make_parallel(src, tgt, source_vocab, target_vocab, max_len);
}

std::vector<std::size_t> draw_batch(std::span<const std::size_t> pool,
                                    const ParallelCorpus& corpus, std::size_t token_budget,
                                    std::mt19937_64& rng) {
  if (pool.empty()) throw ContractViolation("draw_batch: empty pool");
  auto fits = [&](std::size_t id, std::size_t src, std::size_t tgt) {
    const auto& p = corpus.pairs[id];
    return src + p.source.size() <= token_budget && tgt + p.target.size() <= token_budget;
  };
  if (std::none_of(pool.begin(), pool.end(), [&](std::size_t id) { return fits(id, 0, 0); })) {
    throw ConfigError("token_budget " + std::to_string(token_budget) +
                      " is smaller than the shortest eligible pair");
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> batch;
  std::vector<bool> taken(pool.size(), false);
  std::size_t src_tokens = 0, tgt_tokens = 0;
  while (batch.size() < pool.size()) {
    const std::size_t k = pick(rng);
    if (taken[k]) continue;
    const std::size_t id = pool[k];
    if (!fits(id, src_tokens, tgt_tokens)) {
      if (batch.empty()) continue;
      break;
    }
    taken[k] = true;
    batch.push_back(id);
    src_tokens += corpus.pairs[id].source.size();
    tgt_tokens += corpus.pairs[id].target.size();
  }
  return batch;
}

}  // namespace normcl
