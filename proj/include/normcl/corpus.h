// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace normcl {

using TokenId = std::int32_t;
using Sentence = std::vector<TokenId>;

// Reserved ids, in this order, at the head of every vocabulary.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline constexpr std::string_view kEndOfWord = "</w>";

// Splits on whitespace after isolating every ASCII punctuation character as
// its own token. Non-ASCII bytes are left untouched.
std::vector<std::string> tokenize(std::string_view line);
std::vector<std::string> split_whitespace(std::string_view line);
std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

// Reads a UTF-8 text file into lines (trailing '\r' stripped).
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

class Vocabulary {
 public:
  struct Entry {
    std::string token;
    TokenId id;
    std::uint64_t count;
  };

  // Counts whitespace-separated tokens. Tokens seen fewer than min_count times
  // are left out and their occurrences credited to the unknown entry.
  // Ordering after the specials: descending count, then lexicographic.
  static Vocabulary build(std::span<const std::string> lines, int min_count);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  const std::string& token(TokenId id) const;
  std::uint64_t count(TokenId id) const;
  // Sum of counts over all entries, i.e. the corpus token total.
  std::uint64_t total_count() const { return total_; }
  TokenId id_of(std::string_view token) const;
  bool contains(std::string_view token) const;

  Sentence encode(std::string_view line) const;
  // Specials other than unknown are skipped.
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

 private:
  void index();

  std::vector<Entry> entries_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::uint64_t total_ = 0;
};

// Byte-pair merges learned greedily from word frequencies.
class MergeTable {
 public:
  using Pair = std::pair<std::string, std::string>;

  MergeTable() = default;
  explicit MergeTable(std::vector<Pair> merges);

  // Each step merges the most frequent adjacent symbol pair; ties go to the
  // lexicographically smallest pair. Stops early when no pair occurs twice.
  static MergeTable learn(std::span<const std::string> lines, int n_merges);
  static MergeTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<Pair>& merges() const { return merges_; }

  // Symbols of one word; the last symbol carries the end-of-word marker.
  std::vector<std::string> segment_word(std::string_view word) const;
  // Segments a whitespace-tokenized line into space-separated subwords.
  std::string apply(std::string_view line) const;

 private:
  std::vector<Pair> merges_;
  std::unordered_map<std::string, std::size_t> rank_;
};

// Concatenates subwords and turns end-of-word markers back into spaces.
std::string join_subwords(std::span<const std::string> subwords);

// UTF-8 code points of a word, each as its own string.
std::vector<std::string> utf8_chars(std::string_view word);

struct SentencePair {
  std::size_t id = 0;
  Sentence source;
  Sentence target;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  const SentencePair& operator[](std::size_t i) const { return pairs[i]; }
};

// Lines are subword-segmented text. Pairs with an empty side or a side longer
// than max_len are dropped; survivors keep file order and get ids 0..M-1.
ParallelCorpus load_parallel(const std::filesystem::path& source_file,
                             const std::filesystem::path& target_file,
                             const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                             std::size_t max_len = 200);
ParallelCorpus make_parallel(std::span<const std::string> source_lines,
                             std::span<const std::string> target_lines,
                             const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                             std::size_t max_len = 200);

// Token-budget batch drawn uniformly from `pool` (indices into `corpus`):
// draws without replacement inside the batch until the next draw would push
// the source or target token count past `token_budget`. Always returns at
// least one pair. Throws ConfigError if no pooled pair fits the budget.
std::vector<std::size_t> draw_batch(std::span<const std::size_t> pool,
                                    const ParallelCorpus& corpus, std::size_t token_budget,
                                    std::mt19937_64& rng);

}  // namespace normcl
