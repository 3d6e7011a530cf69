#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cvrt {

// Subword vocabulary induction and greedy tokenization.
//
// Pre-tokenization lowercases ASCII letters and splits text into words at
// letter/digit/punctuation transitions: maximal letter runs and digit runs
// are words, every punctuation character is its own word. Non-ASCII
// codepoints count as letters unless they fall in the common punctuation or
// whitespace blocks. Invalid UTF-8 bytes are carried through as single
// characters so tokenization never fails.

struct VocabConfig {
  int min_frequency = 250;
  int max_subword_chars = 20;      // in UTF-8 characters, not bytes
  int max_consecutive_digits = 4;
  int iterations = 4;
  int oov_buckets = 1000;
};

struct SubwordVocab {
  std::vector<std::string> subwords;  // line order; id = index
  std::unordered_map<std::string, int> index;
  int oov_buckets = 1000;
  int longest_chars = 1;  // matching cap, maintained by finalize()

  int size() const { return static_cast<int>(subwords.size()); }
  int total_ids() const { return size() + oov_buckets; }
  void finalize();  // rebuilds index and longest_chars from subwords
};

inline constexpr int kMaxSeqLen = 60;

// FNV-1a over the UTF-8 bytes; OOV bucket = size + (hash mod oov_buckets).
uint64_t fnv1a64(std::string_view bytes);

std::vector<std::string> pre_tokenize(std::string_view text);

// Iterative frequency-thresholded wordpiece induction. Throws
// std::invalid_argument on bad config and std::runtime_error on an empty
// corpus.
SubwordVocab build_vocab(std::istream& corpus, const VocabConfig& cfg);

// Greedy longest-prefix matching per word; characters with no vocabulary
// prefix hash into the OOV buckets one at a time. Result truncated to
// max_seq_len ids (the first ones are kept).
std::vector<int> tokenize(std::string_view text, const SubwordVocab& vocab,
                          int max_seq_len = kMaxSeqLen);

void save_vocab(const SubwordVocab& vocab, const std::string& path);
SubwordVocab load_vocab(const std::string& path);  // throws on malformed files

}  // namespace cvrt
