#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cvrt/rng.hpp"
#include "cvrt/tokenizer.hpp"

using namespace cvrt;

namespace {

SubwordVocab make_vocab(std::vector<std::string> subwords, int oov_buckets = 1000) {
  SubwordVocab v;
  v.subwords = std::move(subwords);
  v.oov_buckets = oov_buckets;
  v.finalize();
  return v;
}

std::stringstream repeated_lines(const std::string& line, int n) {
  std::stringstream ss;
  for (int i = 0; i < n; ++i) ss << line << "\n";
  return ss;
}

bool vocab_has(const SubwordVocab& v, const std::string& s) {
  return v.index.count(s) > 0;
}

}  // namespace

TEST_CASE("pre_tokenize splits on class transitions") {
  CHECK(pre_tokenize("Hello, World!") ==
        std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(pre_tokenize("abc123def") == std::vector<std::string>{"abc", "123", "def"});
  CHECK(pre_tokenize("a--b") == std::vector<std::string>{"a", "-", "-", "b"});
  CHECK(pre_tokenize("  spaced\tout\n") == std::vector<std::string>{"spaced", "out"});
  CHECK(pre_tokenize("") == std::vector<std::string>{});
  CHECK(pre_tokenize("don't") == std::vector<std::string>{"don", "'", "t"});
}

TEST_CASE("pre_tokenize handles non-ASCII classes") {
  CHECK(pre_tokenize("naïve café") == std::vector<std::string>{"naïve", "café"});
  CHECK(pre_tokenize("«quoted»") == std::vector<std::string>{"«", "quoted", "»"});
  CHECK(pre_tokenize("你好。世界") == std::vector<std::string>{"你好", "。", "世界"});
  // Non-breaking space separates.
  CHECK(pre_tokenize("a b") == std::vector<std::string>{"a", "b"});
}

TEST_CASE("build_vocab retains frequent whole words") {
  auto corpus = repeated_lines("hello world", 10000);
  VocabConfig cfg;
  SubwordVocab v = build_vocab(corpus, cfg);
  CHECK(vocab_has(v, "hello"));
  CHECK(vocab_has(v, "world"));
  CHECK(tokenize("hello world", v) ==
        std::vector<int>{v.index.at("hello"), v.index.at("world")});
}

TEST_CASE("build_vocab respects the digit run limit") {
  auto corpus = repeated_lines("code 12345 end", 300);
  VocabConfig cfg;
  SubwordVocab v = build_vocab(corpus, cfg);
  CHECK_FALSE(vocab_has(v, "12345"));
  for (const std::string& s : v.subwords) {
    int run = 0, worst = 0;
    for (char c : s) {
      run = (c >= '0' && c <= '9') ? run + 1 : 0;
      worst = std::max(worst, run);
    }
    CHECK(worst <= cfg.max_consecutive_digits);
  }
  // The digit word still tokenizes in-vocabulary via shorter pieces.
  for (int id : tokenize("12345", v)) CHECK(id < v.size());
}

TEST_CASE("build_vocab threshold boundary") {
  {
    auto corpus = repeated_lines("a", 250);
    SubwordVocab v = build_vocab(corpus, VocabConfig{});
    CHECK(vocab_has(v, "a"));
  }
  {
    auto corpus = repeated_lines("a", 249);
    SubwordVocab v = build_vocab(corpus, VocabConfig{});
    CHECK_FALSE(vocab_has(v, "a"));
    CHECK(v.size() == 0);
  }
}

TEST_CASE("build_vocab keeps thresholded alphabet beside longer pieces") {
  auto corpus = repeated_lines("ab", 300);
  SubwordVocab v = build_vocab(corpus, VocabConfig{});
  CHECK(vocab_has(v, "ab"));
  CHECK(vocab_has(v, "a"));
  CHECK(vocab_has(v, "b"));
  CHECK(tokenize("ab", v) == std::vector<int>{v.index.at("ab")});
  CHECK(tokenize("ba", v) == std::vector<int>{v.index.at("b"), v.index.at("a")});
}

TEST_CASE("build_vocab enforces subword length limit") {
  auto corpus = repeated_lines("supercalifragilisticexpialidocious", 400);
  VocabConfig cfg;
  SubwordVocab v = build_vocab(corpus, cfg);
  for (const std::string& s : v.subwords) {
    size_t chars = 0;
    for (char c : s)
      if ((c & 0xc0) != 0x80) ++chars;
    CHECK(chars <= static_cast<size_t>(cfg.max_subword_chars));
  }
}

TEST_CASE("build_vocab rejects bad input") {
  std::stringstream empty;
  CHECK_THROWS_AS(build_vocab(empty, VocabConfig{}), std::runtime_error);
  std::stringstream blank("   \n \n");
  CHECK_THROWS_AS(build_vocab(blank, VocabConfig{}), std::runtime_error);
  auto corpus = repeated_lines("x", 10);
  VocabConfig bad;
  bad.min_frequency = 0;
  CHECK_THROWS_AS(build_vocab(corpus, bad), std::invalid_argument);
}

TEST_CASE("build_vocab is deterministic") {
  auto c1 = repeated_lines("the quick brown fox jumps over the lazy dog", 300);
  auto c2 = repeated_lines("the quick brown fox jumps over the lazy dog", 300);
  SubwordVocab v1 = build_vocab(c1, VocabConfig{});
  SubwordVocab v2 = build_vocab(c2, VocabConfig{});
  CHECK(v1.subwords == v2.subwords);
  CHECK(v1.size() > 0);
}

TEST_CASE("tokenize basics") {
  SubwordVocab v = make_vocab({"un", "believ", "able"});
  CHECK(tokenize("", v).empty());
  CHECK(tokenize("unbelievable", v) == std::vector<int>{0, 1, 2});
}

TEST_CASE("tokenize greedy longest prefix") {
  SubwordVocab v = make_vocab({"a", "ab", "abc", "b", "c", "d"});
  CHECK(tokenize("abcd", v) ==
        std::vector<int>{v.index.at("abc"), v.index.at("d")});
  CHECK(tokenize("abd", v) == std::vector<int>{v.index.at("ab"), v.index.at("d")});
  CHECK(tokenize("abab", v) == std::vector<int>{v.index.at("ab"), v.index.at("ab")});
}

TEST_CASE("tokenize hashes unknown characters into fixed buckets") {
  SubwordVocab v = make_vocab({"a", "b"});
  const int base = v.size();
  // Bucket values pinned by evaluating 64-bit FNV-1a over the UTF-8 bytes.
  CHECK(tokenize("q", v) == std::vector<int>{base + 372});
  CHECK(tokenize("z", v) == std::vector<int>{base + 693});
  CHECK(tokenize("€", v) == std::vector<int>{base + 371});
  CHECK(tokenize("好", v) == std::vector<int>{base + 774});
  CHECK(tokenize("💡", v) == std::vector<int>{base + 413});
  // Unknown characters hash one at a time, even inside one word.
  CHECK(tokenize("€ß", v) == std::vector<int>{base + 371, base + 911});
  // Known pieces still match around an unknown character.
  CHECK(tokenize("aßb", v) ==
        std::vector<int>{v.index.at("a"), base + 911, v.index.at("b")});
}

TEST_CASE("tokenize truncates to the sequence limit") {
  SubwordVocab v = make_vocab({"x"});
  std::string text;
  for (int i = 0; i < 100; ++i) text += "x ";
  CHECK(tokenize(text, v).size() == 60);
  CHECK(tokenize(text, v, 7).size() == 7);
  std::vector<int> ids = tokenize(text, v, 3);
  CHECK(ids == std::vector<int>{0, 0, 0});
}

TEST_CASE("tokenize never fails on arbitrary bytes") {
  SubwordVocab v = make_vocab({"a", "b", "th", "e"});
  Rng rng(4242);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const int len = static_cast<int>(rng.below(80));
    for (int i = 0; i < len; ++i) s.push_back(static_cast<char>(rng.below(256)));
    std::vector<int> ids = tokenize(s, v);
    CHECK(ids.size() <= 60);
    for (int id : ids) {
      CHECK(id >= 0);
      CHECK(id < v.total_ids());
    }
  }
}

TEST_CASE("vocab file round trip") {
  SubwordVocab v = make_vocab({"hello", "wörld", "好", "a"}, 777);
  const std::string path = "vocab_roundtrip.txt";
  save_vocab(v, path);
  SubwordVocab back = load_vocab(path);
  CHECK(back.subwords == v.subwords);
  CHECK(back.oov_buckets == 777);
  CHECK(back.index.at("wörld") == 1);
  std::remove(path.c_str());
}

TEST_CASE("vocab loader rejects malformed files") {
  const std::string path = "vocab_bad.txt";
  {
    std::ofstream out(path);
    out << "not-a-vocab-header\nhello\n";
  }
  CHECK_THROWS_AS(load_vocab(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "cvrt-vocab size=3 oov_buckets=1000 hash=fnv1a64\nonly\n";
  }
  CHECK_THROWS_AS(load_vocab(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "cvrt-vocab size=1 oov_buckets=1000 hash=md5\nhello\n";
  }
  CHECK_THROWS_AS(load_vocab(path), std::runtime_error);
  CHECK_THROWS_AS(load_vocab("no_such_vocab_file.txt"), std::runtime_error);
  std::remove(path.c_str());
}
