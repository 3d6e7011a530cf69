#include "cvrt/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cvrt {

namespace {

enum class CharClass { space, letter, digit, punct };

// One "character": a valid UTF-8 codepoint or a single invalid byte.
struct Utf8Char {
  std::string_view bytes;
  uint32_t cp;
  bool valid;
};

Utf8Char next_char(std::string_view s, size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  int len = 0;
  uint32_t cp = 0;
  if (b0 < 0x80) {
    return {s.substr(pos, 1), b0, true};
  } else if ((b0 & 0xe0) == 0xc0) {
    len = 2;
    cp = b0 & 0x1f;
  } else if ((b0 & 0xf0) == 0xe0) {
    len = 3;
    cp = b0 & 0x0f;
  } else if ((b0 & 0xf8) == 0xf0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {s.substr(pos, 1), b0, false};
  }
  if (pos + len > s.size()) return {s.substr(pos, 1), b0, false};
  for (int i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xc0) != 0x80) return {s.substr(pos, 1), b0, false};
    cp = (cp << 6) | (b & 0x3f);
  }
  return {s.substr(pos, static_cast<size_t>(len)), cp, true};
}

CharClass classify(const Utf8Char& c) {
  if (!c.valid) return CharClass::letter;
  const uint32_t cp = c.cp;
  if (cp < 0x80) {
    if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v')
      return CharClass::space;
    if (cp >= 'a' && cp <= 'z') return CharClass::letter;
    if (cp >= 'A' && cp <= 'Z') return CharClass::letter;
    if (cp >= '0' && cp <= '9') return CharClass::digit;
    return CharClass::punct;
  }
  // Non-ASCII: common whitespace and punctuation blocks; everything else is
  // treated as a letter.
  if (cp == 0xa0 || (cp >= 0x2000 && cp <= 0x200a) || cp == 0x2028 || cp == 0x2029 ||
      cp == 0x205f || cp == 0x3000)
    return CharClass::space;
  if ((cp >= 0x2010 && cp <= 0x205e) ||                      // general punctuation
      (cp >= 0x3001 && cp <= 0x303f) ||                      // CJK punctuation
      (cp >= 0xff01 && cp <= 0xff0f) || (cp >= 0xff1a && cp <= 0xff20) ||
      (cp >= 0xff3b && cp <= 0xff40) || (cp >= 0xff5b && cp <= 0xff65) ||
      cp == 0xab || cp == 0xbb || cp == 0xa1 || cp == 0xbf)
    return CharClass::punct;
  return CharClass::letter;
}

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (char& ch : out)
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  return out;
}

// Split a word into its characters.
std::vector<std::string> chars_of(std::string_view word) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos < word.size()) {
    const Utf8Char c = next_char(word, pos);
    out.emplace_back(c.bytes);
    pos += c.bytes.size();
  }
  return out;
}

bool is_ascii_digit_str(const std::string& ch) {
  return ch.size() == 1 && ch[0] >= '0' && ch[0] <= '9';
}

// More than `limit` consecutive digits anywhere in the candidate?
bool violates_digit_run(const std::vector<std::string>& chars, size_t begin, size_t len,
                        int limit) {
  int run = 0;
  for (size_t i = begin; i < begin + len; ++i) {
    if (is_ascii_digit_str(chars[i])) {
      if (++run > limit) return true;
    } else {
      run = 0;
    }
  }
  return false;
}

std::string join(const std::vector<std::string>& chars, size_t begin, size_t len) {
  std::string out;
  for (size_t i = begin; i < begin + len; ++i) out += chars[i];
  return out;
}

// Greedy longest-prefix segmentation of a word's characters. Positions with
// no vocabulary prefix yield a length-1 segment flagged as OOV.
struct Segment {
  size_t begin, len;
  bool oov;
};

std::vector<Segment> segment_word(const std::vector<std::string>& chars,
                                  const std::unordered_map<std::string, int>& index,
                                  int longest_chars) {
  std::vector<Segment> segs;
  size_t p = 0;
  while (p < chars.size()) {
    size_t best = 0;
    const size_t cap = std::min(static_cast<size_t>(longest_chars), chars.size() - p);
    std::string cand;
    for (size_t L = cap; L >= 1; --L) {
      cand = join(chars, p, L);
      if (index.count(cand)) {
        best = L;
        break;
      }
    }
    if (best == 0) {
      segs.push_back({p, 1, true});
      p += 1;
    } else {
      segs.push_back({p, best, false});
      p += best;
    }
  }
  return segs;
}

}  // namespace

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 14695981039346656037ull;
  for (const char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> pre_tokenize(std::string_view text) {
  const std::string lowered = ascii_lower(text);
  std::vector<std::string> words;
  std::string cur;
  CharClass cur_class = CharClass::space;
  size_t pos = 0;
  while (pos < lowered.size()) {
    const Utf8Char c = next_char(lowered, pos);
    const CharClass cls = classify(c);
    pos += c.bytes.size();
    if (cls == CharClass::space) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
      cur_class = CharClass::space;
    } else if (cls == CharClass::punct) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
      words.emplace_back(c.bytes);
      cur_class = CharClass::space;
    } else {
      if (!cur.empty() && cls != cur_class) {
        words.push_back(std::move(cur));
        cur.clear();
      }
      cur += c.bytes;
      cur_class = cls;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

void SubwordVocab::finalize() {
  index.clear();
  longest_chars = 1;
  for (size_t i = 0; i < subwords.size(); ++i) {
    index.emplace(subwords[i], static_cast<int>(i));
    longest_chars =
        std::max(longest_chars, static_cast<int>(chars_of(subwords[i]).size()));
  }
}

SubwordVocab build_vocab(std::istream& corpus, const VocabConfig& cfg) {
  if (cfg.min_frequency < 1) throw std::invalid_argument("min_frequency must be >= 1");
  if (cfg.max_subword_chars < 1 || cfg.iterations < 1 || cfg.oov_buckets < 1)
    throw std::invalid_argument("bad vocabulary config");

  // Word counts from the corpus.
  std::unordered_map<std::string, int64_t> word_counts;
  std::string line;
  while (std::getline(corpus, line)) {
    for (std::string& w : pre_tokenize(line)) word_counts[std::move(w)] += 1;
  }
  if (word_counts.empty()) throw std::runtime_error("empty corpus");

  // Deterministic word order, with cached character splits.
  std::vector<std::pair<std::string, int64_t>> words(word_counts.begin(),
                                                     word_counts.end());
  std::sort(words.begin(), words.end());
  std::vector<std::vector<std::string>> word_chars;
  word_chars.reserve(words.size());
  for (const auto& [w, cnt] : words) word_chars.push_back(chars_of(w));

  // Alphabet characters that clear the frequency threshold on raw counts.
  std::unordered_map<std::string, int64_t> char_counts;
  for (size_t wi = 0; wi < words.size(); ++wi)
    for (const std::string& ch : word_chars[wi]) char_counts[ch] += words[wi].second;
  std::vector<std::string> alphabet;
  for (const auto& [ch, cnt] : char_counts)
    if (cnt >= cfg.min_frequency) alphabet.push_back(ch);
  std::sort(alphabet.begin(), alphabet.end());

  std::unordered_map<std::string, int> current;  // subword -> placeholder id
  int longest = 1;
  for (const std::string& ch : alphabet) current.emplace(ch, 0);

  std::vector<std::string> result = alphabet;
  for (int it = 0; it < cfg.iterations; ++it) {
    // Count candidate substrings starting at segmentation boundaries.
    std::unordered_map<std::string, int64_t> cand;
    for (size_t wi = 0; wi < words.size(); ++wi) {
      const auto& chars = word_chars[wi];
      const int64_t freq = words[wi].second;
      for (const Segment& seg : segment_word(chars, current, longest)) {
        const size_t max_len =
            std::min(static_cast<size_t>(cfg.max_subword_chars), chars.size() - seg.begin);
        for (size_t L = 1; L <= max_len; ++L) {
          if (violates_digit_run(chars, seg.begin, L, cfg.max_consecutive_digits))
            break;  // a violating run stays inside every longer candidate
          cand[join(chars, seg.begin, L)] += freq;
        }
      }
    }

    // Longest candidates claim their counts first and debit their prefixes.
    std::map<size_t, std::vector<std::string>> by_len;
    for (const auto& [s, cnt] : cand) by_len[chars_of(s).size()].push_back(s);
    std::vector<std::string> selected;
    for (auto it2 = by_len.rbegin(); it2 != by_len.rend(); ++it2) {
      std::sort(it2->second.begin(), it2->second.end());
      for (const std::string& s : it2->second) {
        const int64_t cnt = cand[s];
        if (cnt < cfg.min_frequency) continue;
        selected.push_back(s);
        const auto chars = chars_of(s);
        for (size_t L = 1; L < chars.size(); ++L) cand[join(chars, 0, L)] -= cnt;
      }
    }

    // Alphabet survives independently of the debiting above.
    for (const std::string& ch : alphabet)
      if (std::find(selected.begin(), selected.end(), ch) == selected.end())
        selected.push_back(ch);

    current.clear();
    longest = 1;
    for (const std::string& s : selected) {
      current.emplace(s, 0);
      longest = std::max(longest, static_cast<int>(chars_of(s).size()));
    }
    result = std::move(selected);
  }

  std::sort(result.begin(), result.end(), [](const std::string& a, const std::string& b) {
    const size_t la = chars_of(a).size(), lb = chars_of(b).size();
    if (la != lb) return la > lb;
    return a < b;
  });

  SubwordVocab vocab;
  vocab.subwords = std::move(result);
  vocab.oov_buckets = cfg.oov_buckets;
  vocab.finalize();
  return vocab;
}

std::vector<int> tokenize(std::string_view text, const SubwordVocab& vocab,
                          int max_seq_len) {
  std::vector<int> ids;
  for (const std::string& word : pre_tokenize(text)) {
    const auto chars = chars_of(word);
    for (const Segment& seg : segment_word(chars, vocab.index, vocab.longest_chars)) {
      if (static_cast<int>(ids.size()) >= max_seq_len) return ids;
      if (seg.oov) {
        const uint64_t h = fnv1a64(chars[seg.begin]);
        ids.push_back(vocab.size() +
                      static_cast<int>(h % static_cast<uint64_t>(vocab.oov_buckets)));
      } else {
        ids.push_back(vocab.index.at(join(chars, seg.begin, seg.len)));
      }
    }
  }
  if (static_cast<int>(ids.size()) > max_seq_len) ids.resize(max_seq_len);
  return ids;
}

void save_vocab(const SubwordVocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  out << "cvrt-vocab size=" << vocab.size() << " oov_buckets=" << vocab.oov_buckets
      << " hash=fnv1a64\n";
  for (const std::string& s : vocab.subwords) out << s << "\n";
  if (!out) throw std::runtime_error("failed writing vocab file: " + path);
}

SubwordVocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("empty vocab file: " + path);
  int size = -1, buckets = -1;
  char hash_name[32] = {0};
  if (std::sscanf(header.c_str(), "cvrt-vocab size=%d oov_buckets=%d hash=%31s", &size,
                  &buckets, hash_name) != 3 ||
      size < 0 || buckets < 1)
    throw std::runtime_error("malformed vocab header: " + path);
  if (std::string(hash_name) != "fnv1a64")
    throw std::runtime_error("unsupported vocab hash: " + std::string(hash_name));
  SubwordVocab vocab;
  vocab.oov_buckets = buckets;
  std::string line;
  for (int i = 0; i < size; ++i) {
    if (!std::getline(in, line) || line.empty())
      throw std::runtime_error("vocab size mismatch in " + path);
    vocab.subwords.push_back(line);
  }
  vocab.finalize();
  return vocab;
}

}  // namespace cvrt
