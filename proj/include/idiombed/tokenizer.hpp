#pragma once

#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "idiombed/common.hpp"

namespace idiombed {

struct Token {
  std::string piece;
  size_t char_start = 0;  // offsets into the original text, half-open
  size_t char_end = 0;
  int id = 0;
};

struct TokenSpan {
  size_t start_token = 0;
  size_t end_token = 0;  // exclusive

  size_t width() const { return end_token - start_token; }
  bool valid() const { return start_token < end_token; }
  bool contains(size_t t) const { return t >= start_token && t < end_token; }
  bool overlaps(const TokenSpan& o) const {
    return start_token < o.end_token && o.start_token < end_token;
  }
  bool operator==(const TokenSpan&) const = default;
};

// Word-level tokenizer with a greedy longest-match subword fallback.
// Continuation pieces carry a "##" prefix. Specials occupy fixed low ids so
// the mask sentinel id is stable across vocabularies.
class Tokenizer {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kBosId = 1;
  static constexpr int kEosId = 2;
  static constexpr int kMaskId = 3;
  static constexpr int kUnkId = 4;

  static const std::vector<std::string>& specials() {
    static const std::vector<std::string> s = {"<pad>", "<s>", "</s>", "[MASK]", "<unk>"};
    return s;
  }

  Tokenizer() {
    for (const auto& sp : specials()) intern(sp);
  }

  explicit Tokenizer(const std::vector<std::string>& pieces) : Tokenizer() {
    for (const auto& p : pieces) intern(p);
  }

  // Builds a frequency-ranked vocabulary over the given texts: every single
  // character seen (plus its "##" continuation form), then whole words by
  // descending frequency, lexicographic on ties, until max_vocab.
  static Tokenizer build(const std::vector<std::string>& texts, size_t max_vocab) {
    std::map<std::string, size_t> word_freq;
    std::set<char> chars;
    Tokenizer probe;  // specials-only instance used for pre-tokenization
    for (const auto& text : texts) {
      for (const auto& chunk : probe.pre_tokenize(text)) {
        if (chunk.is_special) continue;
        word_freq[chunk.text] += 1;
        for (char c : chunk.text) chars.insert(c);
      }
    }
    Tokenizer tok;
    for (char c : chars) {
      tok.intern(std::string(1, c));
      tok.intern("##" + std::string(1, c));
    }
    std::vector<std::pair<std::string, size_t>> ranked(word_freq.begin(), word_freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    for (const auto& [word, _] : ranked) {
      if (tok.vocab_size() >= max_vocab) break;
      if (word.size() > 1) tok.intern(word);
    }
    return tok;
  }

  size_t vocab_size() const { return pieces_.size(); }

  int piece_id(const std::string& piece) const {
    auto it = ids_.find(piece);
    return it == ids_.end() ? -1 : it->second;
  }

  const std::string& piece(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= pieces_.size())
      throw ValidationError("token id out of range: " + std::to_string(id));
    return pieces_[static_cast<size_t>(id)];
  }

  int mask_id() const { return kMaskId; }

  std::vector<Token> tokenize(const std::string& text) const {
    std::vector<Token> out;
    for (const auto& chunk : pre_tokenize(text)) {
      if (chunk.is_special) {
        out.push_back({chunk.text, chunk.start, chunk.start + chunk.text.size(),
                       piece_id_or_unk(chunk.text)});
        continue;
      }
      encode_word(chunk.text, chunk.start, out);
    }
    return out;
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) ids.push_back(t.id);
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      const std::string& p = piece(id);
      if (p.rfind("##", 0) == 0) {
        out += p.substr(2);
      } else {
        if (!out.empty()) out += ' ';
        out += p;
      }
    }
    return out;
  }

  void save(const fs::path& path) const {
    std::string out;
    for (const auto& p : pieces_) {
      out += p;
      out += '\n';
    }
    write_file_atomic(path, out);
  }

  static Tokenizer load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UpstreamMissingError("vocabulary file missing: " + path.string());
    Tokenizer tok;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno <= specials().size()) {
        if (line != specials()[lineno - 1])
          throw IntegrityError("vocabulary file " + path.string() + ": specials mismatch at line " +
                               std::to_string(lineno));
        continue;
      }
      tok.intern(line);
    }
    return tok;
  }

  uint64_t content_hash() const {
    Fnv64 h;
    for (const auto& p : pieces_) {
      h.update(p);
      h.update(uint64_t{0x1f});
    }
    return h.digest();
  }

 private:
  struct Chunk {
    std::string text;
    size_t start = 0;
    bool is_special = false;
  };

  static bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-' || c == '_';
  }

  // Splits on whitespace, keeps special sentinels whole, and separates each
  // punctuation character into its own chunk.
  std::vector<Chunk> pre_tokenize(const std::string& text) const {
    std::vector<Chunk> chunks;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
      if (std::isspace(static_cast<unsigned char>(text[i]))) {
        ++i;
        continue;
      }
      bool matched_special = false;
      for (const auto& sp : specials()) {
        if (text.compare(i, sp.size(), sp) == 0) {
          chunks.push_back({sp, i, true});
          i += sp.size();
          matched_special = true;
          break;
        }
      }
      if (matched_special) continue;
      if (is_word_char(text[i])) {
        size_t j = i;
        while (j < n && is_word_char(text[j])) ++j;
        chunks.push_back({text.substr(i, j - i), i, false});
        i = j;
      } else {
        chunks.push_back({std::string(1, text[i]), i, false});
        ++i;
      }
    }
    return chunks;
  }

  int piece_id_or_unk(const std::string& piece) const {
    int id = piece_id(piece);
    return id < 0 ? kUnkId : id;
  }

  // Greedy longest-match subword split; unknown characters map to <unk>.
  void encode_word(const std::string& word, size_t base, std::vector<Token>& out) const {
    int whole = piece_id(word);
    if (whole >= 0) {
      out.push_back({word, base, base + word.size(), whole});
      return;
    }
    size_t pos = 0;
    while (pos < word.size()) {
      const bool continuation = pos > 0;
      size_t best_len = 0;
      int best_id = -1;
      for (size_t len = word.size() - pos; len >= 1; --len) {
        std::string cand = word.substr(pos, len);
        if (continuation) cand = "##" + cand;
        int id = piece_id(cand);
        if (id >= 0) {
          best_len = len;
          best_id = id;
          break;
        }
      }
      if (best_id < 0) {
        out.push_back({word.substr(pos, 1), base + pos, base + pos + 1, kUnkId});
        pos += 1;
        continue;
      }
      std::string piece_text = word.substr(pos, best_len);
      if (continuation) piece_text = "##" + piece_text;
      out.push_back({std::move(piece_text), base + pos, base + pos + best_len, best_id});
      pos += best_len;
    }
  }

  void intern(const std::string& piece) {
    if (ids_.count(piece)) return;
    ids_.emplace(piece, static_cast<int>(pieces_.size()));
    pieces_.push_back(piece);
  }

  std::vector<std::string> pieces_;
  std::map<std::string, int> ids_;
};

// Minimal token span whose character coverage overlaps the char span; partial
// overlaps expand to the full covering piece so no subword is dropped.
inline TokenSpan align_span(const std::string& text, size_t char_start, size_t char_end,
                            const Tokenizer& tokenizer) {
  if (char_start >= char_end || char_end > text.size())
    throw ValidationError("align_span: invalid char span [" + std::to_string(char_start) + "," +
                          std::to_string(char_end) + ") for text of length " +
                          std::to_string(text.size()));
  const std::vector<Token> tokens = tokenizer.tokenize(text);
  size_t first = tokens.size();
  size_t last = 0;
  bool any = false;
  for (size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t].char_start < char_end && tokens[t].char_end > char_start) {
      if (!any) first = t;
      last = t;
      any = true;
    }
  }
  if (!any)
    throw ValidationError("align_span: char span [" + std::to_string(char_start) + "," +
                          std::to_string(char_end) + ") covers no token of text \"" + text + "\"");
  return TokenSpan{first, last + 1};
}

}  // namespace idiombed
