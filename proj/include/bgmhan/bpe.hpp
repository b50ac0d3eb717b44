#pragma once

// Byte-pair encoding over raw character sequences.
//
// Training counts every consecutive symbol pair of every document (pairs never
// span documents), merges the most frequent one (ties: lexicographically
// smallest (left, right) pair), and replaces its occurrences greedily from the
// left. Spaces are ordinary symbols; there is no pre-tokenization.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bgmhan/error.hpp"
#include "bgmhan/hash.hpp"

namespace bgmhan {

using TokenId = std::int32_t;

// Splits UTF-8 text into code points. Invalid lead/continuation bytes are
// kept as single-byte units so that decode(encode(t)) still reproduces t.
inline std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c < 0xF8) len = 4;
    else if (c >= 0xE0) len = c < 0xF0 ? 3 : 1;
    else if (c >= 0xC0) len = 2;
    if (i + len > text.size()) len = 1;
    for (std::size_t j = 1; j < len; ++j) {
      if ((static_cast<unsigned char>(text[i + j]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr int kFormatVersion = 1;

  using Merge = std::pair<TokenId, TokenId>;

  Vocabulary() : symbols_{"<pad>", "<unk>"} {}

  // Validates the invariants: reserved ids first, unique non-reserved
  // symbols, every merge output present.
  static Vocabulary from_parts(std::vector<std::string> symbols, std::vector<Merge> merges) {
    if (symbols.size() < 2 || symbols[0] != "<pad>" || symbols[1] != "<unk>") {
      throw UsageError("vocabulary: ids 0 and 1 must be <pad> and <unk>");
    }
    Vocabulary v;
    v.symbols_ = std::move(symbols);
    v.merges_ = std::move(merges);
    v.rebuild();
    return v;
  }

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  const std::vector<Merge>& merges() const noexcept { return merges_; }
  const std::string& symbol(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) throw UsageError("vocabulary: id out of range");
    return symbols_[id];
  }

  std::optional<TokenId> find(std::string_view s) const {
    const auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Rank of the merge (a, b), if any.
  std::optional<std::size_t> merge_rank(TokenId a, TokenId b) const {
    const auto it = rank_.find(pack(a, b));
    if (it == rank_.end()) return std::nullopt;
    return it->second;
  }
  TokenId merge_output(std::size_t rank) const { return merge_out_[rank]; }

  // Appends a merge and returns its output id; the vocabulary only grows when
  // the concatenated symbol is new.
  TokenId add_merge(TokenId a, TokenId b) {
    const std::string joined = symbol(a) + symbol(b);
    TokenId out;
    if (auto existing = find(joined)) {
      out = *existing;
    } else {
      out = static_cast<TokenId>(symbols_.size());
      symbols_.push_back(joined);
      index_.emplace(joined, out);
    }
    rank_.emplace(pack(a, b), merges_.size());
    merges_.emplace_back(a, b);
    merge_out_.push_back(out);
    return out;
  }

  TokenId add_symbol(const std::string& s) {
    if (auto existing = find(s)) return *existing;
    const auto id = static_cast<TokenId>(symbols_.size());
    symbols_.push_back(s);
    index_.emplace(s, id);
    return id;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << "bgmhan-vocab " << kFormatVersion << " symbols=" << symbols_.size() << " merges=" << merges_.size() << '\n';
    for (const auto& s : symbols_) os << escape(s) << '\n';
    for (const auto& [a, b] : merges_) os << escape(symbols_[a]) << '\t' << escape(symbols_[b]) << '\n';
    return os.str();
  }

  static Vocabulary deserialize(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw ParseError(1, "header", "empty vocabulary file");
    std::istringstream hs(line);
    std::string magic, sym_kv, merge_kv;
    int version = 0;
    hs >> magic >> version >> sym_kv >> merge_kv;
    if (magic != "bgmhan-vocab" || version != kFormatVersion || sym_kv.rfind("symbols=", 0) != 0 ||
        merge_kv.rfind("merges=", 0) != 0) {
      throw ParseError(1, "header", "not a version " + std::to_string(kFormatVersion) + " vocabulary header");
    }
    const std::size_t n_sym = std::stoull(sym_kv.substr(8));
    const std::size_t n_merge = std::stoull(merge_kv.substr(7));
    std::vector<std::string> symbols;
    symbols.reserve(n_sym);
    std::size_t lineno = 1;
    for (std::size_t i = 0; i < n_sym; ++i) {
      ++lineno;
      if (!std::getline(is, line)) throw ParseError(lineno, "symbol", "truncated symbol list");
      symbols.push_back(unescape(line, lineno));
    }
    Vocabulary v = from_parts(std::move(symbols), {});
    std::vector<Merge> merges;
    merges.reserve(n_merge);
    for (std::size_t i = 0; i < n_merge; ++i) {
      ++lineno;
      if (!std::getline(is, line)) throw ParseError(lineno, "merge", "truncated merge list");
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(lineno, "merge", "expected <left>\\t<right>");
      const auto a = v.find(unescape(line.substr(0, tab), lineno));
      const auto b = v.find(unescape(line.substr(tab + 1), lineno));
      if (!a || !b) throw ParseError(lineno, "merge", "merge refers to an unknown symbol");
      merges.emplace_back(*a, *b);
    }
    v.merges_ = std::move(merges);
    v.rebuild();
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write vocabulary file " + path);
    f << serialize();
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read vocabulary file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return deserialize(ss.str());
  }

  std::string content_hash() const { return digest(serialize()); }

 private:
  static std::uint64_t pack(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  }

  void rebuild() {
    index_.clear();
    rank_.clear();
    merge_out_.clear();
    for (std::size_t i = 2; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<TokenId>(i)).second) {
        throw UsageError("vocabulary: duplicate symbol '" + symbols_[i] + "'");
      }
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto [a, b] = merges_[r];
      if (a < 2 || b < 2 || static_cast<std::size_t>(a) >= size() || static_cast<std::size_t>(b) >= size()) {
        throw UsageError("vocabulary: merge refers to an invalid id");
      }
      const auto out = find(symbols_[a] + symbols_[b]);
      if (!out) throw UsageError("vocabulary: merge output '" + symbols_[a] + symbols_[b] + "' missing");
      rank_.emplace(pack(a, b), r);
      merge_out_.push_back(*out);
    }
  }

  static std::string escape(const std::string& s) {
    std::string o;
    for (const char c : s) {
      switch (c) {
        case '\\': o += "\\\\"; break;
        case '\n': o += "\\n"; break;
        case '\r': o += "\\r"; break;
        case '\t': o += "\\t"; break;
        default: o += c;
      }
    }
    return o;
  }

  static std::string unescape(const std::string& s, std::size_t lineno) {
    std::string o;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] != '\\') {
        o += s[i];
        continue;
      }
      if (++i == s.size()) throw ParseError(lineno, "symbol", "dangling escape");
      switch (s[i]) {
        case '\\': o += '\\'; break;
        case 'n': o += '\n'; break;
        case 'r': o += '\r'; break;
        case 't': o += '\t'; break;
        default: throw ParseError(lineno, "symbol", "unknown escape");
      }
    }
    return o;
  }

  std::vector<std::string> symbols_;
  std::vector<Merge> merges_;
  std::unordered_map<std::string, TokenId> index_;
  std::unordered_map<std::uint64_t, std::size_t> rank_;
  std::vector<TokenId> merge_out_;
};

namespace detail {

inline std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Replaces every (a, b) in `seq` with `out`, scanning left to right without overlap.
inline bool replace_pair(std::vector<TokenId>& seq, TokenId a, TokenId b, TokenId out) {
  bool changed = false;
  std::size_t w = 0;
  for (std::size_t r = 0; r < seq.size(); ++r) {
    if (r + 1 < seq.size() && seq[r] == a && seq[r + 1] == b) {
      seq[w++] = out;
      ++r;
      changed = true;
    } else {
      seq[w++] = seq[r];
    }
  }
  seq.resize(w);
  return changed;
}

}  // namespace detail

// target_size counts the reserved ids. Stops early once no pair occurs twice.
inline Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t target_size = 5000) {
  std::map<std::string, std::int64_t> distinct;
  for (const auto& doc : corpus)
    if (!doc.empty()) ++distinct[doc];
  if (distinct.empty()) throw UsageError("train_bpe: corpus is empty");

  std::vector<std::vector<std::string>> split;
  std::map<std::string, int> charset;
  for (const auto& [doc, _] : distinct) {
    split.push_back(utf8_chars(doc));
    for (const auto& c : split.back()) charset.emplace(c, 0);
  }
  if (target_size < charset.size() + 2) {
    throw UsageError("train_bpe: target size " + std::to_string(target_size) + " is below the " +
                     std::to_string(charset.size() + 2) + " initial symbols");
  }

  Vocabulary vocab;
  for (const auto& [c, _] : charset) vocab.add_symbol(c);

  struct Doc {
    std::vector<TokenId> seq;
    std::int64_t weight;
  };
  std::vector<Doc> docs;
  docs.reserve(split.size());
  {
    std::size_t i = 0;
    for (const auto& [_, weight] : distinct) {
      Doc d{{}, weight};
      for (const auto& c : split[i]) d.seq.push_back(*vocab.find(c));
      docs.push_back(std::move(d));
      ++i;
    }
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
  auto account = [&](std::uint32_t di, std::int64_t sign) {
    const auto& s = docs[di].seq;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const auto key = detail::pair_key(s[i], s[i + 1]);
      auto it = counts.find(key);
      if (sign > 0) {
        if (it == counts.end()) it = counts.emplace(key, 0).first;
        it->second += docs[di].weight;
        where[key].push_back(di);
      } else {
        it->second -= docs[di].weight;
        if (it->second == 0) counts.erase(it);
      }
    }
  };
  for (std::uint32_t di = 0; di < docs.size(); ++di) account(di, +1);

  std::vector<std::uint32_t> stamp(docs.size(), 0);
  std::uint32_t epoch = 0;
  while (vocab.size() < target_size) {
    std::uint64_t best_key = 0;
    std::int64_t best = 0;
    for (const auto& [key, n] : counts) {
      if (n < best) continue;
      if (n > best) {
        best = n;
        best_key = key;
        continue;
      }
      const auto a = static_cast<TokenId>(key >> 32), b = static_cast<TokenId>(key & 0xffffffffu);
      const auto ba = static_cast<TokenId>(best_key >> 32), bb = static_cast<TokenId>(best_key & 0xffffffffu);
      const int c = vocab.symbol(a).compare(vocab.symbol(ba));
      if (c < 0 || (c == 0 && vocab.symbol(b) < vocab.symbol(bb))) best_key = key;
    }
    if (best < 2) break;

    const auto a = static_cast<TokenId>(best_key >> 32), b = static_cast<TokenId>(best_key & 0xffffffffu);
    const TokenId out = vocab.add_merge(a, b);
    ++epoch;
    const auto affected = std::move(where[best_key]);
    where.erase(best_key);
    for (const auto di : affected) {
      if (stamp[di] == epoch) continue;
      stamp[di] = epoch;
      auto& seq = docs[di].seq;
      bool present = false;
      for (std::size_t i = 0; i + 1 < seq.size() && !present; ++i) present = seq[i] == a && seq[i + 1] == b;
      if (!present) continue;
      account(di, -1);
      detail::replace_pair(seq, a, b, out);
      account(di, +1);
    }
  }
  return vocab;
}

// Applies the learned merges in training order. Characters outside the
// vocabulary become UNK.
inline std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> seq;
  for (const auto& c : utf8_chars(text)) seq.push_back(vocab.find(c).value_or(Vocabulary::kUnk));
  // Equivalent to replaying every merge in order: the next merge that can fire
  // is the lowest-ranked one present, and it must come after the last applied.
  std::optional<std::size_t> last;
  while (seq.size() > 1) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const auto r = vocab.merge_rank(seq[i], seq[i + 1]);
      if (r && (!last || *r > *last) && *r < best) best = *r;
    }
    if (best == std::numeric_limits<std::size_t>::max()) break;
    const auto [a, b] = vocab.merges()[best];
    detail::replace_pair(seq, a, b, vocab.merge_output(best));
    last = best;
  }
  return seq;
}

inline std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (const auto id : ids) out += vocab.symbol(id);
  return out;
}

}  // namespace bgmhan
