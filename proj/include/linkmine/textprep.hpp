#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/csv.hpp"
#include "linkmine/snowball.hpp"
#include "linkmine/stopwords.hpp"

namespace linkmine::textprep {

struct TokenStream {
  std::string doc_id;
  std::vector<std::string> tokens;
  bool operator==(const TokenStream&) const = default;
};

/// Surviving stems (or phrase units) with corpus-wide occurrence counts.
using Vocabulary = std::map<std::string, std::int64_t>;

namespace detail {

// Decodes one UTF-8 code point; invalid bytes decode as U+FFFD and advance by one.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

enum class CharClass { kSeparator, kLetter, kDigit, kJoiner };

struct Classified {
  CharClass cls;
  char32_t folded;  // lowercased / digit-mapped form
};

// Upper/lower pairs in Latin Extended-A alternate parity across sub-ranges.
inline char32_t fold_latin_extended_a(char32_t cp) {
  if (cp == 0x178) return 0xFF;
  const bool even_upper = (cp <= 0x137) || (cp >= 0x14A && cp <= 0x177);
  const bool odd_upper = (cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E);
  if ((even_upper && cp % 2 == 0) || (odd_upper && cp % 2 == 1)) return cp + 1;
  return cp;
}

inline Classified classify(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return {CharClass::kLetter, cp - 'A' + 'a'};
  if (cp >= 'a' && cp <= 'z') return {CharClass::kLetter, cp};
  if (cp >= '0' && cp <= '9') return {CharClass::kDigit, cp};
  // subscript and superscript digits fold to ASCII, so H₂S reads as h2s
  if (cp >= 0x2080 && cp <= 0x2089) return {CharClass::kDigit, cp - 0x2080 + '0'};
  if (cp >= 0x2074 && cp <= 0x2079) return {CharClass::kDigit, cp - 0x2074 + '4'};
  if (cp == 0x2070) return {CharClass::kDigit, '0'};
  if (cp == 0x00B9) return {CharClass::kDigit, '1'};
  if (cp == 0x00B2) return {CharClass::kDigit, '2'};
  if (cp == 0x00B3) return {CharClass::kDigit, '3'};
  if (cp == '-' || cp == 0x2010 || cp == 0x2011) return {CharClass::kJoiner, '-'};
  if (cp == '\'' || cp == 0x2019) return {CharClass::kJoiner, '\''};
  // Latin-1 supplement and Latin Extended-A/B letters
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return {CharClass::kLetter, cp + 0x20};
  if (cp >= 0xDF && cp <= 0xFF && cp != 0xF7) return {CharClass::kLetter, cp};
  if (cp >= 0x100 && cp <= 0x17F) return {CharClass::kLetter, fold_latin_extended_a(cp)};
  if (cp >= 0x180 && cp <= 0x24F) return {CharClass::kLetter, cp};
  // Greek
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return {CharClass::kLetter, cp + 0x20};
  if (cp >= 0x3B1 && cp <= 0x3C9) return {CharClass::kLetter, cp};
  return {CharClass::kSeparator, 0};
}

inline bool all_digits(std::string_view t) {
  return std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Applies the keep/drop rules to one raw alphanumeric run.
inline void emit(std::string token, std::vector<std::string>& out) {
  if (token.empty()) return;
  if (all_digits(token)) return;
  if (is_stop_word(token)) return;
  // possessive 's goes; any other apostrophe splits the word
  if (token.size() > 2 && token.compare(token.size() - 2, 2, "'s") == 0) token.resize(token.size() - 2);
  if (token.find('\'') != std::string::npos) {
    for (auto& part : split(token, '\'')) emit(std::move(part), out);
    return;
  }
  if (all_digits(token) || is_stop_word(token)) return;
  out.push_back(std::move(token));
}

}  // namespace detail

/// Lowercases, splits on punctuation and whitespace, and drops stand-alone
/// numbers and stop words. Hyphens and apostrophes survive only between two
/// alphanumeric characters ("hiv-1", "fat-tree"). '_' is a separator because
/// it is reserved for phrase units.
inline std::vector<std::string> normalize_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  char32_t pending_joiner = 0;
  auto flush = [&] {
    detail::emit(std::move(cur), out);
    cur.clear();
    pending_joiner = 0;
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = detail::classify(detail::next_code_point(text, i));
    switch (c.cls) {
      case detail::CharClass::kLetter:
      case detail::CharClass::kDigit:
        if (pending_joiner) {
          cur += static_cast<char>(pending_joiner);
          pending_joiner = 0;
        }
        detail::append_utf8(cur, c.folded);
        break;
      case detail::CharClass::kJoiner:
        if (cur.empty() || pending_joiner)
          flush();
        else
          pending_joiner = c.folded;
        break;
      case detail::CharClass::kSeparator:
        flush();
        break;
    }
  }
  flush();
  return out;
}

inline TokenStream normalize_tokenize(std::string doc_id, std::string_view text) {
  return {std::move(doc_id), normalize_tokenize(text)};
}

struct StemResult {
  std::vector<TokenStream> streams;
  Vocabulary vocabulary;
};

/// Replaces every token by its Snowball stem, then removes stems that occur
/// only once in the whole corpus.
inline StemResult stem_and_prune(const std::vector<TokenStream>& streams) {
  StemResult r;
  r.streams.reserve(streams.size());
  std::unordered_map<std::string, std::string> cache;
  Vocabulary counts;
  for (const auto& s : streams) {
    TokenStream out{s.doc_id, {}};
    out.tokens.reserve(s.tokens.size());
    for (const auto& t : s.tokens) {
      auto it = cache.find(t);
      if (it == cache.end()) it = cache.emplace(t, snowball::stem(t)).first;
      out.tokens.push_back(it->second);
      ++counts[it->second];
    }
    r.streams.push_back(std::move(out));
  }
  for (auto& s : r.streams)
    std::erase_if(s.tokens, [&](const std::string& t) { return counts[t] <= 1; });
  for (const auto& [tok, n] : counts)
    if (n > 1) r.vocabulary.emplace(tok, n);
  return r;
}

inline Vocabulary count_tokens(const std::vector<TokenStream>& streams) {
  Vocabulary v;
  for (const auto& s : streams)
    for (const auto& t : s.tokens) ++v[t];
  return v;
}

struct PhraseOptions {
  std::int64_t min_count = 10;
  double sig_threshold = 5.0;
  int rounds = 2;
};

struct Phrase {
  std::string text;  // constituents joined by '_'
  std::int64_t count = 0;  // times the unit was formed
  double significance = 0.0;
  int round = 0;
};

struct PhraseVocabulary {
  std::vector<Phrase> phrases;  // sorted by text
  PhraseOptions options;

  const Phrase* find(std::string_view text) const {
    auto it = std::lower_bound(phrases.begin(), phrases.end(), text,
                               [](const Phrase& p, std::string_view t) { return p.text < t; });
    return (it != phrases.end() && it->text == text) ? &*it : nullptr;
  }
};

/// (count - expected) / sqrt(expected), expected = f(left) f(right) / total.
inline double phrase_significance(std::int64_t pair_count, std::int64_t left_count,
                                  std::int64_t right_count, std::int64_t total) {
  const double expected =
      static_cast<double>(left_count) * static_cast<double>(right_count) / static_cast<double>(total);
  if (expected <= 0) return 0.0;
  return (static_cast<double>(pair_count) - expected) / std::sqrt(expected);
}

struct PhraseResult {
  PhraseVocabulary vocabulary;
  std::vector<TokenStream> streams;
};

namespace detail {

inline std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

struct Interner {
  std::unordered_map<std::string, std::uint32_t> ids;
  std::vector<std::string> names;
  std::uint32_t id(const std::string& s) {
    auto [it, fresh] = ids.emplace(s, static_cast<std::uint32_t>(names.size()));
    if (fresh) names.push_back(s);
    return it->second;
  }
};

// Greedy non-overlapping merge inside one document: highest score first,
// leftmost position on ties.
inline std::vector<std::uint32_t> merge_document(
    const std::vector<std::uint32_t>& units,
    const std::unordered_map<std::uint64_t, double>& accepted,
    const std::unordered_map<std::uint64_t, std::uint32_t>& merged_id) {
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i + 1 < units.size(); ++i) {
    auto it = accepted.find(pair_key(units[i], units[i + 1]));
    if (it != accepted.end()) cand.emplace_back(it->second, i);
  }
  if (cand.empty()) return units;
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<char> used(units.size(), 0), starts(units.size(), 0);
  for (const auto& [score, i] : cand) {
    if (used[i] || used[i + 1]) continue;
    used[i] = used[i + 1] = 1;
    starts[i] = 1;
  }
  std::vector<std::uint32_t> out;
  out.reserve(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (starts[i]) {
      out.push_back(merged_id.at(pair_key(units[i], units[i + 1])));
      ++i;
    } else {
      out.push_back(units[i]);
    }
  }
  return out;
}

}  // namespace detail

/// Bottom-up agglomerative phrase mining. Each round scores every adjacent
/// unit pair, accepts those with count >= min_count and significance above
/// the threshold, and rewrites each document greedily. A pair whose realized
/// merges fall below min_count (because stronger overlapping merges won) is
/// withdrawn and the round is redone without it.
inline PhraseResult mine_phrases(const std::vector<TokenStream>& streams,
                                 const PhraseOptions& opt = {}) {
  if (opt.min_count < 1) throw InvalidInput("phrase min_count must be >= 1");
  if (opt.rounds < 0) throw InvalidInput("phrase rounds must be >= 0");
  detail::Interner names;
  std::vector<std::vector<std::uint32_t>> docs(streams.size());
  for (std::size_t d = 0; d < streams.size(); ++d) {
    docs[d].reserve(streams[d].tokens.size());
    for (const auto& t : streams[d].tokens) docs[d].push_back(names.id(t));
  }

  PhraseResult result;
  result.vocabulary.options = opt;
  for (int round = 1; round <= opt.rounds; ++round) {
    std::unordered_map<std::uint32_t, std::int64_t> unit_count;
    std::unordered_map<std::uint64_t, std::int64_t> pair_count;
    std::int64_t total = 0;
    for (const auto& units : docs) {
      total += static_cast<std::int64_t>(units.size());
      for (std::size_t i = 0; i < units.size(); ++i) {
        ++unit_count[units[i]];
        if (i + 1 < units.size()) ++pair_count[detail::pair_key(units[i], units[i + 1])];
      }
    }
    std::unordered_map<std::uint64_t, double> accepted;
    for (const auto& [key, c] : pair_count) {
      if (c < opt.min_count) continue;
      const auto a = static_cast<std::uint32_t>(key >> 32);
      const auto b = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
      const double z = phrase_significance(c, unit_count[a], unit_count[b], total);
      if (z > opt.sig_threshold) accepted.emplace(key, z);
    }
    if (accepted.empty()) break;
    // Two pairs can spell the same unit ("a_b"+"c" and "a"+"b_c"), or respell
    // a unit from an earlier round; keep only the strongest fresh spelling.
    std::vector<std::pair<double, std::uint64_t>> by_score;
    for (const auto& [key, z] : accepted) by_score.emplace_back(-z, key);
    std::sort(by_score.begin(), by_score.end());
    std::unordered_map<std::uint64_t, std::uint32_t> merged_id;
    std::unordered_map<std::string, std::uint64_t> spelled;
    for (const auto& [negz, key] : by_score) {
      const auto a = static_cast<std::uint32_t>(key >> 32);
      const auto b = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
      std::string text = names.names[a] + "_" + names.names[b];
      if (names.ids.count(text) || spelled.count(text)) {
        accepted.erase(key);
        continue;
      }
      spelled.emplace(std::move(text), key);
    }
    for (const auto& [text, key] : spelled) merged_id.emplace(key, names.id(text));
    if (accepted.empty()) break;

    std::vector<std::vector<std::uint32_t>> rewritten;
    std::unordered_map<std::uint32_t, std::int64_t> formed;
    while (true) {
      rewritten.clear();
      formed.clear();
      std::unordered_map<std::uint32_t, std::uint64_t> key_of;
      for (const auto& [key, id] : merged_id) key_of.emplace(id, key);
      for (const auto& units : docs) {
        rewritten.push_back(detail::merge_document(units, accepted, merged_id));
        for (auto u : rewritten.back())
          if (key_of.count(u)) ++formed[u];
      }
      std::vector<std::uint64_t> withdraw;
      for (const auto& [key, id] : merged_id)
        if (formed[id] < opt.min_count) withdraw.push_back(key);
      if (withdraw.empty()) break;
      for (auto key : withdraw) {
        accepted.erase(key);
        merged_id.erase(key);
      }
      if (accepted.empty()) break;
    }
    if (accepted.empty()) break;

    for (const auto& [key, id] : merged_id)
      result.vocabulary.phrases.push_back({names.names[id], formed[id], accepted.at(key), round});
    docs = std::move(rewritten);
  }
  std::sort(result.vocabulary.phrases.begin(), result.vocabulary.phrases.end(),
            [](const Phrase& a, const Phrase& b) { return a.text < b.text; });

  result.streams.reserve(streams.size());
  for (std::size_t d = 0; d < streams.size(); ++d) {
    TokenStream s{streams[d].doc_id, {}};
    s.tokens.reserve(docs[d].size());
    for (auto u : docs[d]) s.tokens.push_back(names.names[u]);
    result.streams.push_back(std::move(s));
  }
  return result;
}

/// Splits phrase units back into their constituent stems.
inline std::vector<std::string> expand_phrases(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens)
    for (auto& part : split(t, '_')) out.push_back(std::move(part));
  return out;
}

// ---- persistence ---------------------------------------------------------

/// One document per line: doc_id, a tab, then space-separated tokens.
inline void write_streams(std::ostream& os, const std::vector<TokenStream>& streams) {
  for (const auto& s : streams) {
    os << s.doc_id << '\t';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) os << ' ';
      os << s.tokens[i];
    }
    os << '\n';
  }
}

inline std::vector<TokenStream> read_streams(std::istream& in, const std::string& what = "streams") {
  std::vector<TokenStream> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw InvalidInput(what + ": line " + std::to_string(lineno) + " lacks 'doc_id<TAB>tokens'");
    TokenStream s{line.substr(0, tab), {}};
    for (auto& t : split(std::string_view(line).substr(tab + 1), ' '))
      if (!t.empty()) s.tokens.push_back(std::move(t));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<TokenStream> read_streams_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  return read_streams(in, path);
}

inline void write_vocabulary(std::ostream& os, const Vocabulary& v) {
  os << "token,count\n";
  for (const auto& [tok, n] : v) csv::write_row(os, {tok, std::to_string(n)});
}

inline Vocabulary read_vocabulary(std::istream& in, const std::string& what = "vocabulary") {
  auto t = csv::read(in, what);
  csv::expect_header(t, {"token", "count"}, what);
  Vocabulary v;
  for (const auto& row : t.rows) {
    long long n = 0;
    if (!parse_int(row[1], n) || n < 0) throw InvalidInput(what + ": bad count for " + row[0]);
    v[row[0]] = n;
  }
  return v;
}

inline void write_phrases(std::ostream& os, const PhraseVocabulary& p) {
  os << "phrase,count,significance,round\n";
  for (const auto& ph : p.phrases)
    csv::write_row(os, {ph.text, std::to_string(ph.count), format_double(ph.significance),
                        std::to_string(ph.round)});
}

}  // namespace linkmine::textprep
