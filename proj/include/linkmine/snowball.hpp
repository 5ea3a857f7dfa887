#pragma once

// Snowball English stemmer (the current revision of Porter2, with the
// inter-/later-/past- region prefixes and the revised step 1b).

#include <string>
#include <string_view>

namespace linkmine::snowball {

namespace detail {

inline bool is_vowel(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
}

// Vowels plus w, x and Y: letters that cannot close a short syllable.
inline bool is_vowel_wxy(char c) { return is_vowel(c) || c == 'w' || c == 'x' || c == 'Y'; }

inline bool is_li_ending(char c) {
  return c == 'c' || c == 'd' || c == 'e' || c == 'g' || c == 'h' || c == 'k' || c == 'm' ||
         c == 'n' || c == 'r' || c == 't';
}

inline bool ends_with(std::string_view w, std::string_view s) {
  return w.size() >= s.size() && w.substr(w.size() - s.size()) == s;
}

template <std::size_t N>
std::string_view longest_suffix(std::string_view w, const std::string_view (&table)[N]) {
  std::string_view best;
  for (auto s : table)
    if (s.size() > best.size() && ends_with(w, s)) best = s;
  return best;
}

struct Stemmer {
  std::string w;
  std::size_t p1 = 0, p2 = 0;

  bool in_r1(std::size_t pos) const { return pos >= p1; }
  bool in_r2(std::size_t pos) const { return pos >= p2; }

  // Position just past the first non-vowel that follows a vowel, from `start`.
  std::size_t region_after(std::size_t start) const {
    std::size_t i = start;
    while (i < w.size() && !is_vowel(w[i])) ++i;
    while (i < w.size() && is_vowel(w[i])) ++i;
    return i < w.size() ? i + 1 : w.size();
  }

  void mark_regions() {
    static constexpr std::string_view kPrefixes[] = {"arsen", "commun", "emerg", "gener", "inter",
                                                     "later", "organ",  "past",  "univers"};
    p1 = std::string::npos;
    for (auto p : kPrefixes)
      if (w.compare(0, p.size(), p) == 0) p1 = p.size();
    if (p1 == std::string::npos) p1 = region_after(0);
    p2 = region_after(p1);
  }

  // Short syllable ending just before `end`.
  bool short_before(std::size_t end) const {
    if (end >= 3 && !is_vowel_wxy(w[end - 1]) && is_vowel(w[end - 2]) && !is_vowel(w[end - 3]))
      return true;
    if (end == 2 && !is_vowel(w[1]) && is_vowel(w[0])) return true;
    return end >= 4 && std::string_view(w).substr(end - 4, 4) == "past";
  }

  void cut(std::size_t n, std::string_view with = {}) {
    w.resize(w.size() - n);
    w += with;
  }

  bool vowel_before(std::size_t end) const {
    for (std::size_t i = 0; i < end; ++i)
      if (is_vowel(w[i])) return true;
    return false;
  }

  void step1a() {
    if (ends_with(w, "'s'"))
      cut(3);
    else if (ends_with(w, "'s"))
      cut(2);
    else if (ends_with(w, "'"))
      cut(1);

    if (ends_with(w, "sses")) {
      cut(4, "ss");
    } else if (ends_with(w, "ied") || ends_with(w, "ies")) {
      cut(3, w.size() >= 5 ? "i" : "ie");
    } else if (ends_with(w, "ss") || ends_with(w, "us")) {
    } else if (ends_with(w, "s")) {
      if (w.size() >= 2 && vowel_before(w.size() - 2)) cut(1);
    }
  }

  void step1b() {
    static constexpr std::string_view kSuffixes[] = {"ed", "eed", "ing", "edly", "eedly", "ingly"};
    const auto suf = longest_suffix(w, kSuffixes);
    if (suf.empty()) return;
    const std::size_t stem_end = w.size() - suf.size();
    const std::string_view before = std::string_view(w).substr(0, stem_end);

    if (suf == "eed" || suf == "eedly") {
      if (!in_r1(stem_end)) return;
      if (before == "succ" || before == "proc" || before == "exc") return;
      cut(suf.size(), "ee");
      return;
    }
    if (suf == "ing") {
      if (before.size() == 2 && before[1] == 'y' && !is_vowel(before[0])) {
        cut(suf.size() + 1, "ie");  // dying -> die
        return;
      }
      if (before == "even" || before == "cann" || before == "inn" || before == "earr" ||
          before == "herr" || before == "out")
        return;
    }
    if (!vowel_before(stem_end)) return;
    cut(suf.size());

    if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
      w += 'e';
      return;
    }
    static constexpr std::string_view kDoubles[] = {"bb", "dd", "ff", "gg", "mm",
                                                    "nn", "pp", "rr", "tt"};
    if (!longest_suffix(w, kDoubles).empty()) {
      // "add", "egg", "err" and friends keep their double
      if (w.size() == 3 && (w[0] == 'a' || w[0] == 'e' || w[0] == 'o')) return;
      w.pop_back();
      return;
    }
    if (w.size() == p1 && short_before(w.size())) w += 'e';
  }

  void step1c() {
    if (w.size() < 3) return;
    const char last = w.back();
    if ((last == 'y' || last == 'Y') && !is_vowel(w[w.size() - 2])) w.back() = 'i';
  }

  struct Rule {
    std::string_view suffix, replacement;
  };

  void step2() {
    static constexpr Rule kRules[] = {
        {"anci", "ance"},   {"enci", "ence"},   {"ogi", "og"},      {"li", ""},
        {"bli", "ble"},     {"abli", "able"},   {"alli", "al"},     {"fulli", "ful"},
        {"lessli", "less"}, {"ousli", "ous"},   {"entli", "ent"},   {"aliti", "al"},
        {"biliti", "ble"},  {"iviti", "ive"},   {"tional", "tion"}, {"ational", "ate"},
        {"alism", "al"},    {"ation", "ate"},   {"ization", "ize"}, {"izer", "ize"},
        {"ator", "ate"},    {"iveness", "ive"}, {"fulness", "ful"}, {"ousness", "ous"},
        {"ogist", "og"},
    };
    const Rule* best = nullptr;
    for (const auto& r : kRules)
      if (ends_with(w, r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
    if (!best) return;
    const std::size_t n = best->suffix.size();
    const std::size_t start = w.size() - n;
    if (!in_r1(start)) return;
    if (best->suffix == "ogi") {
      if (start >= 1 && w[start - 1] == 'l') cut(n, "og");
    } else if (best->suffix == "li") {
      if (start >= 1 && is_li_ending(w[start - 1])) cut(n);
    } else {
      cut(n, best->replacement);
    }
  }

  void step3() {
    static constexpr Rule kRules[] = {
        {"icate", "ic"}, {"ative", ""},  {"alize", "al"},   {"iciti", "ic"},   {"ical", "ic"},
        {"tional", "tion"}, {"ational", "ate"}, {"ful", ""}, {"ness", ""},
    };
    const Rule* best = nullptr;
    for (const auto& r : kRules)
      if (ends_with(w, r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
    if (!best) return;
    const std::size_t n = best->suffix.size();
    const std::size_t start = w.size() - n;
    if (!in_r1(start)) return;
    if (best->suffix == "ative" && !in_r2(start)) return;
    cut(n, best->replacement);
  }

  void step4() {
    static constexpr std::string_view kSuffixes[] = {
        "ic",  "ance", "ence", "able", "ible", "ate", "ive", "ize", "iti",
        "al",  "ism",  "ion",  "er",   "ous",  "ant", "ent", "ment", "ement",
    };
    const auto suf = longest_suffix(w, kSuffixes);
    if (suf.empty()) return;
    const std::size_t start = w.size() - suf.size();
    if (!in_r2(start)) return;
    if (suf == "ion" && !(start >= 1 && (w[start - 1] == 's' || w[start - 1] == 't'))) return;
    cut(suf.size());
  }

  void step5() {
    if (w.empty()) return;
    const std::size_t start = w.size() - 1;
    if (w.back() == 'e') {
      if (in_r2(start) || (in_r1(start) && !short_before(start))) cut(1);
    } else if (w.back() == 'l') {
      if (in_r2(start) && start >= 1 && w[start - 1] == 'l') cut(1);
    }
  }
};

inline bool exception1(std::string& w) {
  struct Pair {
    std::string_view from, to;
  };
  static constexpr Pair kSpecial[] = {
      {"andes", "andes"}, {"atlas", "atlas"}, {"bias", "bias"},   {"cosmos", "cosmos"},
      {"early", "earli"}, {"gently", "gentl"}, {"howe", "howe"},  {"idly", "idl"},
      {"news", "news"},   {"only", "onli"},   {"singly", "singl"}, {"skies", "sky"},
      {"skis", "ski"},    {"sky", "sky"},     {"ugly", "ugli"},
  };
  for (const auto& p : kSpecial)
    if (w == p.from) {
      w = std::string(p.to);
      return true;
    }
  return false;
}

}  // namespace detail

/// Stems one lowercase word. Words shorter than three letters come back unchanged.
inline std::string stem(std::string_view input) {
  std::string w(input);
  if (detail::exception1(w)) return w;
  if (w.size() < 3) return w;

  if (w.front() == '\'') w.erase(0, 1);
  // initial y, and y after a vowel, act as consonants until the end
  if (!w.empty() && w[0] == 'y') w[0] = 'Y';
  for (std::size_t i = 1; i < w.size(); ++i)
    if (w[i] == 'y' && detail::is_vowel(w[i - 1])) w[i] = 'Y';

  detail::Stemmer s{std::move(w)};
  s.mark_regions();
  s.step1a();
  s.step1b();
  s.step1c();
  s.step2();
  s.step3();
  s.step4();
  s.step5();

  for (char& c : s.w)
    if (c == 'Y') c = 'y';
  return std::move(s.w);
}

}  // namespace linkmine::snowball
