#pragma once

// Bundled English stop word list, version 1.
//
// The Snowball English list, extended with modal verbs and the discourse
// connectives that are common in abstracts ("thus", "however", ...). Content
// words such as "level", "system" or "study" are deliberately absent.

#include <algorithm>
#include <array>
#include <string_view>

namespace linkmine {

inline constexpr int kStopWordListVersion = 1;

namespace detail {
// Kept sorted so lookups can binary search.
inline constexpr auto kStopWords = std::to_array<std::string_view>({
    "a",          "about",      "above",     "accordingly", "across",    "after",
    "afterwards", "again",      "against",   "albeit",      "all",       "almost",
    "along",      "already",    "also",      "although",    "always",    "am",
    "among",      "amongst",    "an",        "and",         "another",   "any",
    "are",        "aren't",     "around",    "as",          "at",        "be",
    "became",     "because",    "become",    "becomes",     "been",      "before",
    "being",      "below",      "besides",   "between",     "beyond",    "both",
    "but",        "by",         "can",       "can't",       "cannot",    "could",
    "couldn't",   "did",        "didn't",    "do",          "does",      "doesn't",
    "doing",      "don't",      "down",      "due",         "during",    "each",
    "either",     "else",       "etc",       "even",        "ever",      "every",
    "few",        "for",        "from",      "further",     "furthermore", "had",
    "hadn't",     "has",        "hasn't",    "have",        "haven't",   "having",
    "he",         "he'd",       "he'll",     "he's",        "hence",     "her",
    "here",       "here's",     "hers",      "herself",     "him",       "himself",
    "his",        "how",        "how's",     "however",     "i",         "i'd",
    "i'll",       "i'm",        "i've",      "ie",          "if",        "in",
    "indeed",     "into",       "is",        "isn't",       "it",        "it's",
    "its",        "itself",     "just",      "let's",       "may",       "me",
    "might",      "more",       "moreover",  "most",        "much",      "must",
    "mustn't",    "my",         "myself",    "namely",      "neither",   "nevertheless",
    "no",         "nor",        "not",       "of",          "off",       "often",
    "on",         "once",       "only",      "onto",        "or",        "other",
    "others",     "otherwise",  "ought",     "our",         "ours",      "ourselves",
    "out",        "over",       "own",       "per",         "perhaps",   "rather",
    "same",       "shall",      "shan't",    "she",         "she'd",     "she'll",
    "she's",      "should",     "shouldn't", "since",       "so",        "some",
    "still",      "such",       "than",      "that",        "that's",    "the",
    "their",      "theirs",     "them",      "themselves",  "then",      "there",
    "there's",    "thereby",    "therefore", "these",       "they",      "they'd",
    "they'll",    "they're",    "they've",   "this",        "those",     "though",
    "through",    "throughout", "thus",      "to",          "too",       "toward",
    "towards",    "under",      "unless",    "until",       "up",        "upon",
    "us",         "very",       "via",       "was",         "wasn't",    "we",
    "we'd",       "we'll",      "we're",     "we've",       "were",      "weren't",
    "what",       "what's",     "whatever",  "when",        "when's",    "where",
    "where's",    "whereas",    "whereby",   "whether",     "which",     "while",
    "who",        "who's",      "whom",      "whose",       "why",       "why's",
    "will",       "with",       "within",    "without",     "won't",     "would",
    "wouldn't",   "yet",        "you",       "you'd",       "you'll",    "you're",
    "you've",     "your",       "yours",     "yourself",    "yourselves",
});
}  // namespace detail

inline bool is_stop_word(std::string_view w) {
  return std::binary_search(detail::kStopWords.begin(), detail::kStopWords.end(), w);
}

}  // namespace linkmine
