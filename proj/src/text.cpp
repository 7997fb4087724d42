#include "divgen/text.hpp"

#include <fstream>
#include <stdexcept>

namespace divgen {

namespace {

bool is_token_byte(unsigned char c) {
  if (c >= 0x80) return true;  // keep multi-byte UTF-8 sequences intact
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

void split_lower(std::string_view text, const StopwordSet& stopwords, TokenSet& out) {
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !stopwords.count(cur)) out.insert(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (is_token_byte(c)) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
    } else {
      flush();
    }
  }
  flush();
}

}  // namespace

TokenSet tokenize(std::string_view text, const StopwordSet& stopwords) {
  TokenSet out;
  split_lower(text, stopwords, out);
  return out;
}

const StopwordSet& default_stopwords() {
  static const StopwordSet words = {
      "a",       "about",   "above",   "after",   "again",   "against", "ain",
      "all",     "am",      "an",      "and",     "any",     "are",     "aren",
      "as",      "at",      "be",      "because", "been",    "before",  "being",
      "below",   "between", "both",    "but",     "by",      "can",     "couldn",
      "d",       "did",     "didn",    "do",      "does",    "doesn",   "doing",
      "don",     "down",    "during",  "each",    "few",     "for",     "from",
      "further", "had",     "hadn",    "has",     "hasn",    "have",    "haven",
      "having",  "he",      "her",     "here",    "hers",    "herself", "him",
      "himself", "his",     "how",     "i",       "if",      "in",      "into",
      "is",      "isn",     "it",      "its",     "itself",  "just",    "ll",
      "m",       "ma",      "me",      "mightn",  "more",    "most",    "mustn",
      "my",      "myself",  "needn",   "no",      "nor",     "not",     "now",
      "o",       "of",      "off",     "on",      "once",    "only",    "or",
      "other",   "our",     "ours",    "ourselves", "out",   "over",    "own",
      "re",      "s",       "same",    "shan",    "she",     "should",  "shouldn",
      "so",      "some",    "such",    "t",       "than",    "that",    "the",
      "their",   "theirs",  "them",    "themselves", "then", "there",   "these",
      "they",    "this",    "those",   "through", "to",      "too",     "under",
      "until",   "up",      "ve",      "very",    "was",     "wasn",    "we",
      "were",    "weren",   "what",    "when",    "where",   "which",   "while",
      "who",     "whom",    "why",     "will",    "with",    "won",     "wouldn",
      "y",       "you",     "your",    "yours",   "yourself", "yourselves",
  };
  return words;
}

StopwordSet load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stopword file: " + path);
  StopwordSet out;
  StopwordSet empty;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    for (const auto& tok : tokenize(line, empty)) out.insert(tok);
  }
  return out;
}

}  // namespace divgen
