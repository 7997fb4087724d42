#pragma once

#include <set>
#include <string>
#include <string_view>

namespace divgen {

/// Lowercased word tokens with stop words removed. A std::set keeps
/// iteration order deterministic for serialization and Jaccard loops.
using TokenSet = std::set<std::string>;

using StopwordSet = std::set<std::string>;

/// Splits on every non-alphanumeric ASCII byte, lowercases A-Z, keeps
/// UTF-8 continuation bytes inside tokens, then drops stopwords.
/// Deterministic; empty input yields an empty set.
TokenSet tokenize(std::string_view text, const StopwordSet& stopwords);

/// Bundled English stop-word list (contraction fragments included, since
/// the tokenizer splits on apostrophes).
const StopwordSet& default_stopwords();

/// Loads a stop-word file: one entry per line, UTF-8, '#' comments allowed.
/// Entries are passed through the tokenizer so "aren't" covers {aren, t}.
StopwordSet load_stopwords(const std::string& path);

}  // namespace divgen
