#include "sqgen/textproc.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "sqgen/error.hpp"

namespace sqgen {

namespace {

constexpr const char* kSpecialTokens[kNumSpecials] = {"[PAD]", "[UNK]", "[BOS]", "[EOS]"};
constexpr std::string_view kMergesSentinel = "#MERGES";

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char fold(char c, bool lowercase) {
  if (lowercase && c >= 'A' && c <= 'Z') return static_cast<char>(c - 'A' + 'a');
  return c;
}

std::size_t codepoint_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: treat as its own symbol
}

// Splits a piece of a word into code point symbols; the first symbol carries
// the boundary marker when the piece starts a word.
std::vector<std::string> initial_symbols(std::string_view piece, bool word_start, bool lowercase) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < piece.size()) {
    const std::size_t len =
        std::min(codepoint_length(static_cast<unsigned char>(piece[i])), piece.size() - i);
    std::string sym;
    if (out.empty() && word_start) sym.assign(kWordMarker);
    for (std::size_t k = 0; k < len; ++k) sym.push_back(fold(piece[i + k], lowercase));
    out.push_back(std::move(sym));
    i += len;
  }
  return out;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

void apply_ranked_merges(std::vector<std::string>& symbols, const Vocab& vocab) {
  while (symbols.size() > 1) {
    int best_rank = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const int r = vocab.merge_rank(symbols[i], symbols[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) {
        best_rank = r;
        best_pos = i;
      }
    }
    if (best_rank < 0) break;
    const std::string left = symbols[best_pos];
    const std::string right = symbols[best_pos + 1];
    apply_merge(symbols, left, right);
  }
}

struct WordSpan {
  std::size_t begin;
  std::size_t end;
};

std::vector<WordSpan> split_words(std::string_view text) {
  std::vector<WordSpan> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.push_back({start, i});
  }
  return words;
}

std::string merge_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left);
  key.push_back('\n');
  key.append(right);
  return key;
}

}  // namespace

Vocab::Vocab() {
  for (const char* s : kSpecialTokens) add_token(s);
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorKind::InvalidTokenId, "token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::id_of(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

int Vocab::add_token(const std::string& token) {
  const auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

void Vocab::add_merge(std::string left, std::string right) {
  const std::string key = merge_key(left, right);
  if (merge_ranks_.count(key)) return;
  merge_ranks_.emplace(key, static_cast<int>(merges_.size()));
  merges_.emplace_back(std::move(left), std::move(right));
}

int Vocab::merge_rank(std::string_view left, std::string_view right) const {
  const auto it = merge_ranks_.find(merge_key(left, right));
  return it == merge_ranks_.end() ? -1 : it->second;
}

void Vocab::save(std::ostream& os) const {
  for (const auto& t : tokens_) os << t << '\n';
  os << kMergesSentinel << '\n';
  for (const auto& [l, r] : merges_) os << l << ' ' << r << '\n';
}

Vocab Vocab::load(std::istream& is) {
  Vocab v;
  v.tokens_.clear();
  v.ids_.clear();
  std::string line;
  bool in_merges = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!in_merges) {
      if (line == kMergesSentinel) {
        in_merges = true;
        continue;
      }
      if (v.ids_.count(line)) throw Error(ErrorKind::FormatError, "duplicate token: " + line);
      v.add_token(line);
    } else {
      if (line.empty()) continue;
      const auto space = line.find(' ');
      if (space == std::string::npos || space == 0 || space + 1 == line.size()) {
        throw Error(ErrorKind::FormatError, "malformed merge line: " + line);
      }
      v.add_merge(line.substr(0, space), line.substr(space + 1));
    }
  }
  if (v.tokens_.size() < static_cast<std::size_t>(kNumSpecials)) {
    throw Error(ErrorKind::FormatError, "vocabulary lacks special tokens");
  }
  for (int i = 0; i < kNumSpecials; ++i) {
    if (v.tokens_[static_cast<std::size_t>(i)] != kSpecialTokens[i]) {
      throw Error(ErrorKind::FormatError, "special token mismatch at id " + std::to_string(i));
    }
  }
  return v;
}

void Vocab::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  save(os);
}

Vocab Vocab::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + path);
  return load(is);
}

Vocab train_vocab(std::span<const std::string> corpus, std::size_t target_size,
                  const TrainVocabOptions& options) {
  if (corpus.empty()) throw Error(ErrorKind::InvalidCorpus, "empty corpus");

  // Word types with frequencies, keyed by their folded spelling.
  std::map<std::string, long long> word_counts;
  for (const auto& line : corpus) {
    for (const auto& w : split_words(line)) {
      std::string word(line.substr(w.begin, w.end - w.begin));
      for (char& c : word) c = fold(c, options.lowercase);
      ++word_counts[word];
    }
  }
  if (word_counts.empty()) throw Error(ErrorKind::InvalidCorpus, "corpus has no words");

  struct WordEntry {
    std::vector<std::string> symbols;
    long long count;
  };
  std::vector<WordEntry> words;
  std::set<std::string> alphabet;
  for (const auto& [w, c] : word_counts) {
    auto syms = initial_symbols(w, true, false);
    alphabet.insert(syms.begin(), syms.end());
    words.push_back({std::move(syms), c});
  }
  if (target_size < alphabet.size() + kNumSpecials) {
    throw Error(ErrorKind::InvalidSize, "target size " + std::to_string(target_size) +
                                            " below alphabet size " +
                                            std::to_string(alphabet.size()) + " + specials");
  }

  Vocab vocab;
  vocab.set_lowercase(options.lowercase);
  for (const auto& s : alphabet) vocab.add_token(s);

  while (vocab.size() < target_size) {
    std::map<std::pair<std::string, std::string>, long long> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    if (pair_counts.empty()) break;
    // Highest count wins; ties go to the lexicographically smallest merged string.
    const std::pair<std::string, std::string>* best = nullptr;
    long long best_count = 0;
    std::string best_merged;
    for (const auto& [pair, count] : pair_counts) {
      std::string merged = pair.first + pair.second;
      if (!best || count > best_count || (count == best_count && merged < best_merged)) {
        best = &pair;
        best_count = count;
        best_merged = std::move(merged);
      }
    }
    vocab.add_merge(best->first, best->second);
    vocab.add_token(best_merged);
    for (auto& w : words) apply_merge(w.symbols, best->first, best->second);
  }
  return vocab;
}

TaggedIds encode_tagged(std::string_view text, std::span<const int> byte_tags, const Vocab& vocab) {
  const bool tagged = !byte_tags.empty();
  if (tagged && byte_tags.size() != text.size()) {
    throw Error(ErrorKind::InvalidInput, "one tag per byte required");
  }
  TaggedIds out;
  for (const auto& w : split_words(text)) {
    std::size_t piece_start = w.begin;
    while (piece_start < w.end) {
      std::size_t piece_end = piece_start;
      const int tag = tagged ? byte_tags[piece_start] : 0;
      while (piece_end < w.end) {
        const std::size_t len = codepoint_length(static_cast<unsigned char>(text[piece_end]));
        if (tagged && byte_tags[piece_end] != tag) break;
        piece_end = std::min(piece_end + len, w.end);
      }
      auto symbols = initial_symbols(text.substr(piece_start, piece_end - piece_start),
                                     piece_start == w.begin, vocab.lowercase());
      apply_ranked_merges(symbols, vocab);
      for (const auto& s : symbols) {
        out.ids.push_back(vocab.id_of(s));
        out.tags.push_back(tag);
      }
      piece_start = piece_end;
    }
  }
  return out;
}

std::vector<int> encode(std::string_view text, const Vocab& vocab) {
  return encode_tagged(text, {}, vocab).ids;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id < kNumSpecials) continue;
    if (tok.compare(0, kWordMarker.size(), kWordMarker) == 0) {
      if (!out.empty()) out.push_back(' ');
      out.append(tok, kWordMarker.size());
    } else {
      out.append(tok);
    }
  }
  return out;
}

std::string normalize_text(std::string_view text, bool lowercase) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out.push_back(' ');
    for (std::size_t i = w.begin; i < w.end; ++i) out.push_back(fold(text[i], lowercase));
  }
  return out;
}

std::vector<std::size_t> codepoint_offsets(std::string_view text) {
  std::vector<std::size_t> offsets;
  std::size_t i = 0;
  while (i < text.size()) {
    offsets.push_back(i);
    i = std::min(i + codepoint_length(static_cast<unsigned char>(text[i])), text.size());
  }
  offsets.push_back(text.size());
  return offsets;
}

}  // namespace sqgen
