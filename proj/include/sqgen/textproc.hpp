#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sqgen {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNumSpecials = 4;

// Prefix carried by word-initial subwords (U+2581).
inline constexpr std::string_view kWordMarker = "\xE2\x96\x81";

// Byte-pair-encoding vocabulary shared by the encoder and decoder.
//
// Ids are contiguous; the four specials occupy 0..3. Merges are ranked in the
// order they were learned and `encode` replays them by rank.
class Vocab {
 public:
  Vocab();

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(int id) const;
  // kUnk when absent.
  int id_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const noexcept {
    return merges_;
  }
  bool lowercase() const noexcept { return lowercase_; }
  void set_lowercase(bool on) noexcept { lowercase_ = on; }

  // Appends a token and returns its id, or the existing id.
  int add_token(const std::string& token);
  void add_merge(std::string left, std::string right);
  // Merge rank, or -1 when the pair is not a learned merge.
  int merge_rank(std::string_view left, std::string_view right) const;

  void save(std::ostream& os) const;
  static Vocab load(std::istream& is);
  void save_file(const std::string& path) const;
  static Vocab load_file(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> merge_ranks_;
  bool lowercase_ = true;
};

struct TrainVocabOptions {
  bool lowercase = true;
};

Vocab train_vocab(std::span<const std::string> corpus, std::size_t target_size,
                  const TrainVocabOptions& options = {});

std::vector<int> encode(std::string_view text, const Vocab& vocab);

// Encodes text with a per-byte tag and returns one tag per token. Words are
// split where the tag changes; the trailing piece continues the word without
// a boundary marker, so `decode` still reproduces the text.
struct TaggedIds {
  std::vector<int> ids;
  std::vector<int> tags;
};
TaggedIds encode_tagged(std::string_view text, std::span<const int> byte_tags, const Vocab& vocab);

std::string decode(std::span<const int> ids, const Vocab& vocab);

// Collapses whitespace runs to one space, trims both ends and applies the
// vocabulary's case folding.
std::string normalize_text(std::string_view text, bool lowercase = true);

// UTF-8 code point boundaries: returns byte offsets of each code point start
// plus a final entry equal to text.size().
std::vector<std::size_t> codepoint_offsets(std::string_view text);

}  // namespace sqgen
