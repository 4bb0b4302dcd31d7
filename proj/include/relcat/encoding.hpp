#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relcat/candidates.hpp"

namespace relcat {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kS1 = 4;
inline constexpr TokenId kE1 = 5;
inline constexpr TokenId kS2 = 6;
inline constexpr TokenId kE2 = 7;
inline constexpr TokenId kCount = 8;
inline constexpr std::array<std::string_view, kCount> kNames = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                                "[s1]",  "[e1]",  "[s2]",  "[e2]"};
}  // namespace special

struct Token {
  std::string text;
  std::size_t start = 0;  // scalar offsets into the source text
  std::size_t end = 0;
};

// Whitespace split, then every punctuation character becomes its own token.
std::vector<Token> tokenize(std::string_view text, bool lowercase);

class Vocab {
 public:
  Vocab();  // specials only
  explicit Vocab(std::vector<std::string> tokens);

  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line; line number == id.
  std::string serialize() const;
  static Vocab deserialize(std::string_view content);
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Frequency-ranked word vocabulary, ties broken lexicographically.
Vocab build_vocab(const std::vector<std::string>& corpus_texts, std::size_t max_size, std::size_t min_freq,
                  bool lowercase = true);

enum class MarkerMode { Markers, IndexOnly };
MarkerMode parse_marker_mode(const std::string& s);
std::string to_string(MarkerMode m);

struct EncoderSettings {
  std::size_t max_seq_len = 128;
  std::size_t context_window = 16;
  MarkerMode marker_mode = MarkerMode::Markers;
  bool lowercase = true;

  void validate() const;
};

// Ordered label set; ids are positions.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> labels);
  static LabelSpace from_instances(const std::vector<RelationInstance>& instances);

  int id(const std::string& label) const;  // -1 when absent
  const std::string& label(std::size_t id) const { return labels_.at(id); }
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  bool operator==(const LabelSpace& o) const { return labels_ == o.labels_; }

 private:
  std::vector<std::string> labels_;
};

struct TokenSpan {
  std::size_t start = 0;  // half-open token indices
  std::size_t end = 0;
  std::size_t size() const { return end - start; }
  bool operator==(const TokenSpan&) const = default;
};

struct EncodedInstance {
  std::vector<TokenId> token_ids;
  TokenSpan e1_span;
  TokenSpan e2_span;
  // (s1, e1, s2, e2) marker positions; absent in index-only mode.
  std::optional<std::array<std::size_t, 4>> marker_idx;
  int label_id = -1;
  std::size_t attention_len = 0;

  bool operator==(const EncodedInstance&) const = default;
};

class EncodeError : public Error {
 public:
  using Error::Error;
};

// Marks the two entities, keeps CLS plus `context_window` tokens either side of each
// marked region (SEP where the windows do not touch), and shrinks the window until the
// sequence fits max_seq_len. Four marker slots are budgeted in both modes so that the
// kept tokens never depend on marker_mode.
EncodedInstance encode(const RelationInstance& instance, std::string_view doc_text, const Vocab& vocab,
                       const EncoderSettings& settings, const LabelSpace& labels);

// The kept context tokens (original casing, no specials) joined by single spaces.
std::string context_text(const RelationInstance& instance, std::string_view doc_text,
                         const EncoderSettings& settings);

// Pads every instance's token_ids with PAD to the longest sequence in the batch.
void pad_batch(std::vector<EncodedInstance>& batch);

std::string encoded_to_jsonl(const std::vector<EncodedInstance>& batch);
std::vector<EncodedInstance> encoded_from_jsonl(const std::string& content);

}  // namespace relcat
