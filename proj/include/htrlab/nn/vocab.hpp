#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace htrlab::nn {

/// Character vocabulary with the three special tokens at fixed ids.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kSos = 1;
  static constexpr std::int64_t kEos = 2;

  Vocabulary() = default;
  /// Characters are lowercased, deduplicated and sorted.
  explicit Vocabulary(std::string_view chars);
  static Vocabulary lowercase_latin() { return Vocabulary("abcdefghijklmnopqrstuvwxyz"); }

  std::int64_t size() const { return static_cast<std::int64_t>(chars_.size()) + 3; }
  const std::string& chars() const { return chars_; }
  bool contains(char c) const;

  /// Throws IndexOutOfVocab for unknown characters.
  std::int64_t id(char c) const;
  std::vector<std::int64_t> encode(std::string_view text) const;
  /// Specials are dropped.
  std::string decode(const std::vector<std::int64_t>& ids) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::string chars_;
};

/// Row-major [batch, length] id matrix.
struct TokenBatch {
  std::int64_t batch = 0;
  std::int64_t length = 0;
  std::vector<std::int64_t> ids;

  std::int64_t at(std::int64_t b, std::int64_t t) const { return ids[static_cast<std::size_t>(b * length + t)]; }
};

/// Teacher-forcing pair: inputs [SOS, y1..yn] and targets [y1..yn, EOS],
/// both right-padded with PAD to the longest transcription.
struct TeacherBatch {
  TokenBatch inputs;
  TokenBatch targets;
};

TeacherBatch make_teacher_batch(const Vocabulary& vocab, const std::vector<std::string>& texts);

}  // namespace htrlab::nn
