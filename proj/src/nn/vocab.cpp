#include "htrlab/nn/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "htrlab/error.hpp"

namespace htrlab::nn {

Vocabulary::Vocabulary(std::string_view chars) {
  for (char c : chars) chars_.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  std::sort(chars_.begin(), chars_.end());
  chars_.erase(std::unique(chars_.begin(), chars_.end()), chars_.end());
}

bool Vocabulary::contains(char c) const { return std::binary_search(chars_.begin(), chars_.end(), c); }

std::int64_t Vocabulary::id(char c) const {
  auto it = std::lower_bound(chars_.begin(), chars_.end(), c);
  require(it != chars_.end() && *it == c, ErrorCode::IndexOutOfVocab,
          std::string("character '") + c + "' is not in the vocabulary");
  return static_cast<std::int64_t>(it - chars_.begin()) + 3;
}

std::vector<std::int64_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::int64_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id(c));
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::int64_t>& ids) const {
  std::string out;
  for (auto i : ids) {
    if (i < 3 || i >= size()) continue;
    out.push_back(chars_[static_cast<std::size_t>(i - 3)]);
  }
  return out;
}

TeacherBatch make_teacher_batch(const Vocabulary& vocab, const std::vector<std::string>& texts) {
  TeacherBatch tb;
  std::size_t longest = 0;
  for (const auto& t : texts) longest = std::max(longest, t.size());
  const auto L = static_cast<std::int64_t>(longest + 1);
  const auto N = static_cast<std::int64_t>(texts.size());
  tb.inputs = {N, L, std::vector<std::int64_t>(static_cast<std::size_t>(N * L), Vocabulary::kPad)};
  tb.targets = tb.inputs;
  for (std::int64_t b = 0; b < N; ++b) {
    const auto ids = vocab.encode(texts[static_cast<std::size_t>(b)]);
    auto* in = tb.inputs.ids.data() + b * L;
    auto* out = tb.targets.ids.data() + b * L;
    in[0] = Vocabulary::kSos;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      in[i + 1] = ids[i];
      out[i] = ids[i];
    }
    out[ids.size()] = Vocabulary::kEos;
  }
  return tb;
}

}  // namespace htrlab::nn
