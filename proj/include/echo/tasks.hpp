// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "echo/errors.hpp"

namespace echo {

using TokenSeq = std::vector<std::size_t>;

struct SampleMeta {
  std::optional<std::size_t> trigger_position;    // 1-based
  std::vector<std::size_t> distractor_positions;  // 1-based, ascending
  bool operator==(const SampleMeta&) const = default;
};

struct Sample {
  TokenSeq tokens;
  std::size_t label = 0;
  SampleMeta meta;
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::string task;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  /// Throws DataError if any token, label or trigger position is out of range.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

// --- distractor signal task -------------------------------------------------
//
// Token ids 0 .. noise_vocab_size-1 are noise. The next num_classes ids are
// trigger tokens; trigger id noise_vocab_size + k signals class k. The true
// trigger sits inside [window_lo, window_hi]; false triggers of other classes
// sit strictly after the window.

struct DistractorSpec {
  std::size_t seq_len = 50;
  std::size_t window_lo = 1;
  std::size_t window_hi = 10;
  std::size_t num_classes = 4;
  std::size_t num_distractors = 3;
  std::size_t noise_vocab_size = 8;
  std::uint64_t seed = 0;

  std::size_t vocab_size() const noexcept { return noise_vocab_size + num_classes; }
  std::size_t trigger_token(std::size_t cls) const noexcept { return noise_vocab_size + cls; }
  bool is_trigger(std::size_t token) const noexcept {
    return token >= noise_vocab_size && token < vocab_size();
  }
  /// Throws SpecError if the window or distractor count cannot be honoured.
  void validate() const;
};

Dataset gen_distractor(const DistractorSpec& spec, std::size_t n);

/// Same generator with the true trigger pinned at `trigger_position`
/// (1-based). Distractors still sit after the window and never on the
/// trigger position.
Dataset gen_distractor_shifted(const DistractorSpec& spec, std::size_t trigger_position,
                               std::size_t n);

/// Copy of `data` with every true trigger replaced by a noise token. All
/// other tokens are untouched, so the pair shares its noise exactly.
Dataset strip_triggers(const Dataset& data, const DistractorSpec& spec, std::uint64_t seed);

// --- ListOps ----------------------------------------------------------------

enum class ListOp : std::uint8_t { max, min, med, sm };

/// Token ids: digits 0-9 are ids 0-9, then '[', ']', MAX, MIN, MED, SM.
namespace listops_token {
inline constexpr std::size_t open = 10;
inline constexpr std::size_t close = 11;
inline constexpr std::size_t op_base = 12;
inline constexpr std::size_t vocab_size = 16;
}  // namespace listops_token

struct ListOpsSpec {
  std::size_t max_depth = 4;
  std::size_t max_args = 4;
  std::size_t min_length = 5;
  std::size_t max_length = 128;
  /// Chance that an argument below max_depth is itself an expression.
  double nest_probability = 0.3;
  std::uint64_t seed = 0;

  static constexpr std::size_t num_classes = 10;
  void validate() const;
};

/// Evaluates an expression such as "[MAX 9 8 [MIN 2 3]]". SM is the sum
/// modulo 10, MED the lower median. Throws ParseError with the character
/// offset of the first problem.
int eval_listops(std::string_view expr);
/// Same evaluation over token ids.
int eval_listops(std::span<const std::size_t> tokens);

std::string listops_to_string(std::span<const std::size_t> tokens);
TokenSeq listops_tokenize(std::string_view expr);

Dataset gen_listops(const ListOpsSpec& spec, std::size_t n);

// --- splitting & persistence ------------------------------------------------

struct Splits {
  Dataset train, val, test;
};

/// Seeded shuffle, then cut by fractions (which must be positive and sum
/// to 1). Throws SpecError if a split would be empty.
Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

inline constexpr int kDatasetFormatVersion = 1;

/// Line format: header "#echo-dataset v1 task=<t> vocab_size=<v>
/// num_classes=<c>", then one sample per line:
/// "<id> <id> ...\t<label>[\ttrigger=<p> distractors=<p>,<p>,...]".
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace echo
