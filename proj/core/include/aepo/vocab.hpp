#pragma once

#include <cmath>
#include <string>
#include <vector>

namespace aepo {

enum class TokenRole {
  Plain,
  Digit,
  ToolOpen,
  ToolClose,
  ToolResult,
  AnswerMarker,
  End,
};

inline constexpr int kNumTokenRoles = 7;

/// Token inventory for the synthetic tool world. Fixed layout:
///   0..9   digits
///   10     CALL_CALC      (tool-open)
///   11     CALL_LOOKUP    (tool-open)
///   12     END_CALL       (tool-close)
///   13     ANSWER         (answer marker)
///   14     END            (terminal)
///   15     ERR            (tool-result error token)
///   16     SEP            (plain separator)
///   17..   filler         (plain)
/// The minimum usable size is 16 (digits + call grammar + ERR).
class Vocabulary {
 public:
  static Vocabulary standard(int size = 24);

  int size() const { return size_; }
  double ln_size() const { return std::log(static_cast<double>(size_)); }

  TokenRole role(int token) const;
  const std::string& token_name(int token) const;

  bool is_digit(int token) const { return token >= 0 && token <= 9; }
  int digit_value(int token) const { return token; }
  int digit(int value) const { return value; }

  int call_calc() const { return 10; }
  int call_lookup() const { return 11; }
  int end_call() const { return 12; }
  int answer_marker() const { return 13; }
  int end() const { return 14; }
  int error() const { return 15; }
  /// -1 when the vocabulary is too small to carry a separator.
  int separator() const { return size_ > 16 ? 16 : -1; }

 private:
  explicit Vocabulary(int size);
  int size_;
  std::vector<TokenRole> roles_;
  std::vector<std::string> names_;
};

}  // namespace aepo
