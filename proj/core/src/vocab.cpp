#include "aepo/vocab.hpp"

#include "aepo/errors.hpp"

namespace aepo {

Vocabulary Vocabulary::standard(int size) {
  if (size < 16) {
    throw ConfigError("vocabulary size must be >= 16, got " +
                      std::to_string(size));
  }
  return Vocabulary(size);
}

Vocabulary::Vocabulary(int size) : size_(size) {
  roles_.resize(size_, TokenRole::Plain);
  names_.resize(size_);
  for (int d = 0; d <= 9; ++d) {
    roles_[d] = TokenRole::Digit;
    names_[d] = std::to_string(d);
  }
  roles_[10] = TokenRole::ToolOpen;
  names_[10] = "CALL_CALC";
  roles_[11] = TokenRole::ToolOpen;
  names_[11] = "CALL_LOOKUP";
  roles_[12] = TokenRole::ToolClose;
  names_[12] = "END_CALL";
  roles_[13] = TokenRole::AnswerMarker;
  names_[13] = "ANSWER";
  roles_[14] = TokenRole::End;
  names_[14] = "END";
  roles_[15] = TokenRole::ToolResult;
  names_[15] = "ERR";
  if (size_ > 16) names_[16] = "SEP";
  for (int t = 17; t < size_; ++t) {
    names_[t] = "F" + std::to_string(t - 17);
  }
}

TokenRole Vocabulary::role(int token) const {
  if (token < 0 || token >= size_) {
    throw UsageError("token id out of range: " + std::to_string(token));
  }
  return roles_[token];
}

const std::string& Vocabulary::token_name(int token) const {
  if (token < 0 || token >= size_) {
    throw UsageError("token id out of range: " + std::to_string(token));
  }
  return names_[token];
}

}  // namespace aepo
