#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace phonolens {

enum class ErrorKind {
  io,
  parse,
  empty_lexicon,
  not_found,
  no_vowel,
  kind,
  address,
  shape,
  length,
  index,
  argument,
  tokenization,
  insufficient_data,
  training,
  spec,
  pair,
  degenerate_pair,
  degenerate_denominator,
  scan,
  insufficient_tokens,
  undefined_cosine,
  collection,
  rank,
  gated_resource,
  usage,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace phonolens
