#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gccspam {

enum class Errc {
  invalid_argument,
  unknown_character,
  duplicate_character,
  parse_error,
  io_error,
  empty_input,
  zero_frequency,
  missing_vector,
  non_finite,
  zero_vector,
  no_valid_anchors,
  out_of_range,
  length_mismatch,
  single_class,
  client_failure,
  checkpoint_mismatch,
  training_aborted,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), code_(code), line_(line) {}

  Errc code() const noexcept { return code_; }
  // 1-based line number for parse errors, 0 otherwise.
  std::size_t line() const noexcept { return line_; }

 private:
  Errc code_;
  std::size_t line_;
};

// Errors caused by bad user input (files, flags, arguments) as opposed to
// failures during a long-running computation.
inline bool is_input_error(Errc code) {
  switch (code) {
    case Errc::non_finite:
    case Errc::training_aborted:
    case Errc::client_failure:
      return false;
    default:
      return true;
  }
}

}  // namespace gccspam
