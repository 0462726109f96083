#ifndef VPRG_ERRORS_HPP_
#define VPRG_ERRORS_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vprg {

// Malformed bytes in a binary container; carries the offset where the
// problem was detected.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& message, std::uint64_t byte_offset)
      : std::runtime_error(message + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

// Malformed line in a text or JSONL file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Numerically degenerate input: zero norms, non-finite losses.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vprg

#endif  // VPRG_ERRORS_HPP_
