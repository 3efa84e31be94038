#pragma once

#include <stdexcept>
#include <string>

namespace embedkit {

// Every failure the library reports carries one of these kinds so callers
// (notably the CLI) can map errors to exit codes without string matching.
enum class ErrorKind {
  dimension,                // shape/length mismatch between operands
  degenerate_input,         // zero vector where a direction is required
  invalid_input,            // argument outside its documented domain
  parse,                    // malformed record or config text
  generation,               // generator reply unusable after retries
  incompatible_checkpoint,  // arch/kind mismatch between checkpoints
  format_bad_magic,         // checkpoint file: wrong magic bytes
  format_version,           // checkpoint file: unsupported format version
  format_truncated,         // checkpoint file: shorter than header promises
  io,                       // file open/read/write failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace embedkit
