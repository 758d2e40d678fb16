#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nsai {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed text input; positions are 1-based.
struct parse_error : error {
  parse_error(const std::string& what, std::size_t line, std::size_t column)
      : error(what + " at line " + std::to_string(line) + ", column " +
              std::to_string(column)),
        line(line),
        column(column) {}

  std::size_t line;
  std::size_t column;
};

struct training_error : error {
  training_error(const std::string& what, std::size_t epoch, std::size_t batch)
      : error(what + " (epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch) + ")"),
        epoch(epoch),
        batch(batch) {}

  std::size_t epoch;
  std::size_t batch;
};

}  // namespace nsai
