#pragma once

#include <stdexcept>
#include <string>

namespace guiprobe {

// Bad inputs: unreadable files, malformed configs, mismatched corpora.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite losses or gradients, divergent training.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace guiprobe
