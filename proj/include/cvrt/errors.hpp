#pragma once

#include <stdexcept>
#include <string>

namespace cvrt {

// Bad or inconsistent input data (corpus, vocab, model files). CLI exit 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Training diverged past the skip budget. CLI exit 3.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cvrt
