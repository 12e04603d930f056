#pragma once

#include <stdexcept>

namespace stmixer {

// Malformed or missing external data (manifests, raw volumes, CSVs).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric breakdown at runtime (non-finite loss, failed gradient check).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stmixer
