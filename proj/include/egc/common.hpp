#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace egc {

/// Dense row-major matrix, templated on scalar. Everything in this library
/// runs in double precision; the alias exists so the storage convention is
/// stated once. Row-major order matches the serialized layout and the
/// row-major argmax scan used for decoding.
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixT<double>;
using Vector = Eigen::VectorXd;

/// A stack of per-node (or per-edge, or per-head) confidence maps.
using MapStack = std::vector<Matrix>;

/// 2D point in map coordinates, (x, y) = (column, row).
using Point2 = Eigen::Vector2d;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mismatched extents, ranks or channel counts.
struct ShapeError : Error {
  using Error::Error;
};

/// A mathematical precondition was violated (zero row, missing self-loop, ...).
struct PreconditionError : Error {
  using Error::Error;
};

/// Invalid or unknown configuration value.
struct ConfigError : Error {
  using Error::Error;
};

/// API misuse: stale cache, mismatched forward/backward pairing.
struct ContractError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

enum class DataErrorCode {
  missing_file,
  bad_magic,
  bad_header,
  truncated,
  shape_mismatch,
  missing_ground_truth,
  bad_value,
};

/// File/dataset level failure with a machine-checkable code.
struct DataError : Error {
  DataErrorCode code;
  DataError(DataErrorCode c, const std::string& msg) : Error(msg), code(c) {}
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline bool all_finite(const MapStack& s) {
  for (const auto& m : s)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace egc
