#ifndef ASC_COMMON_HPP
#define ASC_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <vector>

namespace asc {

using Scalar = double;
using Index = std::ptrdiff_t;

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Matrix = MatrixX<Scalar>;
using Vector = VectorX<Scalar>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

// Tensor storage. Every buffer starts on the vector-register boundary, so
// Eigen reductions over it sum in the same order wherever the heap puts it.
using Buffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

/// All stochastic components draw from an explicitly passed engine.
using Rng = std::mt19937_64;

/// Base of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or invalid arguments to a numeric routine.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, tracks, configs).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// git-describe style version baked in at configure time.
const char* version_string();

}  // namespace asc

#endif  // ASC_COMMON_HPP
