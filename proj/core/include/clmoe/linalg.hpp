// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string_view>

namespace clmoe {

// All tensors are 64-bit. Matrices follow the row-vector convention used by
// the adapter equations: a weight of shape in x out maps x (length in) to
// W^T x (length out).
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Throws ValidationError naming `what` when `v` holds NaN or Inf.
void require_finite(const Vector& v, std::string_view what);
void require_finite(const Matrix& m, std::string_view what);

/// Throws ValidationError unless `m` is rows x cols.
void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, std::string_view what);
void require_size(const Vector& v, std::size_t n, std::string_view what);

/// Numerically stable softmax.
Vector softmax(const Vector& logits);

/// Neumaier-compensated accumulator for long streams of vectors.
class CompensatedSum {
 public:
  explicit CompensatedSum(std::size_t dim = 0) : sum_(Vector::Zero(dim)), comp_(Vector::Zero(dim)) {}

  void add(const Vector& v);
  std::size_t dim() const { return static_cast<std::size_t>(sum_.size()); }
  Vector total() const { return sum_ + comp_; }

 private:
  Vector sum_;
  Vector comp_;
};

}  // namespace clmoe
