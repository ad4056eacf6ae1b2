// SPDX-License-Identifier: Apache-2.0
#include "clmoe/linalg.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>

#include "clmoe/error.hpp"

namespace clmoe {

void require_finite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) throw ValidationError(fmt::format("{} contains non-finite values", what));
}

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) throw ValidationError(fmt::format("{} contains non-finite values", what));
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, std::string_view what) {
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
    throw ValidationError(
        fmt::format("{} has shape {}x{}, expected {}x{}", what, m.rows(), m.cols(), rows, cols));
  }
}

void require_size(const Vector& v, std::size_t n, std::string_view what) {
  if (static_cast<std::size_t>(v.size()) != n) {
    throw ValidationError(fmt::format("{} has length {}, expected {}", what, v.size(), n));
  }
}

Vector softmax(const Vector& logits) {
  const double peak = logits.maxCoeff();
  Vector e = (logits.array() - peak).exp().matrix();
  return e / e.sum();
}

void CompensatedSum::add(const Vector& v) {
  require_size(v, dim(), "summand");
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double t = sum_[i] + v[i];
    if (std::abs(sum_[i]) >= std::abs(v[i])) {
      comp_[i] += (sum_[i] - t) + v[i];
    } else {
      comp_[i] += (v[i] - t) + sum_[i];
    }
    sum_[i] = t;
  }
}

}  // namespace clmoe
