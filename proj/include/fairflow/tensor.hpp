#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "fairflow/error.hpp"

namespace fairflow {

/// Dense row-major matrix of doubles. Batches are rows, features are columns.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

inline std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << '(' << t.rows() << 'x' << t.cols() << ')';
  return os.str();
}

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

inline void require_cols(const Tensor& t, Index cols, const char* what) {
  if (t.cols() != cols) {
    std::ostringstream os;
    os << what << ": expected " << cols << " columns, got " << shape_str(t);
    throw ShapeError(os.str());
  }
}

/// Copies the listed columns of `src` into a new matrix.
inline Tensor gather_cols(const Tensor& src, const std::vector<Index>& cols) {
  Tensor out(src.rows(), static_cast<Index>(cols.size()));
  for (Index c = 0; c < out.cols(); ++c) out.col(c) = src.col(cols[static_cast<std::size_t>(c)]);
  return out;
}

inline Tensor gather_rows(const Tensor& src, const std::vector<Index>& rows) {
  Tensor out(static_cast<Index>(rows.size()), src.cols());
  for (Index r = 0; r < out.rows(); ++r) out.row(r) = src.row(rows[static_cast<std::size_t>(r)]);
  return out;
}

inline Tensor scalar_tensor(double v) {
  Tensor t(1, 1);
  t(0, 0) = v;
  return t;
}

}  // namespace fairflow
