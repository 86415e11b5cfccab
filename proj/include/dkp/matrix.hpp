#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace dkp {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DecompositionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline double max_abs_diff(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace dkp
