#include "dkp/kernels.hpp"

#include <vector>

namespace dkp::kern {

using ad::Node;
using ad::Tape;

Family family_from_string(const std::string& name) {
  if (name == "linear") return Family::linear;
  if (name == "squared_exponential") return Family::squared_exponential;
  if (name == "arccos_relu") return Family::arccos_relu;
  throw ConfigError("unknown kernel family: " + name +
                    " (valid: linear, squared_exponential, arccos_relu)");
}

std::string family_to_string(Family f) {
  switch (f) {
    case Family::linear: return "linear";
    case Family::squared_exponential: return "squared_exponential";
    case Family::arccos_relu: return "arccos_relu";
  }
  throw ConfigError("invalid kernel family value");
}

Mat squared_distances(const Mat& g) {
  require(g.rows() == g.cols(), "squared_distances: Gram matrix must be square");
  const auto n = g.rows();
  Mat r = g.diagonal() * Mat::Ones(1, n) + Mat::Ones(n, 1) * g.diagonal().transpose() -
          2.0 * g;
  return r.cwiseMax(0.0);
}

Node apply_kernel(const KernelSpec& spec, Node g) {
  if (spec.family == Family::squared_exponential) {
    if (!(spec.bandwidth > 0.0))
      throw ConfigError("squared_exponential kernel requires bandwidth > 0");
    return apply_kernel(spec, g, g.tape->scalar(spec.bandwidth));
  }
  return apply_kernel(spec, g, Node{});
}

Node apply_kernel(const KernelSpec& spec, Node g, Node bandwidth) {
  switch (spec.family) {
    case Family::linear:
      return g;
    case Family::squared_exponential: {
      Node r = ad::sq_dist_from_gram(g);
      Node bw2 = ad::hadamard(bandwidth, bandwidth);
      Node k = ad::vexp(ad::scale(ad::div_scalar(r, bw2), -0.5));
      if (!all_finite(k.value()))
        throw NumericError("squared_exponential kernel produced non-finite values");
      return k;
    }
    case Family::arccos_relu: {
      if ((g.value().diagonal().array() < 0.0).any())
        throw DomainError("arccos_relu kernel requires a non-negative diagonal");
      return ad::arccos_relu_kernel(g, spec.doubled);
    }
  }
  throw ConfigError("invalid kernel family value");
}

Mat apply_kernel_plain(const KernelSpec& spec, const Mat& g) {
  Tape t;
  return apply_kernel(spec, t.leaf(g)).value();
}

ConsistencyReport kernel_consistency_check(const KernelSpec& spec, const Mat& g) {
  ConsistencyReport rep;
  const auto n = g.rows();
  Mat k = apply_kernel_plain(spec, g);

  // Deleting each row/column before or after the kernel must agree exactly.
  for (Eigen::Index r = 0; r < n; ++r) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != r) keep.push_back(i);
    Mat sub(n - 1, n - 1);
    for (Eigen::Index i = 0; i < n - 1; ++i)
      for (Eigen::Index j = 0; j < n - 1; ++j) sub(i, j) = g(keep[i], keep[j]);
    Mat k_of_sub = apply_kernel_plain(spec, sub);
    for (Eigen::Index i = 0; i < n - 1; ++i)
      for (Eigen::Index j = 0; j < n - 1; ++j)
        rep.submatrix_max_diff = std::max(
            rep.submatrix_max_diff, std::fabs(k_of_sub(i, j) - k(keep[i], keep[j])));
  }

  // Reversal permutation: apply-then-permute vs permute-then-apply.
  Mat pm = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) pm(i, n - 1 - i) = 1.0;
  Mat lhs = apply_kernel_plain(spec, Mat(pm * g * pm.transpose()));
  Mat rhs = pm * k * pm.transpose();
  rep.permutation_max_diff = (lhs - rhs).cwiseAbs().maxCoeff();

  rep.ok = rep.submatrix_max_diff == 0.0 && rep.permutation_max_diff == 0.0;
  return rep;
}

}  // namespace dkp::kern
