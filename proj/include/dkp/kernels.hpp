#pragma once

#include <string>

#include "dkp/tape.hpp"

// Kernel functions mapping a Gram matrix to a kernel matrix. All kernels here
// are isotropic / dot-product kernels expressible purely in terms of the Gram
// matrix, so they commute with principal-submatrix extraction and row/column
// permutation.
namespace dkp::kern {

enum class Family { linear, squared_exponential, arccos_relu };

struct KernelSpec {
  Family family = Family::linear;
  double bandwidth = 1.0;  // squared_exponential only
  bool doubled = false;    // arccos_relu scale convention: x2 per layer
};

Family family_from_string(const std::string& name);
std::string family_to_string(Family f);

// R_ij = G_ii - 2 G_ij + G_jj, clamped at zero.
Mat squared_distances(const Mat& g);

// Differentiable kernel application; bandwidth taken from the spec.
ad::Node apply_kernel(const KernelSpec& spec, ad::Node g);
// Variant with the bandwidth on the tape (squared_exponential only).
ad::Node apply_kernel(const KernelSpec& spec, ad::Node g, ad::Node bandwidth);

// Plain evaluation on a throwaway tape.
Mat apply_kernel_plain(const KernelSpec& spec, const Mat& g);

struct ConsistencyReport {
  double submatrix_max_diff = 0.0;    // delete-then-apply vs apply-then-delete
  double permutation_max_diff = 0.0;  // permute-then-apply vs apply-then-permute
  bool ok = false;
};

ConsistencyReport kernel_consistency_check(const KernelSpec& spec, const Mat& g);

}  // namespace dkp::kern
