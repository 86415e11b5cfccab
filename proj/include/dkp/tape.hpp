#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <unordered_map>
#include <vector>

#include "dkp/matrix.hpp"

// Reverse-mode differentiation over dense matrices. A Tape owns the node
// storage and the RNG used by any stochastic primitive recorded on it;
// replaying a forward pass with the same seed reproduces values bit-for-bit.
// Tapes are confined to a single thread.
namespace dkp::ad {

class Tape;

struct Node {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  double scalar() const;
};

class Tape {
 public:
  explicit Tape(std::uint64_t seed = 0);

  Node leaf(Mat value);
  Node scalar(double value);

  double uniform();
  double normal();
  Mat normal_mat(int rows, int cols);

  // Seeds grad(root) = 1 (root must be 1x1) and accumulates gradients into
  // every upstream node, visiting each node once in reverse creation order.
  void backward(Node root);
  // Gradient accumulated in the last backward() call; zero matrix if the
  // node was not reached.
  Mat grad(Node n) const;

  std::size_t size() const { return nodes_.size(); }

  // -- used by op implementations --
  using Pull = std::function<void(Tape&, const Mat& out_grad)>;
  Node emplace(Mat value, std::vector<int> parents, Pull pull);
  void accumulate(int id, const Mat& g);
  const Mat& value_of(int id) const { return nodes_[id].value; }
  void set_jitter(int id, double jitter) { jitter_[id] = jitter; }
  double jitter_of(int id) const {
    auto it = jitter_.find(id);
    return it == jitter_.end() ? 0.0 : it->second;
  }

 private:
  struct Record {
    Mat value;
    Mat grad;
    bool has_grad = false;
    std::vector<int> parents;
    Pull pull;
  };
  std::vector<Record> nodes_;
  std::unordered_map<int, double> jitter_;
  std::mt19937_64 rng_;
};

// Core linear algebra.
Node matmul(Node a, Node b);
Node add(Node a, Node b);
Node sub(Node a, Node b);
Node neg(Node a);
Node scale(Node a, double s);
Node transpose(Node a);
Node hadamard(Node a, Node b);
// a * s and a / s with s a 1x1 node.
Node mul_scalar(Node a, Node s);
Node div_scalar(Node a, Node s);
Node div_elem(Node a, Node b);
Node sum(Node a);
Node trace(Node a);
Node slice_block(Node a, int row0, int col0, int rows, int cols);
Node vcat(Node a, Node b);
// Symmetric 2x2 block assembly [[ii, it], [it^T, tt]].
Node sym_block2(Node ii, Node it, Node tt);

// Elementwise maps.
Node vexp(Node a);
Node vlog(Node a);
Node vsqrt(Node a);
Node softplus(Node a);

// Factorizations and solves. cholesky() escalates jitter through
// {0, 1e-10, 1e-8, 1e-6, 1e-4} * mean(diag) and throws DecompositionError
// listing the attempted levels if all fail.
Node cholesky(Node a);
double cholesky_jitter(Node l);  // jitter applied when l was produced
// Solves op(L) X = B with L lower-triangular (op = transpose if trans_l).
Node trisolve(Node l, Node b, bool trans_l);
Node logdet_psd(Node a);
// Sum of the logs of the diagonal (e.g. half the log-determinant from a
// Cholesky factor); requires a strictly positive diagonal.
Node sum_log_diag(Node a);

// Scalar special functions on 1x1 nodes.
Node lgamma_n(Node a);
Node digamma_n(Node a);
Node mvlgamma_n(Node a, int p);

// Row/column helpers.
Node colwise_dot(Node a, Node b);        // 1 x cols
Node rows_scale(Node m, Node v);         // row i scaled by v(i), v is n x 1
Node log_softmax_rows(Node m);
Node select_cols_per_row(Node m, const std::vector<int>& cols);  // n x 1

// Diagonal of a square matrix as a column vector.
Node diag_col(Node a);
// Elementwise max(a, lo); gradient passes through only where a > lo.
Node clamp_min(Node a, double lo);

// Kernel-specific primitives with analytic reverse rules.
Node sq_dist_from_gram(Node g);
Node arccos_relu_kernel(Node g, bool doubled);
// Cross-block arc-cosine kernel between two point sets given their Gram
// diagonals (d: P_i x 1, g_tt: P_t x 1) and cross inner products (P_i x P_t).
Node arccos_relu_cross(Node d_col, Node g_it, Node g_tt_col, bool doubled);

// Stochastic primitive: one Gamma(shape, rate) draw via CDF inversion of a
// tape uniform; pathwise derivative w.r.t. shape by implicit
// differentiation of the CDF, w.r.t. rate analytically.
Node gamma_sample(Node shape, Node rate);

}  // namespace dkp::ad
