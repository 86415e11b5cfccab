#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "dkp/kernels.hpp"
#include "doctest.h"

using namespace dkp;
using namespace dkp::ad;
namespace kern = dkp::kern;

namespace {

Mat random_spd(int n, std::uint64_t seed, double ridge = 0.5) {
  Tape t(seed);
  Mat a = t.normal_mat(n, n);
  return Mat(a * a.transpose() / n + ridge * Mat::Identity(n, n));
}

kern::KernelSpec se(double bw = 1.0) {
  kern::KernelSpec s;
  s.family = kern::Family::squared_exponential;
  s.bandwidth = bw;
  return s;
}

kern::KernelSpec relu(bool doubled = false) {
  kern::KernelSpec s;
  s.family = kern::Family::arccos_relu;
  s.doubled = doubled;
  return s;
}

}  // namespace

TEST_CASE("squared_distances basics") {
  Mat r = kern::squared_distances(Mat::Identity(2, 2));
  CHECK(r(0, 0) == 0.0);
  CHECK(r(1, 1) == 0.0);
  CHECK(r(0, 1) == 2.0);
  CHECK(r(1, 0) == 2.0);

  Mat g = random_spd(5, 3);
  CHECK(kern::squared_distances(g).diagonal().cwiseAbs().maxCoeff() == 0.0);

  // Feature-space oracle: G = F F^T / N gives the pairwise squared distances
  // of the rows of F / sqrt(N).
  Tape t(4);
  const int n = 6;
  Mat f = t.normal_mat(4, n);
  Mat gram = f * f.transpose() / n;
  Mat r2 = kern::squared_distances(gram);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double d = (f.row(i) - f.row(j)).squaredNorm() / n;
      CHECK(std::fabs(r2(i, j) - d) < 1e-12);
    }
}

TEST_CASE("apply_kernel closed-form values") {
  kern::KernelSpec lin;
  Mat g = random_spd(3, 9);
  CHECK((kern::apply_kernel_plain(lin, g) - g).cwiseAbs().maxCoeff() == 0.0);

  Mat k = kern::apply_kernel_plain(se(1.0), Mat::Identity(2, 2));
  CHECK(k(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(k(1, 1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(k(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));

  Mat ka = kern::apply_kernel_plain(relu(), Mat::Identity(2, 2));
  CHECK(ka(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ka(0, 1) == doctest::Approx(1.0 / (2.0 * M_PI)).epsilon(1e-9));
}

TEST_CASE("kernel diagonals follow the stated conventions") {
  Mat g = random_spd(4, 13);
  Mat kse = kern::apply_kernel_plain(se(0.7), g);
  CHECK((kse.diagonal().array() - 1.0).abs().maxCoeff() < 1e-14);

  Mat kr = kern::apply_kernel_plain(relu(false), g);
  CHECK((kr.diagonal() - 0.5 * g.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
  Mat kr2 = kern::apply_kernel_plain(relu(true), g);
  CHECK((kr2.diagonal() - g.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kernel outputs are symmetric and pass the jittered Cholesky") {
  for (int trial = 0; trial < 10; ++trial) {
    Mat g = random_spd(6, 100 + trial);
    for (const auto& spec : {se(1.3), relu(false), relu(true)}) {
      Mat k = kern::apply_kernel_plain(spec, g);
      CHECK((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      Tape t;
      CHECK_NOTHROW(cholesky(t.leaf(k)));
    }
  }
}

TEST_CASE("kernel_consistency_check: marginalization and permutation exactness") {
  CHECK(kern::kernel_consistency_check(se(0.9), random_spd(5, 21)).ok);
  CHECK(kern::kernel_consistency_check(relu(false), random_spd(6, 22)).ok);
  kern::KernelSpec lin;
  CHECK(kern::kernel_consistency_check(lin, random_spd(4, 23)).ok);
}

TEST_CASE("apply_kernel gradients match finite differences") {
  Mat g = random_spd(4, 31);
  for (const auto& spec : {se(0.8), relu(false)}) {
    Tape t;
    Node ng = t.leaf(g);
    Node root = sum(hadamard(kern::apply_kernel(spec, ng), kern::apply_kernel(spec, ng)));
    t.backward(root);
    Mat gr = t.grad(ng);
    auto eval = [&](const Mat& gg) {
      Tape tt;
      Node k = kern::apply_kernel(spec, tt.leaf(gg));
      return sum(hadamard(k, k)).scalar();
    };
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j <= i; ++j) {
        Mat up = g, dn = g;
        up(i, j) += h;
        dn(i, j) -= h;
        if (i != j) {
          up(j, i) += h;
          dn(j, i) -= h;
        }
        const double fd = (eval(up) - eval(dn)) / (2.0 * h);
        const double an = (i == j) ? gr(i, j) : gr(i, j) + gr(j, i);
        const double rel = std::fabs(an - fd) / std::max(1.0, std::fabs(fd));
        CHECK(rel < 1e-4);
      }
    }
  }

  // Bandwidth gradient.
  Tape t;
  Node ng = t.leaf(g);
  Node bw = t.scalar(0.8);
  Node root = sum(kern::apply_kernel(se(0.8), ng, bw));
  t.backward(root);
  auto evalb = [&](double b) {
    Tape tt;
    return sum(kern::apply_kernel(se(b), tt.leaf(g), tt.scalar(b))).scalar();
  };
  const double h = 1e-6;
  CHECK(t.grad(bw)(0, 0) ==
        doctest::Approx((evalb(0.8 + h) - evalb(0.8 - h)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("arccos_relu zero-diagonal rows yield zero rows") {
  Mat g = Mat::Zero(3, 3);
  g(1, 1) = 2.0;
  g(2, 2) = 1.0;
  g(1, 2) = g(2, 1) = 0.5;
  Mat k = kern::apply_kernel_plain(relu(), g);
  CHECK(k.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(k.col(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(k(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("kernel config parsing") {
  CHECK(kern::family_from_string("linear") == kern::Family::linear);
  CHECK(kern::family_to_string(kern::Family::arccos_relu) == "arccos_relu");
  CHECK_THROWS_AS(kern::family_from_string("rbf"), ConfigError);
}
