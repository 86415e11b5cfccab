#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "dkp/distributions.hpp"
#include "dkp/special.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace dkp;
using namespace dkp::ad;
namespace dist = dkp::dist;

namespace {

double wishart_logpdf_val(double s, double v, double n) {
  Tape t;
  return dist::wishart_logpdf(t.leaf(Mat::Constant(1, 1, s)),
                              t.leaf(Mat::Constant(1, 1, v)), t.scalar(n))
      .scalar();
}

double invwishart_logpdf_val(double g, double psi, double nu) {
  Tape t;
  return dist::invwishart_logpdf(t.leaf(Mat::Constant(1, 1, g)),
                                 t.leaf(Mat::Constant(1, 1, psi)), t.scalar(nu))
      .scalar();
}

Mat random_spd(int n, std::uint64_t seed, double ridge = 0.5) {
  Tape t(seed);
  Mat a = t.normal_mat(n, n);
  return Mat(a * a.transpose() / n + ridge * Mat::Identity(n, n));
}

}  // namespace

TEST_CASE("gamma_sample_reparam: mean, determinism, pathwise gradient") {
  // Exponential mean: shape = rate = 1.
  std::mt19937_64 seeds(101);
  double acc = 0.0;
  const int n = 200000;
  Tape t(3);
  for (int i = 0; i < n; ++i)
    acc += dist::gamma_sample_reparam(t, t.scalar(1.0), t.scalar(1.0)).scalar();
  CHECK(acc / n == doctest::Approx(1.0).epsilon(0.01));

  // Pathwise dE[z]/dshape = 1/rate.
  const double rate = 3.0;
  double gacc = 0.0;
  const int m = 100000;
  for (int i = 0; i < m; ++i) {
    Tape ti(1000 + i);
    Node a = ti.scalar(2.0);
    Node z = dist::gamma_sample_reparam(ti, a, ti.scalar(rate));
    ti.backward(z);
    gacc += ti.grad(a)(0, 0);
  }
  CHECK(gacc / m == doctest::Approx(1.0 / rate).epsilon(0.02));

  // Fixed seed => identical draw.
  Tape t1(77), t2(77);
  CHECK(dist::gamma_sample_reparam(t1, t1.scalar(2.3), t1.scalar(0.7)).scalar() ==
        dist::gamma_sample_reparam(t2, t2.scalar(2.3), t2.scalar(0.7)).scalar());
}

TEST_CASE("wishart_logpdf: scalar chi-squared value") {
  // P=1, V=1, N=1 at s=1: the chi^2_1 density, log p = -log(2 pi)/2 - 1/2.
  CHECK(wishart_logpdf_val(1.0, 1.0, 1.0) ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI) - 0.5).epsilon(1e-10));
}

TEST_CASE("wishart_logpdf integrates to one on a P=1 grid") {
  const double v = 2.0, n = 3.0;
  const double integral = testutil::simpson(
      [&](double s) { return s <= 0.0 ? 0.0 : std::exp(wishart_logpdf_val(s, v, n)); },
      1e-8, 80.0, 4000);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("wishart_logpdf mode at (N-P-1) V") {
  const double v = 1.3, n = 10.0;
  const double mode = (n - 2.0) * v;
  const double at_mode = wishart_logpdf_val(mode, v, n);
  CHECK(at_mode > wishart_logpdf_val(mode * 1.05, v, n));
  CHECK(at_mode > wishart_logpdf_val(mode * 0.95, v, n));
}

TEST_CASE("wishart_sample: concentration and first two moments") {
  // V = I/N with huge N concentrates on I.
  {
    Tape t(5);
    const double n = 1e6;
    Mat v = Mat::Identity(4, 4) / n;
    Mat s = dist::wishart_sample(t, t.leaf(v), t.scalar(n)).value();
    CHECK((s - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-2);
  }

  // E[S] = N V and Var[S_ij] = (K_ij^2 + K_ii K_jj)/N for S ~ W(K/N, N).
  std::mt19937_64 rng(12345);
  Mat k = random_spd(3, 8);
  const double n = 6.0;
  const int draws = 200000;
  Mat m1 = Mat::Zero(3, 3), m2 = Mat::Zero(3, 3);
  for (int i = 0; i < draws; ++i) {
    Mat s = dist::plain_wishart(rng, Mat(k / n), n);
    m1 += s;
    m2 += s.cwiseProduct(s);
  }
  m1 /= draws;
  m2 /= draws;
  Mat var = m2 - m1.cwiseProduct(m1);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double tv = (k(i, j) * k(i, j) + k(i, i) * k(j, j)) / n;
      // SE of the mean is sqrt(var/draws); allow 4 standard errors.
      CHECK(std::fabs(m1(i, j) - k(i, j)) < 4.0 * std::sqrt(tv / draws));
      CHECK(var(i, j) == doctest::Approx(tv).epsilon(0.05));
    }
  }

  // AD sampler agrees with the plain sampler in distribution (KS on S_00).
  std::vector<double> ad_draws, plain_draws;
  std::mt19937_64 rng2(999);
  for (int i = 0; i < 4000; ++i) {
    Tape t(20000 + i);
    ad_draws.push_back(
        dist::wishart_sample(t, t.leaf(Mat(k / n)), t.scalar(n)).value()(0, 0));
    plain_draws.push_back(dist::plain_wishart(rng2, Mat(k / n), n)(0, 0));
  }
  CHECK(testutil::ks2_pvalue(ad_draws, plain_draws) > 0.01);
}

TEST_CASE("wishart_sample differentiable w.r.t. scale and dof") {
  Mat v = random_spd(2, 21);
  const std::uint64_t seed = 33;
  Tape t(seed);
  Node nv = t.leaf(v);
  Node nd = t.scalar(7.5);
  Node root = sum(dist::wishart_sample(t, nv, nd));
  t.backward(root);
  Mat gv = t.grad(nv);
  const double gd = t.grad(nd)(0, 0);

  auto eval = [&](const Mat& vv, double dd) {
    Tape tt(seed);
    return sum(dist::wishart_sample(tt, tt.leaf(vv), tt.scalar(dd))).scalar();
  };
  const double h = 1e-6;
  CHECK(gd == doctest::Approx((eval(v, 7.5 + h) - eval(v, 7.5 - h)) / (2 * h))
                  .epsilon(1e-4));
  // The scale lives on the symmetric cone, so compare against symmetric
  // finite-difference perturbations.
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j <= i; ++j) {
      Mat up = v, dn = v;
      up(i, j) += h;
      dn(i, j) -= h;
      if (i != j) {
        up(j, i) += h;
        dn(j, i) -= h;
      }
      const double an = (i == j) ? gv(i, j) : gv(i, j) + gv(j, i);
      CHECK(an ==
            doctest::Approx((eval(up, 7.5) - eval(dn, 7.5)) / (2 * h)).epsilon(1e-4));
    }
  }
}

TEST_CASE("invwishart_sample: mean, concentration, scalar reduction") {
  // Psi = delta K, nu = delta + P + 1 has mean K.
  Mat k = random_spd(2, 31);
  const double delta = 2.0;
  std::mt19937_64 rng(44);
  const int draws = 100000;
  Mat m1 = Mat::Zero(2, 2);
  for (int i = 0; i < draws; ++i)
    m1 += dist::plain_invwishart(rng, Mat(delta * k), delta + 2 + 1);
  m1 /= draws;
  CHECK((m1 - k).cwiseAbs().maxCoeff() < 0.05 * k.cwiseAbs().maxCoeff());

  // Large delta concentrates on K.
  {
    Tape t(9);
    const double d = 1e6;
    Mat g = dist::invwishart_sample(t, t.leaf(Mat(d * k)), t.scalar(d + 2 + 1)).value();
    CHECK((g - k).cwiseAbs().maxCoeff() < 1e-2 * k.cwiseAbs().maxCoeff());
  }

  // P=1 reduces to InvGamma(nu/2, psi/2).
  const double nu = 5.0, psi = 3.0;
  std::vector<double> xs;
  std::mt19937_64 rng3(7);
  for (int i = 0; i < 20000; ++i)
    xs.push_back(dist::plain_invwishart(rng3, Mat::Constant(1, 1, psi), nu)(0, 0));
  auto invgamma_cdf = [&](double x) {
    // P(X <= x) = Q(alpha, beta/x) = 1 - P(alpha, beta/x).
    return 1.0 - special::gammainc_p(0.5 * nu, 0.5 * psi / x);
  };
  CHECK(testutil::ks_pvalue(xs, invgamma_cdf) > 0.01);

  // AD sampler matches the plain one in distribution.
  std::vector<double> ys;
  for (int i = 0; i < 20000; ++i) {
    Tape t(40000 + i);
    ys.push_back(
        dist::invwishart_sample(t, t.leaf(Mat::Constant(1, 1, psi)), t.scalar(nu))
            .value()(0, 0));
  }
  CHECK(testutil::ks2_pvalue(xs, ys) > 0.01);
}

TEST_CASE("invwishart_logpdf: scalar reduction and normalization") {
  const double nu = 6.0, psi = 4.0;
  const double alpha = 0.5 * nu, beta = 0.5 * psi;
  for (double g : {0.2, 0.7, 1.3, 5.0}) {
    const double ig = alpha * std::log(beta) - special::lgamma(alpha) -
                      (alpha + 1.0) * std::log(g) - beta / g;
    CHECK(invwishart_logpdf_val(g, psi, nu) == doctest::Approx(ig).epsilon(1e-10));
  }
  const double integral = testutil::simpson(
      [&](double g) {
        return g <= 0.0 ? 0.0 : std::exp(invwishart_logpdf_val(g, psi, nu));
      },
      1e-6, 120.0, 6000);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));

  // invgamma_logpdf agrees with the P=1 inverse Wishart.
  Tape t;
  const double lg = dist::invgamma_logpdf(t.scalar(0.9), t.scalar(alpha), t.scalar(beta))
                        .scalar();
  CHECK(lg == doctest::Approx(invwishart_logpdf_val(0.9, psi, nu)).epsilon(1e-12));
}

TEST_CASE("inverse Wishart conjugacy at P=1") {
  // Prior W^{-1}(delta s0, P+1+delta) times Gaussian likelihood of nv columns
  // equals posterior W^{-1}(delta s0 + V V^T, P+1+delta+nv), checked against
  // the grid-normalized product of densities.
  const double delta = 2.0, s0 = 1.5;
  const int nv = 3;
  Mat v(1, nv);
  v << 0.7, -1.2, 0.4;
  const double vvt = (v * v.transpose())(0, 0);

  auto unnorm_log_post = [&](double g) {
    double lp = invwishart_logpdf_val(g, delta * s0, 2.0 + delta);
    for (int i = 0; i < nv; ++i)
      lp += -0.5 * std::log(2.0 * M_PI * g) - 0.5 * v(0, i) * v(0, i) / g;
    return lp;
  };
  const double z = testutil::simpson(
      [&](double g) { return g <= 0.0 ? 0.0 : std::exp(unnorm_log_post(g)); }, 1e-6,
      60.0, 6000);
  double max_diff = 0.0;
  for (double g : {0.2, 0.5, 1.0, 1.8, 3.0, 6.0}) {
    const double grid = std::exp(unnorm_log_post(g)) / z;
    const double closed =
        std::exp(invwishart_logpdf_val(g, delta * s0 + vvt, 2.0 + delta + nv));
    max_diff = std::max(max_diff, std::fabs(grid - closed));
  }
  CHECK(max_diff < 1e-3);
}

TEST_CASE("invwishart_logpdf differentiable including dof") {
  Mat psi = random_spd(2, 55);
  Mat g = random_spd(2, 56);
  const double nu = 6.3;
  Tape t;
  Node npsi = t.leaf(psi), ng = t.leaf(g), nnu = t.scalar(nu);
  Node lp = dist::invwishart_logpdf(ng, npsi, nnu);
  t.backward(lp);
  const double gd = t.grad(nnu)(0, 0);
  auto eval = [&](double d) {
    Tape tt;
    return dist::invwishart_logpdf(tt.leaf(g), tt.leaf(psi), tt.scalar(d)).scalar();
  };
  const double h = 1e-6;
  CHECK(gd == doctest::Approx((eval(nu + h) - eval(nu - h)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("marginalization consistency and exchangeability") {
  Mat k = random_spd(4, 71);
  const double n = 7.0;
  std::mt19937_64 r1(1), r2(2);
  std::vector<double> sub00, dir00, sub01, dir01;
  Mat k2 = k.topLeftCorner(2, 2);
  for (int i = 0; i < 20000; ++i) {
    Mat s4 = dist::plain_wishart(r1, Mat(k / n), n);
    sub00.push_back(s4(0, 0));
    sub01.push_back(s4(0, 1));
    Mat s2 = dist::plain_wishart(r2, Mat(k2 / n), n);
    dir00.push_back(s2(0, 0));
    dir01.push_back(s2(0, 1));
  }
  CHECK(testutil::ks2_pvalue(sub00, dir00) > 0.01);
  CHECK(testutil::ks2_pvalue(sub01, dir01) > 0.01);

  // Inverse Wishart with matched delta: marginal of the top-left 2x2 block of
  // a P=4 inverse Wishart is the P=2 inverse Wishart with the same delta
  // (Psi block, dof reduced by the dropped rows).
  const double delta = 3.0;
  std::mt19937_64 r3(3), r4(4);
  std::vector<double> isub, idir;
  for (int i = 0; i < 20000; ++i) {
    isub.push_back(dist::plain_invwishart(r3, Mat(delta * k), delta + 4 + 1)(0, 0));
    idir.push_back(dist::plain_invwishart(r4, Mat(delta * k2), delta + 2 + 1)(0, 0));
  }
  CHECK(testutil::ks2_pvalue(isub, idir) > 0.01);

  // Exchangeability: permuting K then sampling equals sampling then permuting
  // (first-moment check within MC error).
  std::vector<int> perm = {2, 0, 3, 1};
  Mat pm = Mat::Zero(4, 4);
  for (int i = 0; i < 4; ++i) pm(i, perm[i]) = 1.0;
  Mat kp = pm * k * pm.transpose();
  std::mt19937_64 r5(5), r6(6);
  Mat a = Mat::Zero(4, 4), b = Mat::Zero(4, 4);
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) {
    a += dist::plain_wishart(r5, Mat(kp / n), n);
    b += pm * dist::plain_wishart(r6, Mat(k / n), n) * pm.transpose();
  }
  CHECK(((a - b) / draws).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("matrix_normal_sample moments") {
  // Scale -> 0 limit returns the mean.
  Tape t(61);
  Mat mean(2, 3);
  mean << 1, 2, 3, 4, 5, 6;
  Mat tiny = 1e-12 * Mat::Identity(2, 2);
  Mat tinyc = 1e-12 * Mat::Identity(3, 3);
  Mat s = dist::matrix_normal_sample(t, t.leaf(mean), t.leaf(tiny), t.leaf(tinyc)).value();
  CHECK((s - mean).cwiseAbs().maxCoeff() < 1e-5);

  // Identity covariances: i.i.d. standard normal entries.
  Mat acc = Mat::Zero(2, 3), acc2 = Mat::Zero(2, 3);
  const int draws = 100000;
  Tape tt(62);
  for (int i = 0; i < draws; ++i) {
    Mat z = tt.normal_mat(2, 3) + mean;  // equivalent and fast
    acc += z;
    acc2 += (z - mean).cwiseProduct(z - mean);
  }
  CHECK((acc / draws - mean).cwiseAbs().maxCoeff() < 0.02);
  CHECK((acc2 / draws - Mat::Ones(2, 3)).cwiseAbs().maxCoeff() < 0.02);

  // vec-covariance = col_cov (x) row_cov on a 2x2 case.
  Mat rc(2, 2), cc(2, 2);
  rc << 1.0, 0.4, 0.4, 0.8;
  cc << 1.3, -0.5, -0.5, 0.9;
  const int draws2 = 200000;
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  Tape ts(63);
  Node nrc = ts.leaf(rc), ncc = ts.leaf(cc), nm = ts.leaf(Mat::Zero(2, 2));
  for (int i = 0; i < draws2; ++i) {
    Mat x = dist::matrix_normal_sample(ts, nm, nrc, ncc).value();
    Eigen::Vector4d v;
    v << x(0, 0), x(1, 0), x(0, 1), x(1, 1);
    cov += v * v.transpose();
  }
  cov /= draws2;
  Eigen::Matrix4d kron;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      kron.block<2, 2>(2 * i, 2 * j) = cc(i, j) * rc;
  CHECK((cov - kron).cwiseAbs().maxCoeff() < 0.05 * kron.cwiseAbs().maxCoeff());
}

TEST_CASE("mvn_logpdf values and symmetry") {
  Tape t;
  Mat z = Mat::Zero(2, 1);
  CHECK(dist::mvn_logpdf(t.leaf(z), t.leaf(z), t.leaf(Mat::Identity(2, 2))).scalar() ==
        doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-12));

  // Matches the direct quadratic-form formula on a random 4-dim input.
  Mat cov = random_spd(4, 91);
  Tape t2(92);
  Mat x = t2.normal_mat(4, 1), mu = t2.normal_mat(4, 1);
  const double got =
      dist::mvn_logpdf(t2.leaf(x), t2.leaf(mu), t2.leaf(cov)).scalar();
  const Mat r = x - mu;
  const double direct = -0.5 * (r.transpose() * cov.inverse() * r)(0, 0) -
                        0.5 * std::log(cov.determinant()) - 2.0 * std::log(2.0 * M_PI);
  CHECK(got == doctest::Approx(direct).epsilon(1e-10));

  // Invariant under simultaneous permutation of coordinates.
  std::vector<int> perm = {3, 1, 0, 2};
  Mat pm = Mat::Zero(4, 4);
  for (int i = 0; i < 4; ++i) pm(i, perm[i]) = 1.0;
  Tape t3;
  const double permuted = dist::mvn_logpdf(t3.leaf(Mat(pm * x)), t3.leaf(Mat(pm * mu)),
                                           t3.leaf(Mat(pm * cov * pm.transpose())))
                              .scalar();
  CHECK(permuted == doctest::Approx(got).epsilon(1e-12));

  // Columns multiply: two identical columns double the log-density.
  Mat x2(4, 2);
  x2 << x, x;
  Mat mu2(4, 2);
  mu2 << mu, mu;
  Tape t4;
  CHECK(dist::mvn_logpdf(t4.leaf(x2), t4.leaf(mu2), t4.leaf(cov)).scalar() ==
        doctest::Approx(2.0 * got).epsilon(1e-12));
}

TEST_CASE("invgamma_sample: moments, scalar reduction, determinism") {
  // mean = beta/(alpha-1) = 1 for alpha=3, beta=2.
  Tape t(71);
  double acc = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i)
    acc += dist::invgamma_sample(t, t.scalar(3.0), t.scalar(2.0)).scalar();
  CHECK(acc / n == doctest::Approx(1.0).epsilon(0.01));

  // Distribution equals P=1 inverse Wishart with nu=2 alpha, psi=2 beta.
  const double alpha = 2.5, beta = 1.7;
  std::vector<double> a_draws, w_draws;
  std::mt19937_64 rng(72);
  Tape ts(73);
  for (int i = 0; i < 20000; ++i) {
    a_draws.push_back(dist::invgamma_sample(ts, ts.scalar(alpha), ts.scalar(beta)).scalar());
    w_draws.push_back(
        dist::plain_invwishart(rng, Mat::Constant(1, 1, 2.0 * beta), 2.0 * alpha)(0, 0));
  }
  CHECK(testutil::ks2_pvalue(a_draws, w_draws) > 0.01);

  Tape t1(74), t2(74);
  CHECK(dist::invgamma_sample(t1, t1.scalar(3.0), t1.scalar(2.0)).scalar() ==
        dist::invgamma_sample(t2, t2.scalar(3.0), t2.scalar(2.0)).scalar());
}

TEST_CASE("samples are exactly symmetric and pass the jittered Cholesky") {
  std::mt19937_64 rng(81);
  Mat k = random_spd(5, 82);
  for (int i = 0; i < 50; ++i) {
    Mat s = dist::plain_wishart(rng, k, 8.0);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Tape t;
    CHECK_NOTHROW(cholesky(t.leaf(s)));
    Mat g = dist::plain_invwishart(rng, k, 8.0);
    CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK_NOTHROW(cholesky(t.leaf(g)));
  }
}

TEST_CASE("distribution domain errors") {
  Tape t;
  CHECK_THROWS_AS(dist::bartlett_lower(t, t.scalar(1.5), 3), DomainError);
  CHECK_THROWS_AS(
      dist::wishart_logpdf(t.leaf(Mat::Identity(2, 2)), t.leaf(Mat::Identity(2, 2)),
                           t.scalar(0.5)),
      DomainError);
  CHECK_THROWS_AS(dist::invgamma_logpdf(t.scalar(-1.0), t.scalar(2.0), t.scalar(2.0)),
                  DomainError);
}
