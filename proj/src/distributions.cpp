#include "dkp/distributions.hpp"

#include <cmath>

#include "dkp/special.hpp"

namespace dkp::dist {

using ad::Node;
using ad::Tape;

namespace {

constexpr double kLog2Pi = 1.8378770664093455;
constexpr double kLog2 = 0.6931471805599453;

Node sym(Node x) { return ad::scale(ad::add(x, ad::transpose(x)), 0.5); }

// tr(V^{-1} S) given l = chol(V): tr(L^{-1} S L^{-T}).
Node trace_solve(Node l, Node s) {
  Node x = ad::trisolve(l, s, false);
  Node y = ad::trisolve(l, ad::transpose(x), false);
  return ad::trace(y);
}

}  // namespace

Node bartlett_lower(Tape& t, Node dof, int p) {
  require(p >= 1, "bartlett_lower: dimension must be >= 1");
  const double nu = dof.scalar();
  if (!(nu > p - 1))
    throw DomainError("bartlett_lower: dof must exceed P - 1");
  Mat a = Mat::Zero(p, p);
  Vec dd(p);  // dA_jj / d(dof)
  for (int j = 0; j < p; ++j) {
    // A_jj^2 ~ chi^2(dof - j) = Gamma(shape = (dof - j)/2, rate = 1/2).
    const double shape = 0.5 * (nu - j);
    const double u = t.uniform();
    const double g1 = special::gammainc_p_inv(shape, u);  // Gamma(shape, 1)
    const double c = 2.0 * g1;
    const double pdf = std::exp(special::gamma_logpdf1(shape, g1));
    double dg_da = 0.0;
    if (pdf > 0.0 && std::isfinite(pdf))
      dg_da = -special::gammainc_p_da(shape, g1) / pdf;
    a(j, j) = std::sqrt(c);
    // dc/dnu = 2 * dg1/dshape * dshape/dnu = dg1/dshape; dA/dc = 1/(2 A).
    dd(j) = dg_da / (2.0 * a(j, j));
  }
  for (int i = 1; i < p; ++i)
    for (int j = 0; j < i; ++j) a(i, j) = t.normal();
  int idof = dof.id;
  return t.emplace(std::move(a), {idof}, [idof, dd](Tape& tt, const Mat& g) {
    double acc = 0.0;
    for (int j = 0; j < dd.size(); ++j) acc += g(j, j) * dd(j);
    tt.accumulate(idof, Mat::Constant(1, 1, acc));
  });
}

Node gamma_sample_reparam(Tape& t, Node shape, Node rate) {
  (void)t;
  return ad::gamma_sample(shape, rate);
}

Node invgamma_sample(Tape& t, Node alpha, Node beta) {
  Node z = ad::gamma_sample(alpha, beta);
  return ad::div_elem(t.scalar(1.0), z);
}

Node invgamma_sample_vec(Tape& t, Node alpha, Node beta_col) {
  require(beta_col.cols() == 1, "invgamma_sample_vec: beta must be a column");
  const double a = alpha.scalar();
  const Mat& beta = beta_col.value();
  if (!(a > 0.0) || (beta.array() <= 0.0).any())
    throw DomainError("invgamma_sample_vec: parameters must be positive");
  const auto n = beta.rows();
  Mat z(n, 1);
  Vec g1(n), dg_da(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double u = t.uniform();
    g1(j) = special::gammainc_p_inv(a, u);
    const double pdf = std::exp(special::gamma_logpdf1(a, g1(j)));
    dg_da(j) = (pdf > 0.0 && std::isfinite(pdf))
                   ? -special::gammainc_p_da(a, g1(j)) / pdf
                   : 0.0;
    z(j, 0) = beta(j, 0) / g1(j);
  }
  int ia = alpha.id, ib = beta_col.id;
  return t.emplace(std::move(z), {ia, ib}, [ia, ib, g1, dg_da](Tape& tt, const Mat& g) {
    const Mat& beta = tt.value_of(ib);
    double ga = 0.0;
    Mat gb(beta.rows(), 1);
    for (Eigen::Index j = 0; j < beta.rows(); ++j) {
      ga += g(j, 0) * (-beta(j, 0) / (g1(j) * g1(j))) * dg_da(j);
      gb(j, 0) = g(j, 0) / g1(j);
    }
    tt.accumulate(ia, Mat(Mat::Constant(1, 1, ga)));
    tt.accumulate(ib, gb);
  });
}

Node invgamma_logpdf(Node x, Node alpha, Node beta) {
  const double xv = x.scalar();
  if (!(xv > 0.0)) throw DomainError("invgamma_logpdf: x must be positive");
  Tape& t = *x.tape;
  Node lx = ad::vlog(x);
  Node lb = ad::vlog(beta);
  Node term1 = ad::hadamard(alpha, lb);
  Node term2 = ad::neg(ad::lgamma_n(alpha));
  Node term3 = ad::neg(ad::hadamard(ad::add(alpha, t.scalar(1.0)), lx));
  Node term4 = ad::neg(ad::div_elem(beta, x));
  return ad::add(ad::add(term1, term2), ad::add(term3, term4));
}

Node wishart_sample(Tape& t, Node scale, Node dof) {
  Node l = ad::cholesky(scale);
  Node a = bartlett_lower(t, dof, static_cast<int>(scale.rows()));
  Node m = ad::matmul(l, a);
  return sym(ad::matmul(m, ad::transpose(m)));
}

Node wishart_logpdf(Node s, Node scale, Node dof) {
  const int p = s.rows();
  require(scale.rows() == p && scale.cols() == p && s.cols() == p,
          "wishart_logpdf: shape mismatch");
  if (!(dof.scalar() > p - 1))
    throw DomainError("wishart_logpdf: dof must exceed P - 1");
  Tape& t = *s.tape;
  Node lv = ad::cholesky(scale);
  Node ls = ad::cholesky(s);
  Node logdet_s = ad::scale(ad::sum_log_diag(ls), 2.0);
  Node logdet_v = ad::scale(ad::sum_log_diag(lv), 2.0);
  Node half_nm1 = ad::scale(ad::sub(dof, t.scalar(p + 1.0)), 0.5);
  Node out = ad::hadamard(half_nm1, logdet_s);
  out = ad::sub(out, ad::scale(trace_solve(lv, s), 0.5));
  out = ad::sub(out, ad::scale(dof, 0.5 * p * kLog2));
  out = ad::sub(out, ad::scale(ad::hadamard(dof, logdet_v), 0.5));
  out = ad::sub(out, ad::mvlgamma_n(ad::scale(dof, 0.5), p));
  return out;
}

Node invwishart_sample(Tape& t, Node scale, Node dof) {
  Node l = ad::cholesky(scale);
  Node a = bartlett_lower(t, dof, static_cast<int>(scale.rows()));
  // M = L A^{-T}: solve A Y = L^T (A lower-triangular), M = Y^T.
  Node y = ad::trisolve(a, ad::transpose(l), false);
  Node m = ad::transpose(y);
  return sym(ad::matmul(m, ad::transpose(m)));
}

Node invwishart_logpdf(Node g, Node scale, Node dof) {
  const int p = g.rows();
  require(scale.rows() == p && scale.cols() == p && g.cols() == p,
          "invwishart_logpdf: shape mismatch");
  if (!(dof.scalar() > p - 1))
    throw DomainError("invwishart_logpdf: dof must exceed P - 1");
  Node lpsi = ad::cholesky(scale);
  Node lg = ad::cholesky(g);
  Node logdet_psi = ad::scale(ad::sum_log_diag(lpsi), 2.0);
  Node logdet_g = ad::scale(ad::sum_log_diag(lg), 2.0);
  Node out = ad::scale(ad::hadamard(dof, logdet_psi), 0.5);
  Node half_np1 = ad::scale(ad::add(dof, g.tape->scalar(p + 1.0)), 0.5);
  out = ad::sub(out, ad::hadamard(half_np1, logdet_g));
  out = ad::sub(out, ad::scale(trace_solve(lg, scale), 0.5));
  out = ad::sub(out, ad::scale(dof, 0.5 * p * kLog2));
  out = ad::sub(out, ad::mvlgamma_n(ad::scale(dof, 0.5), p));
  return out;
}

Node matrix_normal_sample(Tape& t, Node mean, Node row_cov, Node col_cov) {
  require(row_cov.rows() == mean.rows() && col_cov.rows() == mean.cols(),
          "matrix_normal_sample: shape mismatch");
  Node lr = ad::cholesky(row_cov);
  Node lc = ad::cholesky(col_cov);
  Node z = t.leaf(t.normal_mat(mean.rows(), mean.cols()));
  return ad::add(mean, ad::matmul(ad::matmul(lr, z), ad::transpose(lc)));
}

Node mvn_logpdf(Node x, Node mean, Node cov) {
  const int p = x.rows();
  const int k = x.cols();
  require(mean.rows() == p && mean.cols() == k && cov.rows() == p && cov.cols() == p,
          "mvn_logpdf: shape mismatch");
  Node r = ad::sub(x, mean);
  Node l = ad::cholesky(cov);
  Node w = ad::trisolve(l, r, false);
  Node quad = ad::sum(ad::hadamard(w, w));
  Node out = ad::scale(quad, -0.5);
  out = ad::sub(out, ad::scale(ad::sum_log_diag(l), static_cast<double>(k)));
  return ad::add(out, x.tape->scalar(-0.5 * k * p * kLog2Pi));
}

double plain_gamma(std::mt19937_64& rng, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw DomainError("plain_gamma: parameters must be positive");
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

namespace {

Mat plain_bartlett(std::mt19937_64& rng, int p, double dof) {
  if (!(dof > p - 1)) throw DomainError("plain_bartlett: dof must exceed P - 1");
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat a = Mat::Zero(p, p);
  for (int j = 0; j < p; ++j)
    a(j, j) = std::sqrt(plain_gamma(rng, 0.5 * (dof - j), 0.5));
  for (int i = 1; i < p; ++i)
    for (int j = 0; j < i; ++j) a(i, j) = nd(rng);
  return a;
}

}  // namespace

Mat plain_wishart(std::mt19937_64& rng, const Mat& scale, double dof) {
  const int p = static_cast<int>(scale.rows());
  Eigen::LLT<Mat> llt(scale);
  if (llt.info() != Eigen::Success)
    throw DecompositionError("plain_wishart: scale not positive definite");
  Mat m = Mat(llt.matrixL()) * plain_bartlett(rng, p, dof);
  return symmetrize(m * m.transpose());
}

Mat plain_invwishart(std::mt19937_64& rng, const Mat& scale, double dof) {
  const int p = static_cast<int>(scale.rows());
  Eigen::LLT<Mat> llt(scale);
  if (llt.info() != Eigen::Success)
    throw DecompositionError("plain_invwishart: scale not positive definite");
  Mat l = llt.matrixL();
  Mat a = plain_bartlett(rng, p, dof);
  Mat m = a.triangularView<Eigen::Lower>()
              .solve(Mat(l.transpose()))
              .transpose();
  return symmetrize(m * m.transpose());
}

}  // namespace dkp::dist
