#include "dkp/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "dkp/special.hpp"

namespace dkp::ad {

const Mat& Node::value() const { return tape->value_of(id); }

double Node::scalar() const {
  const Mat& v = value();
  require(v.rows() == 1 && v.cols() == 1, "scalar(): node is not 1x1");
  return v(0, 0);
}

Tape::Tape(std::uint64_t seed) : rng_(seed) {}

Node Tape::leaf(Mat value) {
  if (!all_finite(value)) throw NumericError("leaf: non-finite entries");
  return emplace(std::move(value), {}, nullptr);
}

Node Tape::scalar(double value) { return leaf(Mat::Constant(1, 1, value)); }

double Tape::uniform() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
}

double Tape::normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

Mat Tape::normal_mat(int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal();
  return m;
}

Node Tape::emplace(Mat value, std::vector<int> parents, Pull pull) {
  Record rec;
  rec.value = std::move(value);
  rec.parents = std::move(parents);
  rec.pull = std::move(pull);
  nodes_.push_back(std::move(rec));
  return Node{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) {
  Record& rec = nodes_[id];
  if (!rec.has_grad) {
    rec.grad = g;
    rec.has_grad = true;
  } else {
    rec.grad += g;
  }
}

void Tape::backward(Node root) {
  require(root.tape == this, "backward: node from another tape");
  const Mat& rv = nodes_[root.id].value;
  require(rv.rows() == 1 && rv.cols() == 1, "backward: root must be scalar");
  for (auto& rec : nodes_) {
    rec.has_grad = false;
    rec.grad.resize(0, 0);
  }
  accumulate(root.id, Mat::Ones(1, 1));
  for (int i = root.id; i >= 0; --i) {
    Record& rec = nodes_[i];
    if (!rec.has_grad || !rec.pull) continue;
    rec.pull(*this, rec.grad);
  }
}

Mat Tape::grad(Node n) const {
  const Record& rec = nodes_[n.id];
  if (rec.has_grad) return rec.grad;
  return Mat::Zero(rec.value.rows(), rec.value.cols());
}

namespace {

void check_same_tape(Node a, Node b, const char* op) {
  require(a.tape != nullptr && a.tape == b.tape,
          std::string(op) + ": nodes must live on one tape");
}

}  // namespace

Node matmul(Node a, Node b) {
  check_same_tape(a, b, "matmul");
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  Mat out = a.value() * b.value();
  int ia = a.id, ib = b.id;
  return a.tape->emplace(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g * t.value_of(ib).transpose());
    t.accumulate(ib, t.value_of(ia).transpose() * g);
  });
}

Node add(Node a, Node b) {
  check_same_tape(a, b, "add");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  int ia = a.id, ib = b.id;
  return a.tape->emplace(a.value() + b.value(), {ia, ib},
                         [ia, ib](Tape& t, const Mat& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, g);
                         });
}

Node sub(Node a, Node b) {
  check_same_tape(a, b, "sub");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  int ia = a.id, ib = b.id;
  return a.tape->emplace(a.value() - b.value(), {ia, ib},
                         [ia, ib](Tape& t, const Mat& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, Mat(-g));
                         });
}

Node neg(Node a) { return scale(a, -1.0); }

Node scale(Node a, double s) {
  int ia = a.id;
  return a.tape->emplace(s * a.value(), {ia}, [ia, s](Tape& t, const Mat& g) {
    t.accumulate(ia, Mat(s * g));
  });
}

Node transpose(Node a) {
  int ia = a.id;
  return a.tape->emplace(a.value().transpose(), {ia},
                         [ia](Tape& t, const Mat& g) { t.accumulate(ia, g.transpose()); });
}

Node hadamard(Node a, Node b) {
  check_same_tape(a, b, "hadamard");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
  int ia = a.id, ib = b.id;
  return a.tape->emplace(a.value().cwiseProduct(b.value()), {ia, ib},
                         [ia, ib](Tape& t, const Mat& g) {
                           t.accumulate(ia, g.cwiseProduct(t.value_of(ib)));
                           t.accumulate(ib, g.cwiseProduct(t.value_of(ia)));
                         });
}

Node mul_scalar(Node a, Node s) {
  check_same_tape(a, s, "mul_scalar");
  require(s.rows() == 1 && s.cols() == 1, "mul_scalar: scale must be 1x1");
  int ia = a.id, is = s.id;
  return a.tape->emplace(s.value()(0, 0) * a.value(), {ia, is},
                         [ia, is](Tape& t, const Mat& g) {
                           t.accumulate(ia, Mat(t.value_of(is)(0, 0) * g));
                           Mat gs(1, 1);
                           gs(0, 0) = g.cwiseProduct(t.value_of(ia)).sum();
                           t.accumulate(is, gs);
                         });
}

Node div_scalar(Node a, Node s) {
  check_same_tape(a, s, "div_scalar");
  require(s.rows() == 1 && s.cols() == 1, "div_scalar: divisor must be 1x1");
  int ia = a.id, is = s.id;
  const double sv = s.value()(0, 0);
  if (sv == 0.0) throw DomainError("div_scalar: division by zero");
  return a.tape->emplace(a.value() / sv, {ia, is}, [ia, is](Tape& t, const Mat& g) {
    const double v = t.value_of(is)(0, 0);
    t.accumulate(ia, Mat(g / v));
    Mat gs(1, 1);
    gs(0, 0) = -g.cwiseProduct(t.value_of(ia)).sum() / (v * v);
    t.accumulate(is, gs);
  });
}

Node div_elem(Node a, Node b) {
  check_same_tape(a, b, "div_elem");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "div_elem: shape mismatch");
  int ia = a.id, ib = b.id;
  return a.tape->emplace(a.value().cwiseQuotient(b.value()), {ia, ib},
                         [ia, ib](Tape& t, const Mat& g) {
                           const Mat& bv = t.value_of(ib);
                           t.accumulate(ia, g.cwiseQuotient(bv));
                           Mat gb = -g.cwiseProduct(t.value_of(ia))
                                         .cwiseQuotient(bv.cwiseProduct(bv));
                           t.accumulate(ib, gb);
                         });
}

Node sum(Node a) {
  int ia = a.id;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    t.accumulate(ia, Mat(Mat::Constant(av.rows(), av.cols(), g(0, 0))));
  });
}

Node trace(Node a) {
  require(a.rows() == a.cols(), "trace: matrix must be square");
  int ia = a.id;
  Mat out(1, 1);
  out(0, 0) = a.value().trace();
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    const auto n = t.value_of(ia).rows();
    t.accumulate(ia, Mat(g(0, 0) * Mat::Identity(n, n)));
  });
}

Node slice_block(Node a, int row0, int col0, int rows, int cols) {
  require(row0 >= 0 && col0 >= 0 && row0 + rows <= a.rows() && col0 + cols <= a.cols(),
          "slice_block: block exceeds parent");
  int ia = a.id;
  return a.tape->emplace(a.value().block(row0, col0, rows, cols), {ia},
                         [ia, row0, col0, rows, cols](Tape& t, const Mat& g) {
                           const Mat& av = t.value_of(ia);
                           Mat ga = Mat::Zero(av.rows(), av.cols());
                           ga.block(row0, col0, rows, cols) = g;
                           t.accumulate(ia, ga);
                         });
}

Node vcat(Node a, Node b) {
  check_same_tape(a, b, "vcat");
  require(a.cols() == b.cols(), "vcat: column counts disagree");
  Mat out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  int ia = a.id, ib = b.id;
  const int ra = a.rows(), rb = b.rows();
  return a.tape->emplace(std::move(out), {ia, ib},
                         [ia, ib, ra, rb](Tape& t, const Mat& g) {
                           t.accumulate(ia, g.topRows(ra));
                           t.accumulate(ib, g.bottomRows(rb));
                         });
}

Node sym_block2(Node ii, Node it, Node tt) {
  check_same_tape(ii, it, "sym_block2");
  check_same_tape(ii, tt, "sym_block2");
  const int pi = ii.rows(), pt = tt.rows();
  require(ii.cols() == pi && tt.cols() == pt && it.rows() == pi && it.cols() == pt,
          "sym_block2: inconsistent block shapes");
  Mat out(pi + pt, pi + pt);
  out.topLeftCorner(pi, pi) = ii.value();
  out.topRightCorner(pi, pt) = it.value();
  out.bottomLeftCorner(pt, pi) = it.value().transpose();
  out.bottomRightCorner(pt, pt) = tt.value();
  int a = ii.id, b = it.id, c = tt.id;
  return ii.tape->emplace(std::move(out), {a, b, c},
                          [a, b, c, pi, pt](Tape& t, const Mat& g) {
                            t.accumulate(a, g.topLeftCorner(pi, pi));
                            t.accumulate(b, Mat(g.topRightCorner(pi, pt) +
                                                g.bottomLeftCorner(pt, pi).transpose()));
                            t.accumulate(c, g.bottomRightCorner(pt, pt));
                          });
}

Node vexp(Node a) {
  int ia = a.id;
  Mat out = a.value().array().exp();
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, g.cwiseProduct(Mat(t.value_of(ia).array().exp().matrix())));
  });
}

Node vlog(Node a) {
  if ((a.value().array() <= 0.0).any()) throw DomainError("log: non-positive entry");
  int ia = a.id;
  Mat out = a.value().array().log();
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, g.cwiseQuotient(t.value_of(ia)));
  });
}

Node vsqrt(Node a) {
  if ((a.value().array() < 0.0).any()) throw DomainError("sqrt: negative entry");
  int ia = a.id;
  Mat out = a.value().array().sqrt();
  return a.tape->emplace(std::move(out), {ia}, [ia, out](Tape& t, const Mat& g) {
    t.accumulate(ia, Mat(0.5 * g.cwiseQuotient(out)));
  });
}

Node softplus(Node a) {
  int ia = a.id;
  Mat out = a.value().unaryExpr([](double x) {
    return x > 30.0 ? x : std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
  });
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    Mat sig = t.value_of(ia).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.accumulate(ia, g.cwiseProduct(sig));
  });
}

namespace {

// Lower-triangular Cholesky with jitter escalation. Returns (L, jitter).
std::pair<Mat, double> chol_jittered(const Mat& a) {
  if (!all_finite(a)) throw NumericError("cholesky: non-finite entries");
  require(a.rows() == a.cols(), "cholesky: matrix must be square");
  const double diag_mean = std::max(a.diagonal().mean(), 1e-300);
  static const std::array<double, 5> levels = {0.0, 1e-10, 1e-8, 1e-6, 1e-4};
  std::ostringstream tried;
  for (double lvl : levels) {
    const double jitter = lvl * diag_mean;
    Mat m = a;
    if (jitter > 0.0) m.diagonal().array() += jitter;
    Eigen::LLT<Mat> llt(m);
    if (llt.info() == Eigen::Success) {
      Mat l = llt.matrixL();
      if (l.allFinite()) return {l, jitter};
    }
    tried << " " << jitter;
  }
  throw DecompositionError("cholesky failed; attempted jitter levels:" + tried.str());
}

// Phi(X): lower triangle with halved diagonal.
Mat phi_lower(const Mat& x) {
  Mat p = x.triangularView<Eigen::Lower>();
  p.diagonal() *= 0.5;
  return p;
}

}  // namespace

Node cholesky(Node a) {
  auto [l, jitter] = chol_jittered(a.value());
  int ia = a.id;
  Mat lcopy = l;
  Node out = a.tape->emplace(std::move(l), {ia}, [ia, lcopy](Tape& t, const Mat& g) {
    // Reverse rule: Abar = 0.5 (S + S^T), S = L^-T Phi(L^T Lbar) L^-1.
    const Mat& l = lcopy;
    Mat m = phi_lower(l.transpose() * g);
    Mat y = l.transpose().triangularView<Eigen::Upper>().solve(m);
    Mat s = l.transpose()
                .triangularView<Eigen::Upper>()
                .solve(y.transpose())
                .transpose();
    t.accumulate(ia, Mat(0.5 * (s + s.transpose())));
  });
  out.tape->set_jitter(out.id, jitter);
  return out;
}

double cholesky_jitter(Node l) { return l.tape->jitter_of(l.id); }

Node trisolve(Node l, Node b, bool trans_l) {
  check_same_tape(l, b, "trisolve");
  require(l.rows() == l.cols(), "trisolve: triangle must be square");
  require(l.rows() == b.rows(), "trisolve: dimension mismatch");
  const Mat& lv = l.value();
  if ((lv.diagonal().array() == 0.0).any())
    throw DecompositionError("trisolve: zero diagonal element");
  Mat x = trans_l ? Mat(lv.transpose().triangularView<Eigen::Upper>().solve(b.value()))
                  : Mat(lv.triangularView<Eigen::Lower>().solve(b.value()));
  int il = l.id, ib = b.id;
  return l.tape->emplace(std::move(x), {il, ib},
                         [il, ib, trans_l](Tape& t, const Mat& g) {
    const Mat& lv = t.value_of(il);
    // Recompute forward solution from stored values.
    Mat x = trans_l
                ? Mat(lv.transpose().triangularView<Eigen::Upper>().solve(t.value_of(ib)))
                : Mat(lv.triangularView<Eigen::Lower>().solve(t.value_of(ib)));
    if (trans_l) {
      Mat w = lv.triangularView<Eigen::Lower>().solve(g);
      t.accumulate(ib, w);
      Mat gl = -(x * w.transpose());
      t.accumulate(il, Mat(gl.triangularView<Eigen::Lower>()));
    } else {
      Mat w = lv.transpose().triangularView<Eigen::Upper>().solve(g);
      t.accumulate(ib, w);
      Mat gl = -(w * x.transpose());
      t.accumulate(il, Mat(gl.triangularView<Eigen::Lower>()));
    }
  });
}

Node logdet_psd(Node a) {
  auto [l, jitter] = chol_jittered(a.value());
  (void)jitter;
  Mat out(1, 1);
  out(0, 0) = 2.0 * l.diagonal().array().log().sum();
  int ia = a.id;
  Mat lcopy = l;
  return a.tape->emplace(std::move(out), {ia}, [ia, lcopy](Tape& t, const Mat& g) {
    const auto n = lcopy.rows();
    Mat inv = lcopy.triangularView<Eigen::Lower>().solve(Mat(Mat::Identity(n, n)));
    Mat ainv = lcopy.transpose().triangularView<Eigen::Upper>().solve(inv);
    t.accumulate(ia, Mat(g(0, 0) * 0.5 * (ainv + ainv.transpose())));
  });
}

Node sum_log_diag(Node a) {
  require(a.rows() == a.cols(), "sum_log_diag: matrix must be square");
  if ((a.value().diagonal().array() <= 0.0).any())
    throw DomainError("sum_log_diag: non-positive diagonal entry");
  Mat out(1, 1);
  out(0, 0) = a.value().diagonal().array().log().sum();
  int ia = a.id;
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    Mat ga = Mat::Zero(av.rows(), av.cols());
    ga.diagonal() = g(0, 0) * av.diagonal().cwiseInverse();
    t.accumulate(ia, ga);
  });
}

Node lgamma_n(Node a) {
  require(a.rows() == 1 && a.cols() == 1, "lgamma: scalar node expected");
  Mat out(1, 1);
  out(0, 0) = special::lgamma(a.value()(0, 0));
  int ia = a.id;
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    Mat ga(1, 1);
    ga(0, 0) = g(0, 0) * special::digamma(t.value_of(ia)(0, 0));
    t.accumulate(ia, ga);
  });
}

Node digamma_n(Node a) {
  require(a.rows() == 1 && a.cols() == 1, "digamma: scalar node expected");
  Mat out(1, 1);
  out(0, 0) = special::digamma(a.value()(0, 0));
  int ia = a.id;
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    Mat ga(1, 1);
    ga(0, 0) = g(0, 0) * special::trigamma(t.value_of(ia)(0, 0));
    t.accumulate(ia, ga);
  });
}

Node mvlgamma_n(Node a, int p) {
  require(a.rows() == 1 && a.cols() == 1, "mvlgamma: scalar node expected");
  Mat out(1, 1);
  out(0, 0) = special::mvlgamma(a.value()(0, 0), p);
  int ia = a.id;
  return a.tape->emplace(std::move(out), {ia}, [ia, p](Tape& t, const Mat& g) {
    Mat ga(1, 1);
    ga(0, 0) = g(0, 0) * special::mvlgamma_da(t.value_of(ia)(0, 0), p);
    t.accumulate(ia, ga);
  });
}

Node colwise_dot(Node a, Node b) {
  check_same_tape(a, b, "colwise_dot");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "colwise_dot: shape mismatch");
  Mat out = a.value().cwiseProduct(b.value()).colwise().sum();
  int ia = a.id, ib = b.id;
  return a.tape->emplace(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    const Mat& bv = t.value_of(ib);
    Mat grow = Mat::Ones(av.rows(), 1) * g;  // broadcast row
    t.accumulate(ia, grow.cwiseProduct(bv));
    t.accumulate(ib, grow.cwiseProduct(av));
  });
}

Node rows_scale(Node m, Node v) {
  check_same_tape(m, v, "rows_scale");
  require(v.cols() == 1 && v.rows() == m.rows(), "rows_scale: v must be rows x 1");
  Mat out = v.value().asDiagonal() * m.value();
  int im = m.id, iv = v.id;
  return m.tape->emplace(std::move(out), {im, iv}, [im, iv](Tape& t, const Mat& g) {
    const Mat& mv = t.value_of(im);
    const Mat& vv = t.value_of(iv);
    t.accumulate(im, Mat(vv.asDiagonal() * g));
    t.accumulate(iv, Mat(g.cwiseProduct(mv).rowwise().sum()));
  });
}

Node log_softmax_rows(Node m) {
  const Mat& v = m.value();
  Mat out(v.rows(), v.cols());
  for (int i = 0; i < v.rows(); ++i) {
    const double mx = v.row(i).maxCoeff();
    const double lse = mx + std::log((v.row(i).array() - mx).exp().sum());
    out.row(i) = v.row(i).array() - lse;
  }
  int im = m.id;
  Mat outc = out;
  return m.tape->emplace(std::move(out), {im}, [im, outc](Tape& t, const Mat& g) {
    Mat soft = outc.array().exp();
    Mat rs = g.rowwise().sum();
    t.accumulate(im, Mat(g - rs.asDiagonal() * soft));
  });
}

Node select_cols_per_row(Node m, const std::vector<int>& cols) {
  require(static_cast<int>(cols.size()) == m.rows(),
          "select_cols_per_row: one column index per row required");
  for (int c : cols)
    if (c < 0 || c >= m.cols()) throw DomainError("select_cols_per_row: label out of range");
  Mat out(m.rows(), 1);
  for (int i = 0; i < m.rows(); ++i) out(i, 0) = m.value()(i, cols[i]);
  int im = m.id;
  std::vector<int> cc = cols;
  return m.tape->emplace(std::move(out), {im}, [im, cc](Tape& t, const Mat& g) {
    const Mat& mv = t.value_of(im);
    Mat gm = Mat::Zero(mv.rows(), mv.cols());
    for (int i = 0; i < mv.rows(); ++i) gm(i, cc[i]) = g(i, 0);
    t.accumulate(im, gm);
  });
}

Node diag_col(Node a) {
  require(a.rows() == a.cols(), "diag_col: matrix must be square");
  int ia = a.id;
  Mat out = a.value().diagonal();
  return a.tape->emplace(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    Mat ga = Mat::Zero(av.rows(), av.cols());
    ga.diagonal() = g.col(0);
    t.accumulate(ia, ga);
  });
}

Node clamp_min(Node a, double lo) {
  int ia = a.id;
  Mat out = a.value().cwiseMax(lo);
  return a.tape->emplace(std::move(out), {ia}, [ia, lo](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    Mat ga = (av.array() > lo).select(g, Mat::Zero(g.rows(), g.cols()));
    t.accumulate(ia, ga);
  });
}

Node sq_dist_from_gram(Node g) {
  require(g.rows() == g.cols(), "sq_dist_from_gram: Gram matrix must be square");
  const Mat& v = g.value();
  const auto n = v.rows();
  Mat r = v.diagonal() * Mat::Ones(1, n) + Mat::Ones(n, 1) * v.diagonal().transpose() -
          2.0 * v;
  r = r.cwiseMax(0.0);
  int ig = g.id;
  return g.tape->emplace(std::move(r), {ig}, [ig](Tape& t, const Mat& gr) {
    // Linear rule R_ij = G_ii - 2 G_ij + G_jj; the clamp only trims
    // roundoff-negative entries, gradient passes through.
    Mat gg = -2.0 * gr;
    Vec d = gr.rowwise().sum() + gr.colwise().sum().transpose();
    gg.diagonal() += d;
    t.accumulate(ig, gg);
  });
}

Node arccos_relu_kernel(Node g, bool doubled) {
  require(g.rows() == g.cols(), "arccos_relu_kernel: Gram matrix must be square");
  const Mat& v = g.value();
  const auto n = v.rows();
  if ((v.diagonal().array() < 0.0).any())
    throw DomainError("arccos_relu_kernel: negative diagonal");
  const double sc = doubled ? 2.0 : 1.0;
  Mat k(n, n), theta(n, n), norm(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double nij = std::sqrt(v(i, i) * v(j, j));
      norm(i, j) = nij;
      if (i == j) {
        // theta = 0 exactly on the diagonal; K_ii = s * G_ii / 2.
        theta(i, j) = 0.0;
        k(i, j) = 0.5 * sc * v(i, i);
        continue;
      }
      if (nij <= 0.0) {
        theta(i, j) = 0.0;
        k(i, j) = 0.0;
        continue;
      }
      double c = v(i, j) / nij;
      c = std::clamp(c, -1.0 + 1e-12, 1.0 - 1e-12);
      const double th = std::acos(c);
      theta(i, j) = th;
      k(i, j) = sc / (2.0 * M_PI) * nij * (std::sin(th) + (M_PI - th) * std::cos(th));
    }
  }
  k = symmetrize(k);
  if (!k.allFinite()) throw NumericError("arccos_relu_kernel: non-finite output");
  int ig = g.id;
  return g.tape->emplace(std::move(k), {ig}, [ig, theta, norm, sc](Tape& t, const Mat& gr) {
    const Mat& v = t.value_of(ig);
    const auto n = v.rows();
    Mat gg = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = gr(i, j);
        if (w == 0.0) continue;
        if (i == j) {
          gg(i, i) += w * 0.5 * sc;
          continue;
        }
        const double nij = norm(i, j);
        if (nij <= 0.0) continue;
        const double th = theta(i, j);
        const double sth = std::sin(th);
        // dK/dG_ij = s/(2pi) (pi - theta); dK/dG_ii = s/(4pi) (n/G_ii) sin(theta)
        // (the theta and norm paths through G_ii combine to the sine term).
        gg(i, j) += w * sc / (2.0 * M_PI) * (M_PI - th);
        if (v(i, i) > 0.0) gg(i, i) += w * sc / (4.0 * M_PI) * (nij / v(i, i)) * sth;
        if (v(j, j) > 0.0) gg(j, j) += w * sc / (4.0 * M_PI) * (nij / v(j, j)) * sth;
      }
    }
    t.accumulate(ig, gg);
  });
}

Node arccos_relu_cross(Node d_col, Node g_it, Node g_tt_col, bool doubled) {
  check_same_tape(d_col, g_it, "arccos_relu_cross");
  check_same_tape(d_col, g_tt_col, "arccos_relu_cross");
  const auto pi = d_col.rows();
  const auto pt = g_tt_col.rows();
  require(d_col.cols() == 1 && g_tt_col.cols() == 1 && g_it.rows() == pi &&
              g_it.cols() == pt,
          "arccos_relu_cross: inconsistent shapes");
  const Mat& d = d_col.value();
  const Mat& x = g_it.value();
  const Mat& gt = g_tt_col.value();
  if ((d.array() < 0.0).any() || (gt.array() < 0.0).any())
    throw DomainError("arccos_relu_cross: negative variance entry");
  const double sc = doubled ? 2.0 : 1.0;
  Mat k(pi, pt), theta(pi, pt), norm(pi, pt);
  for (Eigen::Index i = 0; i < pi; ++i) {
    for (Eigen::Index j = 0; j < pt; ++j) {
      const double nij = std::sqrt(d(i, 0) * gt(j, 0));
      norm(i, j) = nij;
      if (nij <= 0.0) {
        theta(i, j) = 0.0;
        k(i, j) = 0.0;
        continue;
      }
      double c = x(i, j) / nij;
      c = std::clamp(c, -1.0 + 1e-12, 1.0 - 1e-12);
      const double th = std::acos(c);
      theta(i, j) = th;
      k(i, j) = sc / (2.0 * M_PI) * nij * (std::sin(th) + (M_PI - th) * std::cos(th));
    }
  }
  if (!k.allFinite()) throw NumericError("arccos_relu_cross: non-finite output");
  int id = d_col.id, ix = g_it.id, ig = g_tt_col.id;
  return d_col.tape->emplace(std::move(k), {id, ix, ig},
                             [id, ix, ig, theta, norm, sc](Tape& t, const Mat& gr) {
    const Mat& d = t.value_of(id);
    const Mat& gt = t.value_of(ig);
    Mat gd = Mat::Zero(d.rows(), 1);
    Mat gx = Mat::Zero(gr.rows(), gr.cols());
    Mat gg = Mat::Zero(gt.rows(), 1);
    for (Eigen::Index i = 0; i < gr.rows(); ++i) {
      for (Eigen::Index j = 0; j < gr.cols(); ++j) {
        const double w = gr(i, j);
        if (w == 0.0) continue;
        const double nij = norm(i, j);
        if (nij <= 0.0) continue;
        const double th = theta(i, j);
        const double sth = std::sin(th);
        gx(i, j) += w * sc / (2.0 * M_PI) * (M_PI - th);
        if (d(i, 0) > 0.0) gd(i, 0) += w * sc / (4.0 * M_PI) * (nij / d(i, 0)) * sth;
        if (gt(j, 0) > 0.0) gg(j, 0) += w * sc / (4.0 * M_PI) * (nij / gt(j, 0)) * sth;
      }
    }
    t.accumulate(id, gd);
    t.accumulate(ix, gx);
    t.accumulate(ig, gg);
  });
}

Node gamma_sample(Node shape, Node rate) {
  check_same_tape(shape, rate, "gamma_sample");
  const double a = shape.scalar();
  const double r = rate.scalar();
  if (!(a > 0.0) || !(r > 0.0)) throw DomainError("gamma_sample: parameters must be positive");
  const double u = shape.tape->uniform();
  const double g1 = special::gammainc_p_inv(a, u);  // Gamma(a, 1) draw
  const double pdf = std::exp(special::gamma_logpdf1(a, g1));
  double dg_da = 0.0;
  if (pdf > 0.0 && std::isfinite(pdf)) dg_da = -special::gammainc_p_da(a, g1) / pdf;
  const double z = g1 / r;
  Mat out(1, 1);
  out(0, 0) = z;
  int is = shape.id, ir = rate.id;
  return shape.tape->emplace(std::move(out), {is, ir},
                             [is, ir, dg_da, z](Tape& t, const Mat& g) {
    const double rv = t.value_of(ir)(0, 0);
    Mat gs(1, 1), gr(1, 1);
    gs(0, 0) = g(0, 0) * dg_da / rv;
    gr(0, 0) = -g(0, 0) * z / rv;
    t.accumulate(is, gs);
    t.accumulate(ir, gr);
  });
}

}  // namespace dkp::ad
