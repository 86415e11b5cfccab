#include "dkp/inference.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

#include "dkp/distributions.hpp"

namespace dkp::infer {

using ad::Node;
using ad::Tape;

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the concatenated words.
  std::uint64_t x = base;
  for (std::uint64_t w : {a + 1, b + 1}) {
    x += 0x9e3779b97f4a7c15ULL * w;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x = x ^ (x >> 31);
  }
  return x;
}

namespace {

Node sym(Node x) { return ad::scale(ad::add(x, ad::transpose(x)), 0.5); }

// Column of squared column norms of a as a P_t x 1 node.
Node col_sq_norms(Node a) { return ad::transpose(ad::colwise_dot(a, a)); }

}  // namespace

PartKernel apply_kernel_partitioned(const kern::KernelSpec& spec, Node g_ii, Node g_it,
                                    Node g_tt_diag) {
  Tape& t = *g_ii.tape;
  const int pt = g_tt_diag.rows();
  const int pi = g_ii.rows();
  PartKernel out;
  switch (spec.family) {
    case kern::Family::linear:
      out.k_ii = g_ii;
      out.k_it = g_it;
      out.k_tt_diag = g_tt_diag;
      return out;
    case kern::Family::squared_exponential: {
      out.k_ii = kern::apply_kernel(spec, g_ii);
      Node d = ad::diag_col(g_ii);
      Node r = ad::add(ad::sub(ad::matmul(d, t.leaf(Mat::Ones(1, pt))),
                               ad::scale(g_it, 2.0)),
                       ad::matmul(t.leaf(Mat::Ones(pi, 1)), ad::transpose(g_tt_diag)));
      r = ad::clamp_min(r, 0.0);
      const double bw2 = spec.bandwidth * spec.bandwidth;
      out.k_it = ad::vexp(ad::scale(r, -0.5 / bw2));
      out.k_tt_diag = t.leaf(Mat::Ones(pt, 1));
      return out;
    }
    case kern::Family::arccos_relu: {
      out.k_ii = kern::apply_kernel(spec, g_ii);
      out.k_it = ad::arccos_relu_cross(ad::diag_col(g_ii), g_it, g_tt_diag, spec.doubled);
      out.k_tt_diag = ad::scale(g_tt_diag, spec.doubled ? 1.0 : 0.5);
      return out;
    }
  }
  throw ConfigError("invalid kernel family value");
}

PartitionedGram conditional_gram_sample(Tape& t, Node psi_ii, Node psi_it, Node psi_tt,
                                        Node g_ii, Node delta, CondMode mode) {
  const int pi = psi_ii.rows();
  const int pt = psi_it.cols();
  Node lp = ad::cholesky(psi_ii);
  Node w = ad::trisolve(lp, psi_it, false);         // Lp^{-1} Psi_it
  Node b = ad::trisolve(lp, w, true);               // Psi_ii^{-1} Psi_it
  Node lg = ad::cholesky(g_ii);

  PartitionedGram out;
  out.g_ii = g_ii;

  if (mode == CondMode::joint) {
    require(psi_tt.rows() == pt && psi_tt.cols() == pt,
            "conditional_gram_sample: joint mode needs a full test block");
    Node psi_tt_i = sym(ad::sub(psi_tt, ad::matmul(ad::transpose(w), w)));
    Node dof = ad::add(delta, t.scalar(pi + pt + 1.0));
    Node g_tt_i = dist::invwishart_sample(t, psi_tt_i, dof);
    // G_it ~ MN(G_ii Psi_ii^{-1} Psi_it, G_ii Psi_ii^{-1} G_ii, G_tt.i):
    // row square-root G_ii Lp^{-T}, column square-root chol(G_tt.i).
    Node mean = ad::matmul(g_ii, b);
    Node row_fac = ad::transpose(ad::trisolve(lp, g_ii, false));
    Node lc = ad::cholesky(g_tt_i);
    Node e = t.leaf(t.normal_mat(pi, pt));
    Node g_it = ad::add(mean, ad::matmul(ad::matmul(row_fac, e), ad::transpose(lc)));
    Node u = ad::trisolve(lg, g_it, false);
    out.g_it = g_it;
    out.g_tt = sym(ad::add(g_tt_i, ad::matmul(ad::transpose(u), u)));
    out.diagonal = false;
    return out;
  }

  require(psi_tt.cols() == 1 && psi_tt.rows() == pt,
          "conditional_gram_sample: per_point mode needs a diagonal column");
  Node psi_tt_i = ad::clamp_min(ad::sub(psi_tt, col_sq_norms(w)), 1e-12);
  // P_t = 1 per point: dof = delta + P_i + 2, so alpha = (delta + P_i + 2)/2.
  Node alpha = ad::scale(ad::add(delta, t.scalar(pi + 2.0)), 0.5);
  Node beta = ad::scale(psi_tt_i, 0.5);
  Node g_tt_i = dist::invgamma_sample_vec(t, alpha, beta);
  // G_ii^{-1} g_it ~ N(Psi_ii^{-1} psi_it, g_tt.i Psi_ii^{-1}) per point.
  Node e = t.leaf(t.normal_mat(pi, pt));
  Node s = ad::trisolve(lp, e, true);  // Lp^{-T} E
  Node scaled = ad::transpose(ad::rows_scale(ad::transpose(s), ad::vsqrt(g_tt_i)));
  Node g_it = ad::matmul(g_ii, ad::add(b, scaled));
  Node u = ad::trisolve(lg, g_it, false);
  out.g_it = g_it;
  out.g_tt = ad::add(g_tt_i, col_sq_norms(u));
  out.diagonal = true;
  return out;
}

ForwardPass elbo_forward(Tape& t, const model::Model& m, const Mat& x_batch,
                         const Mat& y_batch, double scale, CondMode mode) {
  const auto& spec = m.spec();
  const int pi = spec.inducing;
  const int pt = static_cast<int>(x_batch.rows());
  require(pt >= 1, "elbo_forward: empty batch");

  ForwardPass fp;
  fp.tm = model::bind(t, m);
  auto& tm = fp.tm;

  // Layer 1: Omega and the input-layer Gram over all rows.
  auto omega = model::q_omega_sample_logpdf(tm);
  fp.layer_terms.push_back(ad::sub(omega.logp, omega.logq));

  Node g_ii, g_it, g_tt;  // current Gram partition (g_tt diagonal in per_point)
  {
    Node xt = model::combined_inputs(tm, x_batch);
    if (mode == CondMode::joint) {
      Node g_full = model::input_gram(tm, xt, omega.sample);
      g_ii = ad::slice_block(g_full, 0, 0, pi, pi);
      g_it = ad::slice_block(g_full, 0, pi, pi, pt);
      g_tt = ad::slice_block(g_full, pi, pi, pt, pt);
    } else {
      // Direct partition: avoids the P_t x P_t block entirely.
      Node xi = ad::slice_block(xt, 0, 0, pi, spec.input_dim);
      Node xb = ad::slice_block(xt, pi, 0, pt, spec.input_dim);
      Node xo = ad::matmul(xi, omega.sample);              // P_i x N0
      Node xbo = ad::matmul(xb, omega.sample);             // P_t x N0
      const double inv_n0 = 1.0 / spec.input_dim;
      g_ii = ad::scale(sym(ad::matmul(xo, ad::transpose(xi))), inv_n0);
      g_it = ad::scale(ad::matmul(xo, ad::transpose(xb)), inv_n0);
      g_tt = ad::scale(
          ad::transpose(ad::colwise_dot(ad::transpose(xbo), ad::transpose(xb))), inv_n0);
    }
  }

  // Hidden layers 2..L.
  for (int layer = 2; layer <= spec.layers; ++layer) {
    try {
      PartKernel k;
      Node k_tt_full;  // joint mode only
      if (mode == CondMode::joint) {
        Node g_full = ad::sym_block2(g_ii, g_it, g_tt);
        Node k_full = kern::apply_kernel(spec.kernel, g_full);
        k.k_ii = ad::slice_block(k_full, 0, 0, pi, pi);
        k.k_it = ad::slice_block(k_full, 0, pi, pi, pt);
        k_tt_full = ad::slice_block(k_full, pi, pi, pt, pt);
      } else {
        k = apply_kernel_partitioned(spec.kernel, g_ii, g_it, g_tt);
      }
      auto hs = model::q_hidden_sample_logpdf(tm, layer, k.k_ii);
      fp.layer_terms.push_back(ad::sub(hs.logp, hs.logq));
      if (spec.nngp[layer - 1]) {
        g_ii = hs.sample;  // = K_ii
        g_it = k.k_it;
        g_tt = (mode == CondMode::joint) ? k_tt_full : k.k_tt_diag;
      } else {
        Node delta = tm.pos("h" + std::to_string(layer) + ".delta_raw");
        Node psi_ii = ad::mul_scalar(k.k_ii, delta);
        Node psi_it = ad::mul_scalar(k.k_it, delta);
        Node psi_tt = ad::mul_scalar(mode == CondMode::joint ? k_tt_full : k.k_tt_diag,
                                     delta);
        auto pg = conditional_gram_sample(t, psi_ii, psi_it, psi_tt, hs.sample, delta,
                                          mode);
        g_ii = pg.g_ii;
        g_it = pg.g_it;
        g_tt = pg.g_tt;
      }
    } catch (const DecompositionError& e) {
      throw NumericError("layer " + std::to_string(layer) + ": " + e.what());
    }
  }

  // Output layer.
  try {
    PartKernel k;
    Node k_tt_full;
    if (mode == CondMode::joint) {
      Node g_full = ad::sym_block2(g_ii, g_it, g_tt);
      Node k_full = kern::apply_kernel(spec.kernel, g_full);
      k.k_ii = ad::slice_block(k_full, 0, 0, pi, pi);
      k.k_it = ad::slice_block(k_full, 0, pi, pi, pt);
      k_tt_full = ad::slice_block(k_full, pi, pi, pt, pt);
    } else {
      k = apply_kernel_partitioned(spec.kernel, g_ii, g_it, g_tt);
    }
    auto os = model::q_output_sample_logpdf(tm, k.k_ii);
    fp.layer_terms.push_back(ad::sub(os.logp, os.logq));

    // Conditional-prior propagation of F to the batch points.
    Node lk = ad::cholesky(k.k_ii);
    Node a = ad::trisolve(lk, k.k_it, false);
    Node bmat = ad::trisolve(lk, os.sample, false);
    fp.f_t_mean = ad::matmul(ad::transpose(a), bmat);
    if (mode == CondMode::joint) {
      Node s = sym(ad::sub(k_tt_full, ad::matmul(ad::transpose(a), a)));
      Node ls = ad::cholesky(ad::add(
          s, ad::scale(t.leaf(Mat::Identity(pt, pt)), 1e-12)));
      Node e = t.leaf(t.normal_mat(pt, spec.output_dim));
      fp.f_t = ad::add(fp.f_t_mean, ad::matmul(ls, e));
      fp.f_t_var = s;
    } else {
      Node v = ad::clamp_min(ad::sub(k.k_tt_diag, col_sq_norms(a)), 1e-12);
      Node e = t.leaf(t.normal_mat(pt, spec.output_dim));
      fp.f_t = ad::add(fp.f_t_mean, ad::rows_scale(e, ad::vsqrt(v)));
      fp.f_t_var = v;
    }
  } catch (const DecompositionError& e) {
    throw NumericError(std::string("output layer: ") + e.what());
  }

  fp.loglik = model::likelihood_logpdf(tm, fp.f_t, y_batch);
  Node total = ad::scale(fp.loglik, scale);
  for (const auto& term : fp.layer_terms) total = ad::add(total, term);
  fp.elbo = total;
  return fp;
}

namespace {

// Runs fn(sample_index) for i in [0, n) on up to `threads` workers.
void parallel_samples(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0)
    threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

ElboReport elbo_batch(const model::Model& m, const Mat& x_batch, const Mat& y_batch,
                      int n_samples, double scale, std::uint64_t seed, CondMode mode,
                      int threads) {
  require(n_samples >= 1, "elbo_batch: need at least one sample");
  ElboReport rep;
  rep.scale = scale;
  rep.n_samples = n_samples;
  const int n_terms = m.spec().layers + 1;
  rep.layer_terms.assign(n_terms, 0.0);
  std::vector<double> totals(n_samples), logliks(n_samples);
  std::vector<std::vector<double>> terms(n_samples);
  parallel_samples(n_samples, threads, [&](int i) {
    Tape t(mix_seed(seed, static_cast<std::uint64_t>(i)));
    auto fp = elbo_forward(t, m, x_batch, y_batch, scale, mode);
    totals[i] = fp.elbo.scalar();
    logliks[i] = fp.loglik.scalar();
    terms[i].resize(fp.layer_terms.size());
    for (std::size_t k = 0; k < fp.layer_terms.size(); ++k)
      terms[i][k] = fp.layer_terms[k].scalar();
  });
  for (int i = 0; i < n_samples; ++i) {
    rep.total += totals[i] / n_samples;
    rep.expected_loglik += logliks[i] / n_samples;
    for (int k = 0; k < n_terms; ++k) rep.layer_terms[k] += terms[i][k] / n_samples;
  }
  return rep;
}

PredictiveSummary predict(const model::Model& m, const Mat& x_test, const Mat& y_test,
                          int n_samples, std::uint64_t seed, int threads) {
  const auto& spec = m.spec();
  const int pt = static_cast<int>(x_test.rows());
  PredictiveSummary out;
  out.n_samples = n_samples;
  if (spec.likelihood == model::Likelihood::gaussian) {
    // Per sample, the analytic per-point density N(y; mean, var + sigma^2).
    const double sigma2 =
        model::softplus_val(m.params().at("out.noise_raw")(0, 0));
    Mat lls(pt, n_samples);
    parallel_samples(n_samples, threads, [&](int s) {
      Tape t(mix_seed(seed, static_cast<std::uint64_t>(s)));
      auto fp = elbo_forward(t, m, x_test, y_test, 1.0, CondMode::per_point);
      const Mat& mean = fp.f_t_mean.value();
      const Mat& var = fp.f_t_var.value();
      for (int j = 0; j < pt; ++j) {
        double ll = 0.0;
        for (int c = 0; c < spec.output_dim; ++c) {
          const double v = var(j, 0) + sigma2;
          const double r = y_test(j, c) - mean(j, c);
          ll += -0.5 * r * r / v - 0.5 * std::log(2.0 * M_PI * v);
        }
        lls(j, s) = ll;
      }
    });
    out.per_point_loglik.resize(pt);
    for (int j = 0; j < pt; ++j) {
      const double mx = lls.row(j).maxCoeff();
      double acc = 0.0;
      for (int s = 0; s < n_samples; ++s) acc += std::exp(lls(j, s) - mx);
      out.per_point_loglik[j] = mx + std::log(acc / n_samples);
      out.mean_loglik += out.per_point_loglik[j] / pt;
    }
    return out;
  }

  // Classification: average class probabilities over sampled logits.
  Mat probs = Mat::Zero(pt, spec.output_dim);
  std::mutex mu;
  parallel_samples(n_samples, threads, [&](int s) {
    Tape t(mix_seed(seed, static_cast<std::uint64_t>(s)));
    auto fp = elbo_forward(t, m, x_test, y_test, 1.0, CondMode::per_point);
    Mat p = ad::log_softmax_rows(fp.f_t).value().array().exp();
    std::lock_guard<std::mutex> lock(mu);
    probs += p;
  });
  probs /= n_samples;
  out.per_point_loglik.resize(pt);
  int correct = 0;
  for (int j = 0; j < pt; ++j) {
    const int label = static_cast<int>(y_test(j, 0));
    out.per_point_loglik[j] = std::log(std::max(probs(j, label), 1e-300));
    out.mean_loglik += out.per_point_loglik[j] / pt;
    int argmax = 0;
    probs.row(j).maxCoeff(&argmax);
    if (argmax == label) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / pt;
  return out;
}

ProbeResult complexity_probe(const std::vector<int>& pi_grid,
                             const std::vector<int>& pt_grid, std::uint64_t seed,
                             int repeats) {
  require(!pi_grid.empty() && !pt_grid.empty(), "complexity_probe: empty grid");
  ProbeResult res;
  const int n0 = 4;

  auto time_once = [&](int pi, int pt) {
    Tape init(seed);
    Mat x = init.normal_mat(pt, n0);
    Mat y = init.normal_mat(pt, 1);
    model::ModelSpec spec;
    spec.layers = 2;
    spec.inducing = pi;
    spec.input_dim = n0;
    spec.kernel.family = kern::Family::arccos_relu;
    model::Model m(spec, seed, x);
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
      const auto start = std::chrono::steady_clock::now();
      Tape t(mix_seed(seed, static_cast<std::uint64_t>(r)));
      auto fp = elbo_forward(t, m, x, y, 1.0, CondMode::per_point);
      t.backward(fp.elbo);
      const auto stop = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(stop - start).count());
    }
    return best;
  };

  for (int pi : pi_grid)
    for (int pt : pt_grid) res.rows.push_back({pi, pt, time_once(pi, pt)});

  auto fit_exponent = [&](const std::vector<std::pair<int, double>>& pts) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(pts.size());
    for (const auto& [k, t] : pts) {
      const double lx = std::log(static_cast<double>(k));
      const double ly = std::log(t);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
  };

  std::vector<std::pair<int, double>> pt_pts, pi_pts;
  const int pi_fixed = pi_grid.back();
  const int pt_fixed = pt_grid.front();
  for (const auto& row : res.rows) {
    if (row.p_i == pi_fixed) pt_pts.push_back({row.p_t, row.seconds});
    if (row.p_t == pt_fixed) pi_pts.push_back({row.p_i, row.seconds});
  }
  if (pt_pts.size() >= 2) res.exponent_pt = fit_exponent(pt_pts);
  if (pi_pts.size() >= 2) res.exponent_pi = fit_exponent(pi_pts);
  return res;
}

}  // namespace dkp::infer
