#include "dkp/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "dkp/distributions.hpp"
#include "json.hpp"

namespace dkp::model {

using ad::Node;
using ad::Tape;

namespace {
constexpr double kLog2Pi = 1.8378770664093455;
}

double softplus_val(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
}

double softplus_inv(double y) {
  if (!(y >= 0.0)) throw DomainError("softplus_inv: argument must be non-negative");
  if (y == 0.0) return -800.0;  // softplus underflows to exactly zero
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

Likelihood likelihood_from_string(const std::string& name) {
  if (name == "gaussian") return Likelihood::gaussian;
  if (name == "categorical") return Likelihood::categorical;
  throw ConfigError("unknown likelihood: " + name);
}

std::string likelihood_to_string(Likelihood l) {
  return l == Likelihood::gaussian ? "gaussian" : "categorical";
}

void ModelSpec::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (inducing < 1) throw ConfigError("inducing count must be >= 1");
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (output_dim < 1) throw ConfigError("output_dim must be >= 1");
  if (!nngp.empty() && static_cast<int>(nngp.size()) != layers)
    throw ConfigError("nngp flag list must have one entry per layer");
  if (kernel.family == kern::Family::squared_exponential && !(kernel.bandwidth > 0.0))
    throw ConfigError("squared_exponential kernel requires bandwidth > 0");
}

void ParamSet::add(const std::string& name, Mat value) {
  if (has(name)) throw ConfigError("duplicate parameter name: " + name);
  order_.push_back(name);
  values_.emplace(name, std::move(value));
}

Mat& ParamSet::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Mat& ParamSet::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Model::Model(ModelSpec spec, std::uint64_t seed, const Mat& x_train, double target_var)
    : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.nngp.empty()) spec_.nngp.assign(spec_.layers, false);
  require(x_train.cols() == spec_.input_dim, "Model: x_train width must equal input_dim");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int n0 = spec_.input_dim;
  const int pi = spec_.inducing;
  const int nout = spec_.output_dim;

  const double delta_in = spec_.delta_init > 0.0 ? spec_.delta_init : double(n0);
  const double delta_hid = spec_.delta_init > 0.0 ? spec_.delta_init : double(pi);

  params_.add("in.delta_raw", Mat::Constant(1, 1, softplus_inv(delta_in)));
  params_.add("in.gamma_raw", Mat::Constant(1, 1, softplus_inv(1e-3)));
  params_.add("in.V", Mat(1e-3 * Mat::Identity(n0, n0)));
  params_.add("in.bias", Mat::Zero(1, n0));
  params_.add("in.scale_raw", Mat::Constant(1, n0, softplus_inv(1.0)));

  // Inducing inputs: a random subset of training rows; sample with
  // replacement plus small noise when the dataset is smaller than P_i.
  Mat xi(pi, n0);
  const int n = static_cast<int>(x_train.rows());
  if (n >= pi) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int r = 0; r < pi; ++r) xi.row(r) = x_train.row(idx[r]);
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int r = 0; r < pi; ++r) {
      xi.row(r) = x_train.row(pick(rng));
      for (int c = 0; c < n0; ++c) xi(r, c) += 1e-3 * nd(rng);
    }
  }
  params_.add("inducing.X", std::move(xi));

  for (int l = 2; l <= spec_.layers; ++l) {
    const std::string pre = "h" + std::to_string(l) + ".";
    params_.add(pre + "delta_raw", Mat::Constant(1, 1, softplus_inv(delta_hid)));
    params_.add(pre + "gamma_raw", Mat::Constant(1, 1, softplus_inv(1e-3)));
    params_.add(pre + "V", Mat(1e-3 * Mat::Identity(pi, pi)));
  }

  Mat v(pi, nout);
  for (int i = 0; i < pi; ++i)
    for (int j = 0; j < nout; ++j) v(i, j) = 0.1 * nd(rng);
  params_.add("out.v", std::move(v));
  params_.add("out.lambda_raw", Mat::Constant(pi, nout, softplus_inv(1.0)));
  if (spec_.likelihood == Likelihood::gaussian)
    params_.add("out.noise_raw",
                Mat::Constant(1, 1, softplus_inv(std::max(0.1 * target_var, 1e-8))));
}

Model::Model(ModelSpec spec, ParamSet params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  if (spec_.nngp.empty()) spec_.nngp.assign(spec_.layers, false);
}

std::string Model::to_json() const {
  nlohmann::ordered_json j;
  j["spec"]["layers"] = spec_.layers;
  j["spec"]["inducing"] = spec_.inducing;
  j["spec"]["input_dim"] = spec_.input_dim;
  j["spec"]["output_dim"] = spec_.output_dim;
  j["spec"]["kernel"]["family"] = kern::family_to_string(spec_.kernel.family);
  j["spec"]["kernel"]["bandwidth"] = spec_.kernel.bandwidth;
  j["spec"]["kernel"]["doubled"] = spec_.kernel.doubled;
  j["spec"]["likelihood"] = likelihood_to_string(spec_.likelihood);
  j["spec"]["nngp"] = spec_.nngp;
  j["spec"]["delta_init"] = spec_.delta_init;
  nlohmann::ordered_json ps = nlohmann::ordered_json::array();
  for (const auto& name : params_.names()) {
    const Mat& m = params_.at(name);
    nlohmann::ordered_json p;
    p["name"] = name;
    p["rows"] = m.rows();
    p["cols"] = m.cols();
    std::vector<double> data(m.size());
    for (Eigen::Index c = 0, k = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r, ++k) data[k] = m(r, c);
    p["data"] = data;
    ps.push_back(std::move(p));
  }
  j["params"] = std::move(ps);
  return j.dump(2);
}

Model Model::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint parse failure: ") + e.what());
  }
  try {
    ModelSpec spec;
    const auto& s = j.at("spec");
    spec.layers = s.at("layers").get<int>();
    spec.inducing = s.at("inducing").get<int>();
    spec.input_dim = s.at("input_dim").get<int>();
    spec.output_dim = s.at("output_dim").get<int>();
    spec.kernel.family = kern::family_from_string(s.at("kernel").at("family"));
    spec.kernel.bandwidth = s.at("kernel").at("bandwidth").get<double>();
    spec.kernel.doubled = s.at("kernel").at("doubled").get<bool>();
    spec.likelihood = likelihood_from_string(s.at("likelihood"));
    spec.nngp = s.at("nngp").get<std::vector<bool>>();
    spec.delta_init = s.at("delta_init").get<double>();
    ParamSet params;
    for (const auto& p : j.at("params")) {
      const int rows = p.at("rows").get<int>();
      const int cols = p.at("cols").get<int>();
      const auto data = p.at("data").get<std::vector<double>>();
      if (static_cast<int>(data.size()) != rows * cols)
        throw IoError("checkpoint parameter size mismatch: " +
                      p.at("name").get<std::string>());
      Mat m(rows, cols);
      for (int c = 0, k = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r, ++k) m(r, c) = data[k];
      params.add(p.at("name").get<std::string>(), std::move(m));
    }
    return Model(std::move(spec), std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint field error: ") + e.what());
  }
}

Node TapeModel::raw(const std::string& name) const {
  auto it = leaves.find(name);
  if (it == leaves.end()) throw ConfigError("unbound parameter: " + name);
  return it->second;
}

Node TapeModel::pos(const std::string& name) const { return ad::softplus(raw(name)); }

TapeModel bind(Tape& t, const Model& m) {
  TapeModel tm;
  tm.tape = &t;
  tm.spec = &m.spec();
  for (const auto& name : m.params().names()) tm.leaves[name] = t.leaf(m.params().at(name));
  return tm;
}

Node combined_inputs(const TapeModel& tm, const Mat& x_batch) {
  Tape& t = *tm.tape;
  const int n0 = tm.spec->input_dim;
  require(x_batch.cols() == n0, "combined_inputs: batch width must equal input_dim");
  Node xi = tm.raw("inducing.X");
  if (x_batch.rows() == 0) return xi;
  Node xb = t.leaf(x_batch);
  Node bias_rows = ad::matmul(t.leaf(Mat::Ones(x_batch.rows(), 1)), tm.raw("in.bias"));
  Node shifted = ad::sub(xb, bias_rows);
  // Scale columns: transpose, scale rows, transpose back.
  Node scale_col = ad::transpose(tm.pos("in.scale_raw"));
  Node scaled = ad::transpose(ad::rows_scale(ad::transpose(shifted), scale_col));
  return ad::vcat(xi, scaled);
}

Node input_gram(const TapeModel& tm, Node x_tilde, Node omega) {
  const int n0 = tm.spec->input_dim;
  require(omega.rows() == n0 && omega.cols() == n0, "input_gram: Omega must be N0 x N0");
  Node g = ad::scale(ad::matmul(ad::matmul(x_tilde, omega), ad::transpose(x_tilde)),
                     1.0 / n0);
  return ad::scale(ad::add(g, ad::transpose(g)), 0.5);
}

SampleLogs q_omega_sample_logpdf(const TapeModel& tm) {
  Tape& t = *tm.tape;
  const int n0 = tm.spec->input_dim;
  if (tm.spec->nngp[0]) {
    return {t.leaf(Mat::Identity(n0, n0)), t.scalar(0.0), t.scalar(0.0)};
  }
  Node delta = tm.pos("in.delta_raw");
  Node gamma = tm.pos("in.gamma_raw");
  Node v = tm.raw("in.V");
  Node eye = t.leaf(Mat::Identity(n0, n0));
  Node p_scale = ad::mul_scalar(eye, delta);
  Node q_scale = ad::add(p_scale, ad::matmul(v, ad::transpose(v)));
  Node p_dof = ad::add(delta, t.scalar(n0 + 1.0));
  Node q_dof = ad::add(p_dof, gamma);
  Node omega = dist::invwishart_sample(t, q_scale, q_dof);
  Node logq = dist::invwishart_logpdf(omega, q_scale, q_dof);
  Node logp = dist::invwishart_logpdf(omega, p_scale, p_dof);
  return {omega, logp, logq};
}

SampleLogs q_hidden_sample_logpdf(const TapeModel& tm, int layer, Node k_prev) {
  Tape& t = *tm.tape;
  require(layer >= 2 && layer <= tm.spec->layers, "q_hidden: layer out of range");
  const int pi = tm.spec->inducing;
  require(k_prev.rows() == pi && k_prev.cols() == pi,
          "q_hidden: kernel block must be P_i x P_i");
  const std::string pre = "h" + std::to_string(layer) + ".";
  if (tm.spec->nngp[layer - 1]) {
    return {k_prev, t.scalar(0.0), t.scalar(0.0)};
  }
  Node delta = tm.pos(pre + "delta_raw");
  Node gamma = tm.pos(pre + "gamma_raw");
  Node v = tm.raw(pre + "V");
  Node p_scale = ad::mul_scalar(k_prev, delta);
  Node q_scale = ad::add(p_scale, ad::matmul(v, ad::transpose(v)));
  Node p_dof = ad::add(delta, t.scalar(pi + 1.0));
  Node q_dof = ad::add(p_dof, gamma);
  Node g = dist::invwishart_sample(t, q_scale, q_dof);
  Node logq = dist::invwishart_logpdf(g, q_scale, q_dof);
  Node logp = dist::invwishart_logpdf(g, p_scale, p_dof);
  return {g, logp, logq};
}

Node nngp_layer(const kern::KernelSpec& spec, Node k_prev) {
  return kern::apply_kernel(spec, k_prev);
}

SampleLogs q_output_sample_logpdf(const TapeModel& tm, Node k_top) {
  Tape& t = *tm.tape;
  const int pi = tm.spec->inducing;
  const int nout = tm.spec->output_dim;
  require(k_top.rows() == pi && k_top.cols() == pi,
          "q_output: kernel block must be P_i x P_i");
  Node l = ad::cholesky(k_top);
  Node eye = t.leaf(Mat::Identity(pi, pi));
  Node logp = t.scalar(0.0);
  Node logq = t.scalar(0.0);
  Node f_rows;  // accumulates transposed columns
  for (int lam = 0; lam < nout; ++lam) {
    Node lam_col = ad::slice_block(ad::softplus(tm.raw("out.lambda_raw")), 0, lam, pi, 1);
    Node v_col = ad::slice_block(tm.raw("out.v"), 0, lam, pi, 1);
    // Sigma = (K^{-1} + Lambda)^{-1} = L M^{-1} L^T with M = I + L^T Lambda L;
    // square-root factor C = L L_M^{-T}.
    Node lambda_l = ad::rows_scale(l, lam_col);
    Node m = ad::add(eye, ad::matmul(ad::transpose(l), lambda_l));
    Node lm = ad::cholesky(m);
    Node c = ad::transpose(ad::trisolve(lm, ad::transpose(l), false));
    Node lv = ad::hadamard(lam_col, v_col);
    Node mean = ad::matmul(c, ad::matmul(ad::transpose(c), lv));
    Node eps = t.leaf(t.normal_mat(pi, 1));
    Node f = ad::add(mean, ad::matmul(c, eps));
    // log Q at the reparameterized sample: the quadratic form collapses to
    // |eps|^2; log|Sigma| = 2 sum log diag L - 2 sum log diag L_M.
    Node quad_q = ad::sum(ad::hadamard(eps, eps));
    Node lq = ad::add(ad::scale(quad_q, -0.5),
                      ad::sub(ad::sum_log_diag(lm), ad::sum_log_diag(l)));
    lq = ad::add(lq, t.scalar(-0.5 * pi * kLog2Pi));
    // Prior N(f; 0, K): L^{-1} f = L^{-1} mean + L_M^{-T} eps, computed by
    // solves against the factors already in hand.
    Node w = ad::add(ad::trisolve(l, mean, false), ad::trisolve(lm, eps, true));
    Node quad_p = ad::sum(ad::hadamard(w, w));
    Node lp = ad::sub(ad::scale(quad_p, -0.5), ad::sum_log_diag(l));
    lp = ad::add(lp, t.scalar(-0.5 * pi * kLog2Pi));
    logq = ad::add(logq, lq);
    logp = ad::add(logp, lp);
    Node f_row = ad::transpose(f);
    f_rows = (lam == 0) ? f_row : ad::vcat(f_rows, f_row);
  }
  return {ad::transpose(f_rows), logp, logq};
}

Node likelihood_logpdf(const TapeModel& tm, Node f, const Mat& y) {
  Tape& t = *tm.tape;
  if (tm.spec->likelihood == Likelihood::gaussian) {
    require(y.rows() == f.rows() && y.cols() == f.cols(),
            "likelihood_logpdf: target shape mismatch");
    const double n = static_cast<double>(y.size());
    Node noise = tm.pos("out.noise_raw");
    Node r = ad::sub(t.leaf(y), f);
    Node quad = ad::div_scalar(ad::sum(ad::hadamard(r, r)), noise);
    Node out = ad::scale(quad, -0.5);
    out = ad::sub(out, ad::scale(ad::vlog(noise), 0.5 * n));
    return ad::add(out, t.scalar(-0.5 * n * kLog2Pi));
  }
  require(y.cols() == 1 && y.rows() == f.rows(),
          "likelihood_logpdf: class labels must be one column");
  std::vector<int> labels(y.rows());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double c = y(i, 0);
    if (c != std::floor(c) || c < 0 || c >= f.cols())
      throw DomainError("likelihood_logpdf: label out of range at row " +
                        std::to_string(i));
    labels[i] = static_cast<int>(c);
  }
  return ad::sum(ad::select_cols_per_row(ad::log_softmax_rows(f), labels));
}

}  // namespace dkp::model
