#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dkp/kernels.hpp"
#include "dkp/tape.hpp"

// Model definition: parameter containers (unconstrained storage, positivity
// via softplus), the input-layer Omega construction over combined
// inducing+batch rows, per-layer approximate-posterior samples with their
// prior/posterior log-densities, the deterministic infinite-width layer, the
// output Gaussian layer, and likelihoods. Layer count L counts Gram layers:
// layer 1 is the input (Omega) layer, layers 2..L are hidden; the kernel is
// applied once per hidden layer and once more at the output, so an L-layer
// model applies the kernel L times.
namespace dkp::model {

enum class Likelihood { gaussian, categorical };

Likelihood likelihood_from_string(const std::string& name);
std::string likelihood_to_string(Likelihood l);

struct ModelSpec {
  int layers = 3;    // L >= 1
  int inducing = 100;
  int input_dim = 0;   // N0, fixed by the dataset
  int output_dim = 1;  // N_{L+1}
  kern::KernelSpec kernel;
  Likelihood likelihood = Likelihood::gaussian;
  std::vector<bool> nngp;    // per Gram layer; true = deterministic limit
  double delta_init = -1.0;  // <= 0 selects the default (N0 input, P_i hidden)

  void validate() const;
};

// Ordered name -> matrix storage for the unconstrained parameters.
class ParamSet {
 public:
  void add(const std::string& name, Mat value);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const { return values_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Mat> values_;
};

class Model {
 public:
  // Initializes parameters; x_train supplies inducing-input rows and
  // target_var scales the initial noise variance (regression).
  Model(ModelSpec spec, std::uint64_t seed, const Mat& x_train,
        double target_var = 1.0);
  // Construction from deserialized state.
  Model(ModelSpec spec, ParamSet params);

  const ModelSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  std::string to_json() const;  // value-exact round trip
  static Model from_json(const std::string& text);

 private:
  ModelSpec spec_;
  ParamSet params_;
};

// One tape's view of the model: a leaf node per parameter (for gradient
// queries by name) plus convenience accessors for softplus-mapped values.
struct TapeModel {
  ad::Tape* tape = nullptr;
  const ModelSpec* spec = nullptr;
  std::unordered_map<std::string, ad::Node> leaves;

  ad::Node raw(const std::string& name) const;
  ad::Node pos(const std::string& name) const;  // softplus(raw)
};

TapeModel bind(ad::Tape& t, const Model& m);

// A sample with its prior and posterior log-density contributions.
struct SampleLogs {
  ad::Node sample;
  ad::Node logp;
  ad::Node logq;
};

// (x_batch - bias) * diag(scale), stacked under the inducing inputs.
ad::Node combined_inputs(const TapeModel& tm, const Mat& x_batch);

// G1 = X Omega X^T / N0 over the combined rows.
ad::Node input_gram(const TapeModel& tm, ad::Node x_tilde, ad::Node omega);

// Omega ~ Q = W^{-1}(delta1 I + V1 V1^T, delta1+gamma1+N0+1); log P under
// W^{-1}(delta1 I, delta1+N0+1). In the deterministic (nngp) limit layer 1
// returns Omega = I with zero log terms.
SampleLogs q_omega_sample_logpdf(const TapeModel& tm);

// Hidden inducing block: Q = W^{-1}(delta K + V V^T, delta+gamma+P_i+1),
// prior W^{-1}(delta K, delta+P_i+1). layer indexes 2..L.
SampleLogs q_hidden_sample_logpdf(const TapeModel& tm, int layer, ad::Node k_prev);

// Deterministic infinite-width layer: K(G_prev), no sampling, no ELBO term.
ad::Node nngp_layer(const kern::KernelSpec& spec, ad::Node k_prev);

// Output layer on the inducing block: per output column lambda,
// Sigma = (K^{-1} + Lambda)^{-1} by solve-based identities, sample
// f ~ N(Sigma Lambda v, Sigma); logq at the sample, logp = N(f; 0, K).
SampleLogs q_output_sample_logpdf(const TapeModel& tm, ad::Node k_top);

// Sum of per-point log-likelihoods. Gaussian uses the learned noise
// variance; categorical treats f rows as logits and y as class indices.
ad::Node likelihood_logpdf(const TapeModel& tm, ad::Node f, const Mat& y);

// Softplus helpers mirrored on plain doubles (for initialization).
double softplus_val(double x);
double softplus_inv(double y);

}  // namespace dkp::model
