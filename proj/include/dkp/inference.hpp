#pragma once

#include <cstdint>
#include <vector>

#include "dkp/model.hpp"

// Doubly-stochastic variational inference: one forward ELBO pass per tape,
// decomposing every Gram matrix into inducing and train/test blocks. Inducing
// blocks are sampled from the approximate posterior and contribute
// log P - log Q terms; the train/test blocks are sampled from the conditional
// prior (those terms cancel in the bound). Test points propagate either
// jointly (full blocks, cubic in P_t) or independently per point (diagonal
// conditional variances, linear in P_t).
namespace dkp::infer {

enum class CondMode { joint, per_point };

struct PartitionedGram {
  ad::Node g_ii;  // P_i x P_i
  ad::Node g_it;  // P_i x P_t
  ad::Node g_tt;  // joint: P_t x P_t; per_point: P_t x 1 diagonal
  bool diagonal = false;
};

// Kernel blocks of a partitioned Gram matrix (diagonal test-block form).
struct PartKernel {
  ad::Node k_ii;
  ad::Node k_it;
  ad::Node k_tt_diag;  // P_t x 1
};

PartKernel apply_kernel_partitioned(const kern::KernelSpec& spec, ad::Node g_ii,
                                    ad::Node g_it, ad::Node g_tt_diag);

// Samples the train/test blocks from the conditional prior given the inducing
// block g_ii and the partitioned scale psi = delta * K(G_prev). In joint mode
// psi_tt is the full P_t x P_t block; in per_point mode it is the P_t x 1
// diagonal. All draws are reparameterized.
PartitionedGram conditional_gram_sample(ad::Tape& t, ad::Node psi_ii, ad::Node psi_it,
                                        ad::Node psi_tt, ad::Node g_ii, ad::Node delta,
                                        CondMode mode);

struct ElboReport {
  double total = 0.0;
  double expected_loglik = 0.0;       // unscaled
  std::vector<double> layer_terms;    // log P - log Q: omega, hidden 2..L, output
  double scale = 1.0;                 // dataset_size / batch_size
  int n_samples = 0;
};

// One Monte Carlo forward pass; the returned nodes live on the given tape.
struct ForwardPass {
  model::TapeModel tm;
  ad::Node elbo;
  ad::Node loglik;
  std::vector<ad::Node> layer_terms;
  // Output-layer predictive pieces for the batch points.
  ad::Node f_t_mean;  // P_t x N_out
  ad::Node f_t_var;   // P_t x 1 (per_point) or P_t x P_t (joint)
  ad::Node f_t;       // sampled P_t x N_out
};

ForwardPass elbo_forward(ad::Tape& t, const model::Model& m, const Mat& x_batch,
                         const Mat& y_batch, double scale,
                         CondMode mode = CondMode::per_point);

// Averages n_samples independent forward passes (parallel tapes seeded from
// seed), values only.
ElboReport elbo_batch(const model::Model& m, const Mat& x_batch, const Mat& y_batch,
                      int n_samples, double scale, std::uint64_t seed,
                      CondMode mode = CondMode::per_point, int threads = 0);

struct PredictiveSummary {
  std::vector<double> per_point_loglik;  // log-mean-exp over samples
  double mean_loglik = 0.0;
  double accuracy = -1.0;  // classification only
  int n_samples = 0;
};

PredictiveSummary predict(const model::Model& m, const Mat& x_test, const Mat& y_test,
                          int n_samples, std::uint64_t seed, int threads = 0);

struct ProbeRow {
  int p_i = 0;
  int p_t = 0;
  double seconds = 0.0;
};

struct ProbeResult {
  std::vector<ProbeRow> rows;
  double exponent_pt = 0.0;  // runtime vs P_t at fixed P_i
  double exponent_pi = 0.0;  // runtime vs P_i at fixed P_t
};

ProbeResult complexity_probe(const std::vector<int>& pi_grid,
                             const std::vector<int>& pt_grid, std::uint64_t seed,
                             int repeats = 3);

// Deterministic per-(step, sample) seed stream.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace dkp::infer
