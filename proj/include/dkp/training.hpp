#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dkp/inference.hpp"

// Stochastic optimization of the variational bound: Adam on the unconstrained
// parameter storage, a two-phase learning-rate schedule, minibatching with
// epoch reshuffles, multi-sample gradient averaging, global-norm clipping,
// and skip/abort handling for non-finite steps.
namespace dkp::train {

struct Schedule {
  double lr_initial = 1e-2;
  double lr_late = 1e-3;
  int switch_step = 4000;  // late rate applies strictly after this step

  double lr_at(int step) const {  // step is 1-based
    return step <= switch_step ? lr_initial : lr_late;
  }
};

// First/second moment accumulators aligned with the parameter order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int t = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;

  void init(const model::ParamSet& params);
};

// One Adam update in place; grads are aligned with params.names(). Applies
// global-norm clipping at `clip` (<= 0 disables). Returns the pre-clip norm.
double adam_step(model::Model& m, AdamState& st, std::vector<Mat> grads, double lr,
                 double clip);

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double elbo = 0.0;            // average over the step's samples
  double expected_loglik = 0.0; // unscaled
  double grad_norm = 0.0;       // pre-clip global norm
  bool skipped = false;
};

struct TrainOptions {
  int steps = 8000;
  Schedule schedule;
  int batch = 0;      // <= 0: full batch below 1000 points, else 256
  int n_samples = 0;  // <= 0: 10 below 2000 points, else 1
  infer::CondMode mode = infer::CondMode::per_point;
  std::uint64_t seed = 0;
  int threads = 0;
  double clip = 100.0;
  int max_consecutive_skips = 10;
  int checkpoint_every = 1000;  // <= 0 disables periodic checkpoints
  std::string out_dir;          // empty: no metrics/checkpoint files
  std::string artifact_header;  // optional first line for artifact files
  std::function<void(const StepRecord&)> on_step;  // optional observer
};

struct TrainResult {
  int steps_done = 0;
  int skipped = 0;
  double final_elbo = 0.0;  // last non-skipped step's averaged bound
  std::vector<StepRecord> history;
};

// Optimizes m in place on (x, y); y is P x N_out for regression, P x 1 class
// indices for classification. Throws NumericError after more than
// max_consecutive_skips consecutive non-finite steps, IoError if artifact
// files cannot be written.
TrainResult train(model::Model& m, const Mat& x, const Mat& y,
                  const TrainOptions& opt);

}  // namespace dkp::train
