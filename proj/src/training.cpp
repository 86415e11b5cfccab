#include "dkp/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "json.hpp"

namespace dkp::train {

void AdamState::init(const model::ParamSet& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const auto& name : params.names()) {
    const Mat& p = params.at(name);
    m.push_back(Mat::Zero(p.rows(), p.cols()));
    v.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

double adam_step(model::Model& mod, AdamState& st, std::vector<Mat> grads, double lr,
                 double clip) {
  const auto& names = mod.params().names();
  require(grads.size() == names.size() && st.m.size() == names.size(),
          "adam_step: gradient/state misalignment");
  double sq = 0.0;
  for (const Mat& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double f = clip / norm;
    for (Mat& g : grads) g *= f;
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(st.beta1, st.t);
  const double bc2 = 1.0 - std::pow(st.beta2, st.t);
  for (std::size_t k = 0; k < names.size(); ++k) {
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * grads[k];
    st.v[k] = st.beta2 * st.v[k].array().matrix() +
              (1.0 - st.beta2) * grads[k].array().square().matrix();
    Mat mhat = st.m[k] / bc1;
    Mat vhat = st.v[k] / bc2;
    mod.params().at(names[k]) -=
        lr * (mhat.array() / (vhat.array().sqrt() + st.eps)).matrix();
  }
  return norm;
}

namespace {

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

TrainResult train(model::Model& mod, const Mat& x, const Mat& y,
                  const TrainOptions& opt) {
  const int n = static_cast<int>(x.rows());
  require(n >= 1 && y.rows() == n, "train: x and y must share rows");
  const int batch = opt.batch > 0 ? std::min(opt.batch, n) : (n < 1000 ? n : 256);
  const int n_samples = opt.n_samples > 0 ? opt.n_samples : (n < 2000 ? 10 : 1);
  const double scale = static_cast<double>(n) / batch;
  const auto& names = mod.params().names();

  AdamState st;
  st.init(mod.params());

  std::ofstream metrics;
  if (!opt.out_dir.empty()) {
    metrics.open(opt.out_dir + "/metrics.jsonl");
    if (!metrics) throw IoError("train: cannot write " + opt.out_dir + "/metrics.jsonl");
    if (!opt.artifact_header.empty()) metrics << opt.artifact_header << "\n";
  }
  auto checkpoint = [&](const std::string& tag) {
    if (opt.out_dir.empty()) return;
    const std::string path = opt.out_dir + "/checkpoint-" + tag + ".json";
    std::ofstream out(path);
    if (!out) throw IoError("train: cannot write " + path);
    if (!opt.artifact_header.empty()) out << opt.artifact_header << "\n";
    out << mod.to_json() << "\n";
  };

  std::mt19937_64 shuffle_rng(infer::mix_seed(opt.seed, 0x5Au, 0xFFu));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  int cursor = 0;

  TrainResult res;
  int consecutive_skips = 0;
  for (int step = 1; step <= opt.steps; ++step) {
    if (cursor + batch > n) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    Mat xb(batch, x.cols()), yb(batch, y.cols());
    for (int i = 0; i < batch; ++i) {
      xb.row(i) = x.row(order[cursor + i]);
      yb.row(i) = y.row(order[cursor + i]);
    }
    cursor += batch;

    std::vector<Mat> grads(names.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
      const Mat& p = mod.params().at(names[k]);
      grads[k] = Mat::Zero(p.rows(), p.cols());
    }
    std::vector<double> elbos(n_samples, 0.0), logliks(n_samples, 0.0);
    std::mutex grad_mu;
    bool numeric_failure = false;
    std::mutex fail_mu;
    parallel_samples(n_samples, opt.threads, [&](int s) {
      try {
        ad::Tape t(infer::mix_seed(opt.seed, static_cast<std::uint64_t>(step),
                                   static_cast<std::uint64_t>(s)));
        auto fp = infer::elbo_forward(t, mod, xb, yb, scale, opt.mode);
        t.backward(fp.elbo);
        elbos[s] = fp.elbo.scalar();
        logliks[s] = fp.loglik.scalar();
        std::lock_guard<std::mutex> lock(grad_mu);
        // adam_step descends, so accumulate the gradient of the negated bound.
        for (std::size_t k = 0; k < names.size(); ++k)
          grads[k] -= t.grad(fp.tm.leaves.at(names[k])) / n_samples;
      } catch (const NumericError&) {
        std::lock_guard<std::mutex> lock(fail_mu);
        numeric_failure = true;
      }
    });

    StepRecord rec;
    rec.step = step;
    rec.lr = opt.schedule.lr_at(step);
    rec.elbo = std::accumulate(elbos.begin(), elbos.end(), 0.0) / n_samples;
    rec.expected_loglik =
        std::accumulate(logliks.begin(), logliks.end(), 0.0) / n_samples;
    bool finite = !numeric_failure && std::isfinite(rec.elbo);
    for (const Mat& g : grads)
      if (finite && !all_finite(g)) finite = false;

    if (!finite) {
      rec.skipped = true;
      ++res.skipped;
      if (++consecutive_skips > opt.max_consecutive_skips)
        throw NumericError("train: aborted after " +
                           std::to_string(consecutive_skips) +
                           " consecutive non-finite steps (step " +
                           std::to_string(step) + ")");
    } else {
      consecutive_skips = 0;
      rec.grad_norm = adam_step(mod, st, std::move(grads), rec.lr, opt.clip);
      res.final_elbo = rec.elbo;
    }

    if (metrics.is_open()) {
      nlohmann::ordered_json j;
      j["step"] = rec.step;
      j["lr"] = rec.lr;
      j["elbo"] = rec.elbo;
      j["expected_loglik"] = rec.expected_loglik;
      j["grad_norm"] = rec.grad_norm;
      j["skipped"] = rec.skipped;
      metrics << j.dump() << "\n";
    }
    if (opt.checkpoint_every > 0 && step % opt.checkpoint_every == 0)
      checkpoint(std::to_string(step));
    if (opt.on_step) opt.on_step(rec);
    res.history.push_back(rec);
    ++res.steps_done;
  }
  checkpoint("final");
  if (metrics.is_open()) metrics.flush();
  return res;
}

}  // namespace dkp::train
