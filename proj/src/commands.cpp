#include "dkp/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "dkp/data.hpp"
#include "dkp/distributions.hpp"
#include "dkp/training.hpp"
#include "json.hpp"

namespace dkp::cmd {

namespace {

using nlohmann::ordered_json;

// ---- config plumbing -------------------------------------------------------

const std::set<std::string> kCommonKeys = {"seed", "out_dir", "threads"};
const std::set<std::string> kModelKeys = {
    "layers",    "kernel",     "bandwidth",  "kernel_doubled", "inducing",
    "delta_init", "likelihood", "output_dim", "nngp_limit",     "mode"};
const std::set<std::string> kDataKeys = {"dataset",     "target_col", "delimiter",
                                         "header",      "split_index", "split_count",
                                         "test_fraction"};
const std::set<std::string> kTrainKeys = {
    "steps", "batch",          "samples_train", "samples_eval", "lr",
    "lr_late", "lr_switch_step", "clip",          "checkpoint_every"};

std::set<std::string> allowed_keys(const std::string& command) {
  std::set<std::string> keys = kCommonKeys;
  auto merge = [&](const std::set<std::string>& more) {
    keys.insert(more.begin(), more.end());
  };
  if (command == "train") {
    merge(kModelKeys);
    merge(kDataKeys);
    merge(kTrainKeys);
  } else if (command == "evaluate") {
    merge(kDataKeys);
    keys.insert({"checkpoint", "samples_eval", "mode"});
  } else if (command == "sample-prior") {
    keys.insert({"prior_family", "grid_points", "layers", "kernel", "bandwidth",
                 "kernel_doubled", "delta_init", "function_samples", "nngp_limit"});
  } else if (command == "eigen-hist") {
    keys.insert({"dist", "size", "draws", "hist_n", "hist_dof", "hist_alpha"});
  } else if (command == "complexity-probe") {
    keys.insert({"probe_pi", "probe_pt", "probe_repeats"});
  } else {
    throw ConfigError("unknown command: " + command +
                      " (valid: train, evaluate, sample-prior, eigen-hist, "
                      "complexity-probe)");
  }
  return keys;
}

class Config {
 public:
  Config(const RunConfig& rc) : keys_(rc.keys) {}

  bool has(const std::string& key) const { return keys_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& dflt) const {
    auto it = keys_.find(key);
    return it == keys_.end() ? dflt : it->second;
  }
  std::string require_str(const std::string& key) const {
    auto it = keys_.find(key);
    if (it == keys_.end()) throw ConfigError("missing required key: " + key);
    return it->second;
  }
  long integer(const std::string& key, long dflt) const {
    auto it = keys_.find(key);
    if (it == keys_.end()) return dflt;
    try {
      std::size_t used = 0;
      long v = std::stol(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected integer, got '" + it->second +
                        "'");
    }
  }
  double real(const std::string& key, double dflt) const {
    auto it = keys_.find(key);
    if (it == keys_.end()) return dflt;
    try {
      std::size_t used = 0;
      double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected number, got '" + it->second +
                        "'");
    }
  }
  bool boolean(const std::string& key, bool dflt) const {
    auto it = keys_.find(key);
    if (it == keys_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key '" + key + "': expected boolean, got '" + it->second +
                      "'");
  }
  std::vector<int> int_list(const std::string& key,
                            const std::vector<int>& dflt) const {
    auto it = keys_.find(key);
    if (it == keys_.end()) return dflt;
    std::vector<int> out;
    std::stringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        out.push_back(std::stoi(cell));
      } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected comma-separated integers");
      }
    }
    if (out.empty())
      throw ConfigError("key '" + key + "': expected comma-separated integers");
    return out;
  }

 private:
  const KeyValues& keys_;
};

std::string header_line(const RunConfig& rc) {
  return "# command=" + rc.command + " config_hash=" + config_hash(rc.keys) +
         " seed=" + Config(rc).str("seed", "0") + " version=" + kVersion;
}

std::string out_dir_of(const Config& cfg, bool required) {
  std::string d = cfg.str("out_dir", "");
  if (d.empty()) {
    if (required) throw ConfigError("missing required key: out_dir");
    return d;
  }
  std::error_code ec;
  std::filesystem::create_directories(d, ec);
  if (ec) throw IoError("cannot create output directory " + d);
  return d;
}

void write_text(const std::string& path, const std::string& header,
                const std::string& body) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << header << "\n" << body;
  if (!out) throw IoError("error writing " + path);
}

std::string matrix_text(const Mat& m) {
  std::ostringstream ss;
  ss.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      ss << m(i, j) << (j + 1 < m.cols() ? " " : "");
    ss << "\n";
  }
  return ss.str();
}

// Strips '#'-prefixed header lines, leaving the payload.
std::string strip_header(const std::string& text) {
  std::size_t pos = 0;
  while (pos < text.size() && text[pos] == '#') {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) return "";
    pos = nl + 1;
  }
  return text.substr(pos);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- shared dataset / model assembly ---------------------------------------

struct LoadedSplit {
  data::Split split;
  data::SplitSpec spec;
  bool classification = false;
};

LoadedSplit load_split(const Config& cfg) {
  const std::string path = cfg.require_str("dataset");
  const int target_col = static_cast<int>(cfg.integer("target_col", -1));
  const std::string delim = cfg.str("delimiter", ",");
  if (delim.size() != 1) throw ConfigError("key 'delimiter': expected one character");
  auto ds = data::load_csv(path, target_col, delim[0], cfg.boolean("header", false));

  LoadedSplit out;
  out.classification = cfg.str("likelihood", "gaussian") == "categorical";
  out.spec.seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));
  out.spec.index = static_cast<int>(cfg.integer("split_index", 0));
  out.spec.count = static_cast<int>(cfg.integer("split_count", 20));
  out.spec.test_fraction = cfg.real("test_fraction", 0.1);
  out.split = data::make_split(ds, out.spec, out.classification);
  return out;
}

model::ModelSpec model_spec_from(const Config& cfg, const LoadedSplit& ls) {
  model::ModelSpec spec;
  spec.layers = static_cast<int>(cfg.integer("layers", 3));
  spec.inducing = static_cast<int>(cfg.integer("inducing", 100));
  spec.input_dim = static_cast<int>(ls.split.x_train.cols());
  spec.kernel.family = kern::family_from_string(cfg.str("kernel", "arccos_relu"));
  spec.kernel.bandwidth = cfg.real("bandwidth", 1.0);
  spec.kernel.doubled = cfg.boolean("kernel_doubled", false);
  spec.likelihood = model::likelihood_from_string(cfg.str("likelihood", "gaussian"));
  spec.delta_init = cfg.real("delta_init", -1.0);
  if (cfg.boolean("nngp_limit", false)) spec.nngp.assign(spec.layers, true);
  if (spec.likelihood == model::Likelihood::categorical) {
    int classes = static_cast<int>(cfg.integer("output_dim", 0));
    if (classes <= 0)
      classes = static_cast<int>(ls.split.y_train.maxCoeff()) + 1;
    spec.output_dim = classes;
  } else {
    spec.output_dim = static_cast<int>(ls.split.y_train.cols());
  }
  spec.validate();
  return spec;
}

infer::CondMode mode_from(const Config& cfg) {
  const std::string m = cfg.str("mode", "per_point");
  if (m == "per_point") return infer::CondMode::per_point;
  if (m == "joint") return infer::CondMode::joint;
  throw ConfigError("key 'mode': expected per_point or joint, got '" + m + "'");
}

// Final summary shared by train and evaluate: test predictive log-likelihood
// (de-standardized for regression), accuracy for classification, and the
// training-set bound.
ordered_json evaluate_model(const model::Model& m, const LoadedSplit& ls,
                            const Config& cfg) {
  const int n_eval = static_cast<int>(cfg.integer("samples_eval", 100));
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));
  const int threads = static_cast<int>(cfg.integer("threads", 0));
  auto pred = infer::predict(m, ls.split.x_test, ls.split.y_test, n_eval,
                             infer::mix_seed(seed, 0xE7A1u), threads);
  auto elbo = infer::elbo_batch(m, ls.split.x_train, ls.split.y_train, n_eval, 1.0,
                                infer::mix_seed(seed, 0xE1B0u), mode_from(cfg),
                                threads);
  ordered_json j;
  j["test_loglik_standardized"] = pred.mean_loglik;
  j["test_loglik"] =
      ls.classification
          ? pred.mean_loglik
          : data::destandardize_loglik(pred.mean_loglik, ls.split.target_std);
  if (ls.classification) j["test_accuracy"] = pred.accuracy;
  j["train_elbo"] = elbo.total;
  j["train_expected_loglik"] = elbo.expected_loglik;
  j["n_samples_eval"] = n_eval;
  j["n_test"] = static_cast<int>(ls.split.test_idx.size());
  j["n_train"] = static_cast<int>(ls.split.train_idx.size());
  return j;
}

// ---- commands --------------------------------------------------------------

std::string cmd_train(const RunConfig& rc) {
  Config cfg(rc);
  const std::string out_dir = out_dir_of(cfg, true);
  const std::string header = header_line(rc);
  auto ls = load_split(cfg);
  auto spec = model_spec_from(cfg, ls);
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));

  write_text(out_dir + "/split.json", header,
             data::split_manifest(ls.split, ls.spec) + "\n");

  const double target_var =
      ls.classification ? 1.0 : ls.split.y_train.array().square().mean();
  model::Model m(spec, seed, ls.split.x_train, target_var);

  train::TrainOptions opt;
  opt.steps = static_cast<int>(cfg.integer("steps", 8000));
  opt.schedule.lr_initial = cfg.real("lr", 1e-2);
  opt.schedule.lr_late = cfg.real("lr_late", 1e-3);
  opt.schedule.switch_step =
      static_cast<int>(cfg.integer("lr_switch_step", opt.steps / 2));
  opt.batch = static_cast<int>(cfg.integer("batch", 0));
  opt.n_samples = static_cast<int>(cfg.integer("samples_train", 0));
  opt.clip = cfg.real("clip", 100.0);
  opt.checkpoint_every = static_cast<int>(cfg.integer("checkpoint_every", 1000));
  opt.mode = mode_from(cfg);
  opt.seed = seed;
  opt.threads = static_cast<int>(cfg.integer("threads", 0));
  opt.out_dir = out_dir;
  opt.artifact_header = header;
  auto res = train::train(m, ls.split.x_train, ls.split.y_train, opt);

  ordered_json j = evaluate_model(m, ls, cfg);
  j["steps"] = res.steps_done;
  j["skipped_steps"] = res.skipped;
  j["final_train_batch_elbo"] = res.final_elbo;
  write_text(out_dir + "/summary.json", header, j.dump(2) + "\n");
  return j.dump(2);
}

std::string cmd_evaluate(const RunConfig& rc) {
  Config cfg(rc);
  const std::string out_dir = out_dir_of(cfg, false);
  auto ls = load_split(cfg);
  model::Model m =
      model::Model::from_json(strip_header(read_file(cfg.require_str("checkpoint"))));
  if (m.spec().input_dim != static_cast<int>(ls.split.x_train.cols()))
    throw ConfigError("checkpoint input dimension " +
                      std::to_string(m.spec().input_dim) +
                      " does not match dataset feature count " +
                      std::to_string(ls.split.x_train.cols()));
  ordered_json j = evaluate_model(m, ls, cfg);
  if (!out_dir.empty())
    write_text(out_dir + "/summary.json", header_line(rc), j.dump(2) + "\n");
  return j.dump(2);
}

std::string cmd_sample_prior(const RunConfig& rc) {
  Config cfg(rc);
  const std::string out_dir = out_dir_of(cfg, true);
  const std::string header = header_line(rc);
  const int p = static_cast<int>(cfg.integer("grid_points", 50));
  const int layers = static_cast<int>(cfg.integer("layers", 2));
  const int n_funcs = static_cast<int>(cfg.integer("function_samples", 3));
  const bool nngp = cfg.boolean("nngp_limit", false);
  const std::string family = cfg.str("prior_family", "invwishart");
  if (family != "invwishart" && family != "wishart")
    throw ConfigError("key 'prior_family': expected invwishart or wishart");
  if (p < 2 || layers < 1) throw ConfigError("grid_points >= 2 and layers >= 1");

  kern::KernelSpec kspec;
  kspec.family = kern::family_from_string(cfg.str("kernel", "squared_exponential"));
  kspec.bandwidth = cfg.real("bandwidth", 1.0);
  kspec.doubled = cfg.boolean("kernel_doubled", false);
  // delta_init doubles as the Wishart width N in the wishart rollout.
  const double delta = cfg.real("delta_init", family == "wishart" ? p : 5.0);

  std::mt19937_64 rng(static_cast<std::uint64_t>(cfg.integer("seed", 0)) ^
                      0xD1CE5EEDULL);
  Mat x(p, 1);
  for (int i = 0; i < p; ++i) x(i, 0) = -2.0 + 4.0 * i / (p - 1);
  Mat g = x * x.transpose();
  write_text(out_dir + "/X.txt", header, matrix_text(x));
  write_text(out_dir + "/G_0.txt", header, matrix_text(g));

  const double ridge = 1e-10;
  for (int l = 1; l <= layers; ++l) {
    Mat k = kern::apply_kernel_plain(kspec, g);
    write_text(out_dir + "/K_" + std::to_string(l) + ".txt", header, matrix_text(k));
    Mat k_j = k + ridge * k.diagonal().mean() * Mat::Identity(p, p);
    if (nngp) {
      g = k;
    } else if (family == "invwishart") {
      g = dist::plain_invwishart(rng, delta * k_j, delta + p + 1);
    } else {
      // Width-N Wishart by outer product of N Gaussian feature columns; this
      // also covers the rank-deficient N < P regime.
      const int n = std::max(1, static_cast<int>(std::lround(delta)));
      Eigen::LLT<Mat> llt(Mat(k_j / n));
      if (llt.info() != Eigen::Success)
        throw NumericError("sample-prior: kernel is not positive definite");
      std::normal_distribution<double> nd(0.0, 1.0);
      Mat z(p, n);
      for (int i = 0; i < p; ++i)
        for (int jj = 0; jj < n; ++jj) z(i, jj) = nd(rng);
      Mat fz = Mat(llt.matrixL()) * z;
      g = symmetrize(fz * fz.transpose());
    }
    write_text(out_dir + "/G_" + std::to_string(l) + ".txt", header, matrix_text(g));
  }

  // Function draws from the top-layer kernel.
  Mat k_top = kern::apply_kernel_plain(kspec, g);
  write_text(out_dir + "/K_top.txt", header, matrix_text(k_top));
  Eigen::LLT<Mat> llt(
      Mat(k_top + 1e-8 * k_top.diagonal().mean() * Mat::Identity(p, p)));
  if (llt.info() != Eigen::Success)
    throw NumericError("sample-prior: top-layer kernel is not positive definite");
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat z(p, n_funcs);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n_funcs; ++j) z(i, j) = nd(rng);
  Mat f = Mat(llt.matrixL()) * z;
  Mat table(p, 1 + n_funcs);
  table.col(0) = x;
  table.rightCols(n_funcs) = f;
  write_text(out_dir + "/functions.txt", header, matrix_text(table));

  ordered_json j;
  j["grid_points"] = p;
  j["layers"] = layers;
  j["prior_family"] = nngp ? "nngp" : family;
  j["files"] = 2 * layers + 4;
  return j.dump(2);
}

std::string cmd_eigen_hist(const RunConfig& rc) {
  Config cfg(rc);
  const std::string out_dir = out_dir_of(cfg, true);
  const std::string header = header_line(rc);
  const int p = static_cast<int>(cfg.integer("size", 200));
  const int draws = static_cast<int>(cfg.integer("draws", 50));
  const std::string dist_name = cfg.str("dist", "wishart");
  if (p < 1 || draws < 1) throw ConfigError("size and draws must be positive");

  std::mt19937_64 rng(static_cast<std::uint64_t>(cfg.integer("seed", 0)) ^
                      0xE16E5ULL);
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat eigs(draws, p);
  for (int d = 0; d < draws; ++d) {
    Mat sample;
    if (dist_name == "wishart") {
      const double n = cfg.real("hist_n", p);
      sample = dist::plain_wishart(rng, Mat(Mat::Identity(p, p) / n), n);
    } else if (dist_name == "invwishart") {
      const double nu = cfg.real("hist_dof", 2.0 * p + 1.0);
      sample = dist::plain_invwishart(
          rng, Mat((nu - p - 1.0) * Mat::Identity(p, p)), nu);
    } else if (dist_name == "resw") {
      const int n = static_cast<int>(cfg.integer("hist_n", p));
      const double alpha = cfg.real("hist_alpha", 1.0);
      Mat xi(p, n);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < n; ++j) xi(i, j) = nd(rng);
      Mat w = (std::sqrt(1.0 / n) * xi);
      for (int i = 0; i < p && i < n; ++i) w(i, i) += alpha;
      w /= std::sqrt(1.0 + alpha * alpha);
      sample = w * w.transpose();
    } else {
      throw ConfigError("key 'dist': expected wishart, invwishart, or resw");
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(sample, Eigen::EigenvaluesOnly);
    eigs.row(d) = es.eigenvalues().transpose();
  }
  write_text(out_dir + "/eigenvalues.txt", header, matrix_text(eigs));

  ordered_json j;
  j["dist"] = dist_name;
  j["size"] = p;
  j["draws"] = draws;
  j["min_eigenvalue"] = eigs.minCoeff();
  j["max_eigenvalue"] = eigs.maxCoeff();
  j["fraction_below_0.01"] =
      static_cast<double>((eigs.array() < 0.01).count()) / (eigs.size());
  return j.dump(2);
}

std::string cmd_complexity_probe(const RunConfig& rc) {
  Config cfg(rc);
  const std::string out_dir = out_dir_of(cfg, false);
  auto pi_grid = cfg.int_list("probe_pi", {25, 50, 100});
  auto pt_grid = cfg.int_list("probe_pt", {100, 200, 400});
  const int repeats = static_cast<int>(cfg.integer("probe_repeats", 3));
  auto res = infer::complexity_probe(pi_grid, pt_grid,
                                     static_cast<std::uint64_t>(cfg.integer("seed", 0)),
                                     repeats);
  ordered_json j;
  j["exponent_pt"] = res.exponent_pt;
  j["exponent_pi"] = res.exponent_pi;
  ordered_json rows = ordered_json::array();
  std::ostringstream csv;
  csv.precision(10);
  csv << "p_i,p_t,seconds\n";
  for (const auto& r : res.rows) {
    rows.push_back({{"p_i", r.p_i}, {"p_t", r.p_t}, {"seconds", r.seconds}});
    csv << r.p_i << "," << r.p_t << "," << r.seconds << "\n";
  }
  j["rows"] = rows;
  if (!out_dir.empty()) {
    write_text(out_dir + "/probe.csv", header_line(rc), csv.str());
    write_text(out_dir + "/probe.json", header_line(rc), j.dump(2) + "\n");
  }
  return j.dump(2);
}

}  // namespace

KeyValues load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  if (!j.is_object())
    throw ConfigError("config file " + path + ": expected a flat JSON object");
  KeyValues keys;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    if (v.is_string())
      keys[it.key()] = v.get<std::string>();
    else if (v.is_boolean())
      keys[it.key()] = v.get<bool>() ? "true" : "false";
    else if (v.is_number_integer())
      keys[it.key()] = std::to_string(v.get<long long>());
    else if (v.is_number())
      keys[it.key()] = ordered_json(v).dump();
    else
      throw ConfigError("config file " + path + ": key '" + it.key() +
                        "' must be a scalar");
  }
  return keys;
}

std::string config_hash(const KeyValues& keys) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  };
  for (const auto& [k, v] : keys) {
    if (k == "out_dir") continue;  // run identity is independent of where
    mix(k);                        // artifacts land
    mix(v);
  }
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

void RunConfig::validate() const {
  const auto allowed = allowed_keys(command);
  for (const auto& [k, v] : keys)
    if (!allowed.count(k))
      throw ConfigError("unknown config key for " + command + ": '" + k + "'");
}

std::string run(const RunConfig& config) {
  config.validate();
  if (config.command == "train") return cmd_train(config);
  if (config.command == "evaluate") return cmd_evaluate(config);
  if (config.command == "sample-prior") return cmd_sample_prior(config);
  if (config.command == "eigen-hist") return cmd_eigen_hist(config);
  return cmd_complexity_probe(config);
}

}  // namespace dkp::cmd
