// Command-line front end. Talks to the library exclusively through the C API:
// every option becomes a flat configuration key on a session, then the chosen
// subcommand runs. Exit codes: 0 success, 2 configuration error, 3 numeric
// failure, 4 I/O error.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dkp/dkp.h"

namespace {

struct SessionDeleter {
  void operator()(dkp_session* s) const { dkp_session_free(s); }
};

struct PendingKey {
  std::string key;
  std::string value;
};

int fail(dkp_session* s, int code) {
  std::fprintf(stderr, "error: %s\n", dkp_session_error(s));
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("deep inverse Wishart process toolkit (version ") +
               dkp_version() + ")"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<PendingKey> pending;
  std::vector<std::string> extra;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file with flat keys");
    sub->add_option("--set", extra,
                    "extra key=value pairs (repeatable), e.g. --set mode=joint");
    auto key_opt = [&, sub](const std::string& flag, const std::string& key,
                            const std::string& help) {
      sub->add_option_function<std::string>(
          flag, [&pending, key](const std::string& v) { pending.push_back({key, v}); },
          help);
    };
    key_opt("--seed", "seed", "random seed");
    key_opt("--out-dir", "out_dir", "output directory for artifacts");
    key_opt("--threads", "threads", "worker threads (0 = hardware)");
    return key_opt;
  };

  auto add_model_data = [&](CLI::App* sub, auto key_opt) {
    key_opt("--dataset", "dataset", "CSV dataset path");
    key_opt("--target-col", "target_col", "target column index (-1 = last)");
    key_opt("--layers", "layers", "Gram layer count L");
    key_opt("--kernel", "kernel",
            "kernel family: linear, squared_exponential, arccos_relu");
    key_opt("--bandwidth", "bandwidth", "squared-exponential bandwidth");
    key_opt("--inducing", "inducing", "inducing point count P_i");
    key_opt("--delta-init", "delta_init", "initial delta (<= 0 = default)");
    sub->add_flag_function(
        "--nngp-limit",
        [&pending](std::int64_t) { pending.push_back({"nngp_limit", "true"}); },
        "deterministic infinite-width limit at every layer");
  };

  auto* tr = app.add_subcommand("train", "fit a model and write artifacts");
  {
    auto key_opt = add_common(tr);
    add_model_data(tr, key_opt);
    key_opt("--steps", "steps", "gradient steps");
    key_opt("--batch", "batch", "minibatch size (0 = auto)");
    key_opt("--samples-train", "samples_train", "MC samples per step (0 = auto)");
    key_opt("--samples-eval", "samples_eval", "MC samples for evaluation");
  }

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
  {
    auto key_opt = add_common(ev);
    key_opt("--checkpoint", "checkpoint", "checkpoint JSON path");
    key_opt("--dataset", "dataset", "CSV dataset path");
    key_opt("--target-col", "target_col", "target column index (-1 = last)");
    key_opt("--samples-eval", "samples_eval", "MC samples for evaluation");
  }

  auto* sp = app.add_subcommand("sample-prior", "emit prior rollout figure data");
  {
    auto key_opt = add_common(sp);
    key_opt("--layers", "layers", "rollout depth");
    key_opt("--kernel", "kernel", "kernel family");
    key_opt("--bandwidth", "bandwidth", "squared-exponential bandwidth");
    key_opt("--delta-init", "delta_init", "delta (or Wishart width N)");
    sp->add_flag_function(
        "--nngp-limit",
        [&pending](std::int64_t) { pending.push_back({"nngp_limit", "true"}); },
        "deterministic rollout G = K(G_prev)");
  }

  auto* eh = app.add_subcommand("eigen-hist", "emit eigenvalue histogram data");
  add_common(eh);

  auto* cp = app.add_subcommand("complexity-probe", "time scaling in P_i and P_t");
  add_common(cp);

  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<dkp_session, SessionDeleter> session(dkp_session_new());
  dkp_session* s = session.get();
  if (!config_path.empty()) {
    if (int rc = dkp_session_load_config(s, config_path.c_str())) return fail(s, rc);
  }
  for (const auto& kv : pending)
    if (int rc = dkp_session_set(s, kv.key.c_str(), kv.value.c_str()))
      return fail(s, rc);
  for (const auto& e : extra) {
    const auto eq = e.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", e.c_str());
      return 2;
    }
    if (int rc = dkp_session_set(s, e.substr(0, eq).c_str(), e.substr(eq + 1).c_str()))
      return fail(s, rc);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (int rc = dkp_session_run(s, command.c_str())) return fail(s, rc);
  std::printf("%s\n", dkp_session_output(s));
  return 0;
}
