// Exercises the shared-library C API exactly as an external client would.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dkp/dkp.h"
#include "doctest.h"

namespace {

std::string temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / tag;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string toy_csv(const std::string& dir) {
  std::ostringstream ss;
  for (int i = 0; i < 30; ++i) {
    const double x = -1.0 + 2.0 * i / 29;
    ss << x << "," << std::sin(3.0 * x) << "\n";
  }
  const std::string path = dir + "/toy.csv";
  std::ofstream(path) << ss.str();
  return path;
}

}  // namespace

TEST_CASE("version string is set") {
  CHECK(std::string(dkp_version()).find('.') != std::string::npos);
}

TEST_CASE("session runs a training command end to end") {
  auto dir = temp_dir("dkp-capi");
  auto csv = toy_csv(dir);
  dkp_session* s = dkp_session_new();
  REQUIRE(s != nullptr);
  CHECK(dkp_session_set(s, "dataset", csv.c_str()) == 0);
  CHECK(dkp_session_set(s, "target_col", "-1") == 0);
  CHECK(dkp_session_set(s, "layers", "1") == 0);
  CHECK(dkp_session_set(s, "kernel", "squared_exponential") == 0);
  CHECK(dkp_session_set(s, "inducing", "5") == 0);
  CHECK(dkp_session_set(s, "steps", "10") == 0);
  CHECK(dkp_session_set(s, "samples_train", "1") == 0);
  CHECK(dkp_session_set(s, "samples_eval", "5") == 0);
  CHECK(dkp_session_set(s, "out_dir", (dir + "/run").c_str()) == 0);
  CHECK(dkp_session_run(s, "train") == 0);
  CHECK(std::string(dkp_session_output(s)).find("test_loglik") != std::string::npos);
  CHECK(std::string(dkp_session_error(s)).empty());
  dkp_session_free(s);
}

TEST_CASE("exit codes: 2 config, 3 numeric, 4 io") {
  dkp_session* s = dkp_session_new();
  CHECK(dkp_session_set(s, "bogus", "1") == 0);
  CHECK(dkp_session_run(s, "eigen-hist") == 2);
  CHECK(std::string(dkp_session_error(s)).find("bogus") != std::string::npos);
  dkp_session_free(s);

  s = dkp_session_new();
  CHECK(dkp_session_run(s, "no-such-command") == 2);
  dkp_session_free(s);

  s = dkp_session_new();
  dkp_session_set(s, "dataset", "/no/such/file.csv");
  dkp_session_set(s, "out_dir", temp_dir("dkp-capi-io").c_str());
  CHECK(dkp_session_run(s, "train") == 4);
  dkp_session_free(s);

  // Degrees of freedom outside the inverse-Wishart domain: the sampler
  // itself rejects it, surfacing as a numeric failure.
  auto dir = temp_dir("dkp-capi-num");
  s = dkp_session_new();
  dkp_session_set(s, "dist", "invwishart");
  dkp_session_set(s, "size", "10");
  dkp_session_set(s, "hist_dof", "5");
  dkp_session_set(s, "draws", "1");
  dkp_session_set(s, "out_dir", dir.c_str());
  CHECK(dkp_session_run(s, "eigen-hist") == 3);
  CHECK(std::string(dkp_session_error(s)).find("positive definite") !=
        std::string::npos);
  dkp_session_free(s);
}

TEST_CASE("config file loads and explicit sets take precedence") {
  auto dir = temp_dir("dkp-capi-cfg");
  const std::string cfg = dir + "/c.json";
  std::ofstream(cfg) << R"({"size": 12, "draws": 2, "dist": "resw",
                            "hist_alpha": 1000000.0})";
  dkp_session* s = dkp_session_new();
  CHECK(dkp_session_set(s, "draws", "3") == 0);
  CHECK(dkp_session_load_config(s, cfg.c_str()) == 0);
  CHECK(dkp_session_set(s, "out_dir", dir.c_str()) == 0);
  CHECK(dkp_session_run(s, "eigen-hist") == 0);
  const std::string out = dkp_session_output(s);
  CHECK(out.find("\"draws\": 3") != std::string::npos);  // set() overrode file
  CHECK(out.find("\"size\": 12") != std::string::npos);
  CHECK(dkp_session_load_config(s, (dir + "/missing.json").c_str()) == 4);
  dkp_session_free(s);
}
