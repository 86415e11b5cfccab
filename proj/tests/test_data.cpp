#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dkp/data.hpp"
#include "doctest.h"

using namespace dkp;

namespace {

std::string write_temp(const char* name, const std::string& text) {
  auto p = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(p);
  out << text;
  return p;
}

}  // namespace

TEST_CASE("load_csv: known values round-trip exactly") {
  auto p = write_temp("dkp-data-basic.csv", "1.5,2,10\n-3,0.25,20\n0,1e3,30\n");
  auto d = data::load_csv(p, 2, ',', false);
  REQUIRE(d.features.rows() == 3);
  REQUIRE(d.features.cols() == 2);
  CHECK(d.features(0, 0) == 1.5);
  CHECK(d.features(1, 1) == 0.25);
  CHECK(d.features(2, 1) == 1000.0);
  CHECK(d.targets(0, 0) == 10.0);
  CHECK(d.targets(2, 0) == 30.0);
  CHECK(d.feature_names[0] == "col0");

  // Negative target column counts from the end.
  auto d2 = data::load_csv(p, -1, ',', false);
  CHECK(d2.targets(1, 0) == 20.0);
  // Target in the middle keeps surrounding features in order.
  auto d3 = data::load_csv(p, 1, ',', false);
  CHECK(d3.targets(0, 0) == 2.0);
  CHECK(d3.features(0, 0) == 1.5);
  CHECK(d3.features(0, 1) == 10.0);
}

TEST_CASE("load_csv: header flag and named columns") {
  auto p = write_temp("dkp-data-header.csv", "a,b,y\n1,2,3\n4,5,6\n");
  auto d = data::load_csv(p, 2, ',', true);
  REQUIRE(d.features.rows() == 2);
  CHECK(d.feature_names == std::vector<std::string>{"a", "b"});
  CHECK(d.target_name == "y");
  CHECK(d.targets(1, 0) == 6.0);
}

TEST_CASE("load_csv: semicolon file parses identically to its comma version") {
  auto pc = write_temp("dkp-data-c.csv", "1,2,3\n4,5,6\n7,8,9\n");
  auto ps = write_temp("dkp-data-s.csv", "1;2;3\n4;5;6\n7;8;9\n");
  auto dc = data::load_csv(pc, -1, ',', false);
  auto ds = data::load_csv(ps, -1, ';', false);
  CHECK(max_abs_diff(dc.features, ds.features) == 0.0);
  CHECK(max_abs_diff(dc.targets, ds.targets) == 0.0);
}

TEST_CASE("load_csv: errors name the path and line") {
  CHECK_THROWS_WITH_AS(data::load_csv("/nonexistent/file.csv", 0),
                       doctest::Contains("/nonexistent/file.csv"), IoError);
  auto ragged = write_temp("dkp-data-ragged.csv", "1,2,3\n4,5\n");
  CHECK_THROWS_WITH_AS(data::load_csv(ragged, 0), doctest::Contains("line 2"),
                       IoError);
  auto bad = write_temp("dkp-data-bad.csv", "1,2,3\n4,x,6\n");
  CHECK_THROWS_WITH_AS(data::load_csv(bad, 0), doctest::Contains("line 2"), IoError);
  auto empty = write_temp("dkp-data-empty.csv", "\n\n");
  CHECK_THROWS_AS(data::load_csv(empty, 0), IoError);
  auto ok = write_temp("dkp-data-range.csv", "1,2\n3,4\n");
  CHECK_THROWS_AS(data::load_csv(ok, 5), IoError);
}

TEST_CASE("make_split: deterministic, disjoint, exhaustive") {
  data::Dataset d;
  const int p = 57;
  d.features = Mat::Random(p, 3);
  d.targets = Mat::Random(p, 1);
  data::SplitSpec spec;
  spec.seed = 11;
  spec.index = 2;
  auto s1 = data::make_split(d, spec);
  auto s2 = data::make_split(d, spec);
  CHECK(s1.train_idx == s2.train_idx);
  CHECK(s1.test_idx == s2.test_idx);
  CHECK(static_cast<int>(s1.test_idx.size()) == 6);  // round(57 * 0.1)

  std::set<int> all(s1.train_idx.begin(), s1.train_idx.end());
  for (int i : s1.test_idx) CHECK(all.insert(i).second);
  CHECK(static_cast<int>(all.size()) == p);

  data::SplitSpec other = spec;
  other.index = 3;
  auto s3 = data::make_split(d, other);
  CHECK(s3.test_idx != s1.test_idx);

  data::SplitSpec bad = spec;
  bad.index = 25;
  CHECK_THROWS_AS(data::make_split(d, bad), ConfigError);
}

TEST_CASE("make_split: standardization fitted on the training rows") {
  data::Dataset d;
  const int p = 200;
  d.features = 3.0 * Mat::Random(p, 2);
  d.features.col(1).array() += 10.0;
  d.targets = 5.0 * Mat::Random(p, 1).array() - 2.0;
  data::SplitSpec spec;
  spec.seed = 4;
  auto s = data::make_split(d, spec);

  for (int j = 0; j < 2; ++j) {
    CHECK(std::fabs(s.x_train.col(j).mean()) < 1e-10);
    const double var = s.x_train.col(j).array().square().mean();
    CHECK(std::fabs(var - 1.0) < 1e-10);
  }
  CHECK(std::fabs(s.y_train.mean()) < 1e-10);
  CHECK(std::fabs(s.y_train.array().square().mean() - 1.0) < 1e-10);

  // The recorded statistics reconstruct the raw rows.
  const int i = s.test_idx[0];
  for (int j = 0; j < 2; ++j)
    CHECK(s.x_test(0, j) * s.feature_std(j) + s.feature_mean(j) ==
          doctest::Approx(d.features(i, j)).epsilon(1e-12));
  CHECK(s.y_test(0, 0) * s.target_std + s.target_mean ==
        doctest::Approx(d.targets(i, 0)).epsilon(1e-12));

  // Classification targets pass through untouched.
  data::Dataset dc = d;
  for (int i2 = 0; i2 < p; ++i2) dc.targets(i2, 0) = i2 % 3;
  auto sc = data::make_split(dc, spec, true);
  CHECK(sc.target_std == 1.0);
  for (int i2 = 0; i2 < static_cast<int>(sc.train_idx.size()); ++i2)
    CHECK(sc.y_train(i2, 0) == dc.targets(sc.train_idx[i2], 0));
}

TEST_CASE("destandardize_loglik: change of variables on a unit synthetic case") {
  // y raw has std 2; p_raw(y) = p_std((y - mu)/s) / s, so
  // log p_raw = log p_std - log s. Check against an explicit Gaussian.
  const double mu = 1.0, sd = 2.0, y = 3.0;
  const double z = (y - mu) / sd;
  const double ll_std = -0.5 * z * z - 0.5 * std::log(2.0 * M_PI);
  const double ll_raw =
      -0.5 * z * z - 0.5 * std::log(2.0 * M_PI * sd * sd);
  CHECK(data::destandardize_loglik(ll_std, sd) == doctest::Approx(ll_raw).epsilon(1e-14));
}

TEST_CASE("split manifest records everything needed to reproduce") {
  data::Dataset d;
  d.features = Mat::Random(20, 2);
  d.targets = Mat::Random(20, 1);
  data::SplitSpec spec;
  spec.seed = 8;
  spec.index = 1;
  auto s = data::make_split(d, spec);
  auto text = data::split_manifest(s, spec);
  CHECK(text.find("\"train_idx\"") != std::string::npos);
  CHECK(text.find("\"target_std\"") != std::string::npos);
  CHECK(text.find("\"index\": 1") != std::string::npos);
  CHECK(data::split_manifest(s, spec) == text);
}
