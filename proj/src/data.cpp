#include "dkp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace dkp::data {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, delim)) cells.push_back(cell);
  if (!line.empty() && line.back() == delim) cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Dataset load_csv(const std::string& path, int target_col, char delimiter,
                 bool has_header) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path);

  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  std::size_t arity = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line, delimiter);
    if (line_no == 1 && has_header) {
      for (auto& c : cells) names.push_back(trim(c));
      arity = cells.size();
      continue;
    }
    if (arity == 0) arity = cells.size();
    if (cells.size() != arity)
      throw IoError("load_csv: " + path + ": line " + std::to_string(line_no) +
                    " has " + std::to_string(cells.size()) + " cells, expected " +
                    std::to_string(arity));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      const std::string v = trim(c);
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size() || v.empty() || !std::isfinite(x))
        throw IoError("load_csv: " + path + ": line " + std::to_string(line_no) +
                      ": non-numeric cell '" + v + "'");
      row.push_back(x);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("load_csv: " + path + ": no data rows");

  const int cols = static_cast<int>(arity);
  if (target_col < 0) target_col += cols;
  if (target_col < 0 || target_col >= cols)
    throw IoError("load_csv: " + path + ": target column out of range");
  if (names.empty())
    for (int j = 0; j < cols; ++j) names.push_back("col" + std::to_string(j));

  Dataset d;
  const int p = static_cast<int>(rows.size());
  d.features.resize(p, cols - 1);
  d.targets.resize(p, 1);
  for (int i = 0; i < p; ++i) {
    int k = 0;
    for (int j = 0; j < cols; ++j) {
      if (j == target_col)
        d.targets(i, 0) = rows[i][j];
      else
        d.features(i, k++) = rows[i][j];
    }
  }
  for (int j = 0; j < cols; ++j) {
    if (j == target_col)
      d.target_name = names[j];
    else
      d.feature_names.push_back(names[j]);
  }
  return d;
}

Split make_split(const Dataset& d, const SplitSpec& spec, bool classification) {
  const int p = static_cast<int>(d.features.rows());
  if (spec.index < 0 || spec.index >= spec.count)
    throw ConfigError("make_split: split index must be in [0, count)");
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw ConfigError("make_split: test fraction must be in (0, 1)");
  int n_test = static_cast<int>(std::lround(p * spec.test_fraction));
  n_test = std::max(1, std::min(n_test, p - 1));
  if (p < 2) throw ConfigError("make_split: need at least two rows");

  std::vector<int> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ULL +
                      static_cast<std::uint64_t>(spec.index) + 1);
  std::shuffle(idx.begin(), idx.end(), rng);

  Split s;
  s.classification = classification;
  s.test_idx.assign(idx.begin(), idx.begin() + n_test);
  s.train_idx.assign(idx.begin() + n_test, idx.end());
  const int n_train = static_cast<int>(s.train_idx.size());
  const int n0 = static_cast<int>(d.features.cols());

  Mat xtr(n_train, n0), ytr(n_train, 1), xte(n_test, n0), yte(n_test, 1);
  for (int i = 0; i < n_train; ++i) {
    xtr.row(i) = d.features.row(s.train_idx[i]);
    ytr(i, 0) = d.targets(s.train_idx[i], 0);
  }
  for (int i = 0; i < n_test; ++i) {
    xte.row(i) = d.features.row(s.test_idx[i]);
    yte(i, 0) = d.targets(s.test_idx[i], 0);
  }

  s.feature_mean = xtr.colwise().mean();
  s.feature_std.resize(n0);
  for (int j = 0; j < n0; ++j) {
    const double var =
        (xtr.col(j).array() - s.feature_mean(j)).square().sum() / n_train;
    s.feature_std(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  for (int j = 0; j < n0; ++j) {
    xtr.col(j) = (xtr.col(j).array() - s.feature_mean(j)) / s.feature_std(j);
    xte.col(j) = (xte.col(j).array() - s.feature_mean(j)) / s.feature_std(j);
  }
  if (!classification) {
    s.target_mean = ytr.mean();
    const double var = (ytr.array() - s.target_mean).square().sum() / n_train;
    s.target_std = var > 1e-24 ? std::sqrt(var) : 1.0;
    ytr = (ytr.array() - s.target_mean) / s.target_std;
    yte = (yte.array() - s.target_mean) / s.target_std;
  }
  s.x_train = std::move(xtr);
  s.y_train = std::move(ytr);
  s.x_test = std::move(xte);
  s.y_test = std::move(yte);
  return s;
}

double destandardize_loglik(double standardized_ll, double target_std) {
  return standardized_ll - std::log(target_std);
}

std::string split_manifest(const Split& s, const SplitSpec& spec) {
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["index"] = spec.index;
  j["count"] = spec.count;
  j["test_fraction"] = spec.test_fraction;
  j["classification"] = s.classification;
  j["train_idx"] = s.train_idx;
  j["test_idx"] = s.test_idx;
  j["target_mean"] = s.target_mean;
  j["target_std"] = s.target_std;
  std::vector<double> fm(s.feature_mean.data(), s.feature_mean.data() + s.feature_mean.size());
  std::vector<double> fs(s.feature_std.data(), s.feature_std.data() + s.feature_std.size());
  j["feature_mean"] = fm;
  j["feature_std"] = fs;
  return j.dump(2);
}

}  // namespace dkp::data
