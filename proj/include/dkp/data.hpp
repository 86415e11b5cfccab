#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dkp/matrix.hpp"

// Dataset ingestion and split management: delimiter-configurable CSV loading,
// seeded train/test splits, and standardization fitted on the training rows.
namespace dkp::data {

struct Dataset {
  Mat features;  // P x N0
  Mat targets;   // P x 1 (real values or class indices)
  std::vector<std::string> feature_names;
  std::string target_name;
};

// Loads a numeric table and separates the target column (negative counts from
// the end, -1 = last). Throws IoError naming the path if the file is missing
// or a row is ragged/non-numeric (with its 1-based line number).
Dataset load_csv(const std::string& path, int target_col, char delimiter = ',',
                 bool has_header = false);

struct SplitSpec {
  int index = 0;
  int count = 20;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct Split {
  Mat x_train, y_train;  // standardized
  Mat x_test, y_test;
  std::vector<int> train_idx, test_idx;
  Vec feature_mean, feature_std;
  double target_mean = 0.0;
  double target_std = 1.0;  // 1 for classification (targets untouched)
  bool classification = false;
};

// Deterministic permutation from seed and split index; test_fraction of the
// rows (at least one, at most all but one) become the test set.
// Standardization statistics come from the training rows only.
Split make_split(const Dataset& d, const SplitSpec& spec,
                 bool classification = false);

// Change of variables for a standardized regression target:
// log p(y) = log p(y_std) - log(target std).
double destandardize_loglik(double standardized_ll, double target_std);

// Structured text (JSON) recording the split for exact reproduction.
std::string split_manifest(const Split& s, const SplitSpec& spec);

}  // namespace dkp::data
