#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <random>
#include <vector>

#include "vflab/common.hpp"
#include "vflab/dataset.hpp"

namespace vflab::fixtures {

/// Four-level features where the label depends on a few columns, plus noise.
struct RandomInstance {
  data::BinMatrix x;
  Labels y;
};

inline RandomInstance random_instance(std::uint64_t seed, int rows, int cols, int classes = kNumClasses) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 3);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::bernoulli_distribution noise(0.15);
  RandomInstance inst{data::BinMatrix(rows, cols), Labels(static_cast<std::size_t>(rows))};
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) inst.x(i, j) = static_cast<std::uint8_t>(level(rng));
    int y = (inst.x(i, 0) + (cols > 1 ? inst.x(i, cols - 1) : 0)) % classes;
    if (noise(rng)) y = cls(rng);
    inst.y[static_cast<std::size_t>(i)] = y;
  }
  // Every class present so fitting is well posed.
  for (int k = 0; k < classes && k < rows; ++k) inst.y[static_cast<std::size_t>(k)] = k;
  return inst;
}

/// Splits columns into `parties` contiguous slices of random widths (each >= 1).
inline std::vector<data::BinMatrix> split_columns(const data::BinMatrix& x, int parties, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> cuts{0};
  std::vector<int> inner;
  for (int c = 1; c < x.cols(); ++c) inner.push_back(c);
  std::shuffle(inner.begin(), inner.end(), rng);
  inner.resize(static_cast<std::size_t>(parties - 1));
  std::sort(inner.begin(), inner.end());
  cuts.insert(cuts.end(), inner.begin(), inner.end());
  cuts.push_back(static_cast<int>(x.cols()));
  std::vector<data::BinMatrix> out;
  for (int p = 0; p < parties; ++p) out.push_back(x.middleCols(cuts[p], cuts[p + 1] - cuts[p]));
  return out;
}

inline Eigen::MatrixXd to_real(const data::BinMatrix& x) { return x.cast<double>(); }

}  // namespace vflab::fixtures
