#pragma once

#include <cstdint>

#include "dgl/types.hpp"

namespace dgl {

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  bool degenerate = false;  // some k-NN radius was zero and got floored
};

/// k-NN manifold precision/recall: precision is the fraction of eval points
/// inside the union of reference k-NN balls, recall swaps the roles. Radii are
/// floored at 1e-12.
PrecisionRecall knn_precision_recall(const Points& reference, const Points& eval, int k = 3);

// Distance from each point to its k-th nearest neighbour in the same set (self excluded).
std::vector<double> knn_radii(const Points& pts, int k);

/// 2 E|X - Y| - E|X - X'| - E|Y - Y'| with U-statistics for the within terms.
double energy_distance(const Points& x, const Points& y);

struct EnergyTest {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
};

/// Permutation test of equal distributions using the energy statistic;
/// p = (1 + #{permuted >= observed}) / (B + 1).
EnergyTest energy_permutation_test(const Points& x, const Points& y, std::size_t permutations, std::uint64_t seed);

}  // namespace dgl
