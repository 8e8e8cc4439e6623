#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace dgl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// One point per row; rows are contiguous.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

// splitmix64 finalizer over (base, index); used to derive independent
// substreams (per worker, per sweep row) from a single run seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(derive_seed(seed, stream));
}

}  // namespace dgl
