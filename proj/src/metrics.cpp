#include "dgl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dgl/parallel.hpp"
#include "dgl/simd/kernels.hpp"

namespace dgl {
namespace {

constexpr double kMinRadius = 1e-12;
constexpr std::size_t kRowBlock = 64;

// Column-major copy so one coordinate of all points is contiguous.
using Columns = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// out[j] = |pts_j - q|^2
void squared_distances(const Columns& cols, const double* q, std::vector<double>& out) {
  const auto& k = simd::kernels();
  const auto n = static_cast<std::size_t>(cols.rows());
  out.assign(n, 0.0);
  for (Eigen::Index d = 0; d < cols.cols(); ++d) k.sq_dist_accumulate(cols.col(d).data(), q[d], out.data(), n);
}

double covered_fraction(const Points& balls, const std::vector<double>& radii, const Points& queries) {
  const Columns cols = balls;
  std::vector<double> r2(radii.size());
  for (std::size_t i = 0; i < radii.size(); ++i) r2[i] = radii[i] * radii[i];
  const auto nq = static_cast<std::size_t>(queries.rows());
  const std::size_t n_blocks = (nq + kRowBlock - 1) / kRowBlock;
  std::vector<std::size_t> hits(n_blocks, 0);
  parallel_for(n_blocks, [&](std::size_t b) {
    std::vector<double> dist;
    for (std::size_t i = b * kRowBlock; i < std::min(nq, (b + 1) * kRowBlock); ++i) {
      squared_distances(cols, queries.row(static_cast<Eigen::Index>(i)).data(), dist);
      for (std::size_t j = 0; j < dist.size(); ++j) {
        if (dist[j] <= r2[j]) {
          ++hits[b];
          break;
        }
      }
    }
  });
  return static_cast<double>(std::accumulate(hits.begin(), hits.end(), std::size_t{0})) / static_cast<double>(nq);
}

}  // namespace

std::vector<double> knn_radii(const Points& pts, int k) {
  const auto n = static_cast<std::size_t>(pts.rows());
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  if (n <= static_cast<std::size_t>(k)) throw std::invalid_argument("knn: need more than k points");
  const Columns cols = pts;
  std::vector<double> radii(n, 0.0);
  const std::size_t n_blocks = (n + kRowBlock - 1) / kRowBlock;
  parallel_for(n_blocks, [&](std::size_t b) {
    std::vector<double> dist;
    for (std::size_t i = b * kRowBlock; i < std::min(n, (b + 1) * kRowBlock); ++i) {
      squared_distances(cols, pts.row(static_cast<Eigen::Index>(i)).data(), dist);
      dist[i] = std::numeric_limits<double>::infinity();
      std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
      radii[i] = std::sqrt(dist[static_cast<std::size_t>(k - 1)]);
    }
  });
  return radii;
}

PrecisionRecall knn_precision_recall(const Points& reference, const Points& eval, int k) {
  if (reference.cols() != eval.cols()) throw std::invalid_argument("knn_precision_recall: dimension mismatch");
  if (reference.rows() <= k || eval.rows() <= k)
    throw std::invalid_argument("knn_precision_recall: both sets need more than k points");
  PrecisionRecall pr;
  auto floored = [&](std::vector<double> r) {
    for (double& v : r) {
      if (v < kMinRadius) {
        v = kMinRadius;
        pr.degenerate = true;
      }
    }
    return r;
  };
  const std::vector<double> ref_r = floored(knn_radii(reference, k));
  const std::vector<double> eval_r = floored(knn_radii(eval, k));
  pr.precision = covered_fraction(reference, ref_r, eval);
  pr.recall = covered_fraction(eval, eval_r, reference);
  return pr;
}

namespace {

// Sum of pairwise distances between rows of a and b (or i < j pairs when same).
double pair_distance_sum(const Points& a, const Points& b, bool same) {
  const Columns cols = b;
  const auto na = static_cast<std::size_t>(a.rows());
  const std::size_t n_blocks = (na + kRowBlock - 1) / kRowBlock;
  std::vector<double> partial(n_blocks, 0.0);
  parallel_for(n_blocks, [&](std::size_t blk) {
    std::vector<double> dist;
    for (std::size_t i = blk * kRowBlock; i < std::min(na, (blk + 1) * kRowBlock); ++i) {
      squared_distances(cols, a.row(static_cast<Eigen::Index>(i)).data(), dist);
      for (std::size_t j = same ? i + 1 : 0; j < dist.size(); ++j) partial[blk] += std::sqrt(dist[j]);
    }
  });
  return std::accumulate(partial.begin(), partial.end(), 0.0);
}

}  // namespace

double energy_distance(const Points& x, const Points& y) {
  if (x.cols() != y.cols()) throw std::invalid_argument("energy_distance: dimension mismatch");
  if (x.rows() < 2 || y.rows() < 2) throw std::invalid_argument("energy_distance: need at least 2 points per set");
  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  const double xy = pair_distance_sum(x, y, false) / (n * m);
  const double xx = pair_distance_sum(x, x, true) / (n * (n - 1) / 2.0);
  const double yy = pair_distance_sum(y, y, true) / (m * (m - 1) / 2.0);
  return 2.0 * xy - xx - yy;
}

EnergyTest energy_permutation_test(const Points& x, const Points& y, std::size_t permutations, std::uint64_t seed) {
  if (x.cols() != y.cols()) throw std::invalid_argument("energy test: dimension mismatch");
  if (x.rows() < 2 || y.rows() < 2) throw std::invalid_argument("energy test: need at least 2 points per set");
  if (permutations == 0) throw std::invalid_argument("energy test: need at least one permutation");
  const auto nx = static_cast<std::size_t>(x.rows());
  const auto ny = static_cast<std::size_t>(y.rows());
  const std::size_t n = nx + ny;
  Points pooled(static_cast<Eigen::Index>(n), x.cols());
  pooled.topRows(x.rows()) = x;
  pooled.bottomRows(y.rows()) = y;

  // Full pooled distance matrix; row i dotted with a 0/1 mask gives the distance mass to the masked set.
  const Columns cols = pooled;
  std::vector<double> dist(n * n);
  parallel_for((n + kRowBlock - 1) / kRowBlock, [&](std::size_t b) {
    std::vector<double> row;
    for (std::size_t i = b * kRowBlock; i < std::min(n, (b + 1) * kRowBlock); ++i) {
      squared_distances(cols, pooled.row(static_cast<Eigen::Index>(i)).data(), row);
      for (std::size_t j = 0; j < n; ++j) dist[i * n + j] = std::sqrt(row[j]);
    }
  });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) total += dist[i * n + j];

  const auto& k = simd::kernels();
  const double dnx = static_cast<double>(nx), dny = static_cast<double>(ny);
  auto statistic = [&](const std::vector<double>& mask) {
    double sxx2 = 0.0, sxy = 0.0;  // sxx2 counts each within-X pair twice
    for (std::size_t i = 0; i < n; ++i) {
      const double r = k.dot(dist.data() + i * n, mask.data(), n);
      if (mask[i] != 0.0) sxx2 += r;
      else sxy += r;
    }
    const double sxx = 0.5 * sxx2;
    const double syy = total - sxx - sxy;
    return 2.0 * sxy / (dnx * dny) - sxx / (dnx * (dnx - 1) / 2.0) - syy / (dny * (dny - 1) / 2.0);
  };

  std::vector<double> mask(n, 0.0);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(nx), 1.0);
  EnergyTest out;
  out.statistic = statistic(mask);
  out.permutations = permutations;
  std::vector<double> perm_stats(permutations);
  parallel_for(permutations, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    std::vector<double> m(mask);
    std::shuffle(m.begin(), m.end(), rng);
    perm_stats[b] = statistic(m);
  });
  std::size_t exceed = 0;
  for (double s : perm_stats) exceed += s >= out.statistic ? 1 : 0;
  out.p_value = static_cast<double>(1 + exceed) / static_cast<double>(permutations + 1);
  return out;
}

}  // namespace dgl
