#pragma once
// Dense inner loops used by the MLP, the optimizer and the point-cloud metrics.
//
// Every kernel exists as a scalar reference and, on x86-64 builds, as an
// AVX2/FMA variant. The active table is chosen once at startup from the CPU
// feature bits and can be pinned with DGL_SIMD=scalar|avx2|auto. Variants agree
// to rounding (reduction order differs), not bitwise; a single process always
// uses one table, so runs stay reproducible.

#include <cstddef>
#include <string_view>

namespace dgl::simd {

struct AdamCoefficients {
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  std::string_view name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  // y = W x (+ bias if non-null); W is rows x cols, row-major.
  void (*gemv)(const double* w, const double* x, const double* bias, double* y, std::size_t rows,
               std::size_t cols);

  // y = W^T v; y has cols entries and is overwritten.
  void (*gemv_t)(const double* w, const double* v, double* y, std::size_t rows, std::size_t cols);

  // W += alpha * u v^T
  void (*ger)(double* w, double alpha, const double* u, const double* v, std::size_t rows,
              std::size_t cols);

  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);

  // out[i] += (column[i] - q)^2, one coordinate of a structure-of-arrays point set.
  void (*sq_dist_accumulate)(const double* column, double q, double* out, std::size_t n);

  // Bias-corrected Adam step over a flat parameter vector.
  void (*adam_update)(double* param, const double* grad, double* m, double* v, std::size_t n,
                      const AdamCoefficients& c);
};

enum class Backend { scalar, avx2 };

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

// Table used by the rest of the library.
const KernelTable& kernels();

// Pins the active table; throws std::invalid_argument if the backend is unavailable.
void select_backend(Backend backend);

Backend active_backend();

}  // namespace dgl::simd
