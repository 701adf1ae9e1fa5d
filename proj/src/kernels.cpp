#include "animer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace animer::kernels {

int thread_count() {
#ifdef _OPENMP
  static int cap = [] {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("ANIMER_THREADS")) {
      int req = std::atoi(env);
      if (req > 0) n = std::min(n, req);
    }
    return n;
  }();
  return cap;
#else
  return 1;
#endif
}

// Each parallel loop partitions rows of the output, so results are
// bit-identical to the serial kernels at any thread count.

void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a[i * k + l];
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (m * k * n > 16384)
#endif
  for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a[i * k + l];
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

void matmul_bt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      const double* ai = a + i * k;
      const double* bj = b + j * k;
      for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      c[i * n + j] = s;
    }
}

void matmul_bt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (m * k * n > 16384)
#endif
  for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      const double* ai = a + i * k;
      const double* bj = b + j * k;
      for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      c[i * n + j] = s;
    }
  }
}

void matmul_at_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[l * m + i];
      const double* bl = b + l * n;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
}

void matmul_at(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (m * k * n > 16384)
#endif
  for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a[l * m + i];
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

void add_serial(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void add(const double* a, const double* b, double* out, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (n > 65536)
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i) out[i] = a[i] + b[i];
}

void mul_serial(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (n > 65536)
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i) out[i] = a[i] * b[i];
}

static void softmax_row(const double* in, double* out, std::size_t c) {
  double mx = in[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
}

void row_softmax_serial(const double* in, double* out, std::size_t r, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) softmax_row(in + i * c, out + i * c, c);
}

void row_softmax(const double* in, double* out, std::size_t r, std::size_t c) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(thread_count()) schedule(static) if (r * c > 16384)
#endif
  for (long long i = 0; i < static_cast<long long>(r); ++i)
    softmax_row(in + i * c, out + i * c, c);
}

}  // namespace animer::kernels
