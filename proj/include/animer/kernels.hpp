#pragma once

#include <cstddef>

namespace animer::kernels {

/// Worker-thread cap: min(omp_max_threads, ANIMER_THREADS if set).
int thread_count();

// C[m x n] = A[m x k] * B[k x n], row-major. C must not alias A or B.
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);

// C[m x n] = A[m x k] * B[n x k]^T
void matmul_bt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_bt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// C[m x n] = A[k x m]^T * B[k x n]
void matmul_at_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_at(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// out[i] = a[i] op b[i]
void add_serial(const double* a, const double* b, double* out, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void mul_serial(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);

// Row-wise max-subtracted softmax over an r x c matrix.
void row_softmax_serial(const double* in, double* out, std::size_t r, std::size_t c);
void row_softmax(const double* in, double* out, std::size_t r, std::size_t c);

}  // namespace animer::kernels
