#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "animer/kernels.hpp"
#include "animer/rng.hpp"

using namespace animer;

namespace {

using Fn = std::function<void()>;

double time_ms(const Fn& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
  std::printf("%-14s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   max|diff| %.3g\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
  std::printf("threads: %d\n\n", kernels::thread_count());
  Rng rng(1);

  const std::size_t m = 384, k = 384, n = 384;
  std::vector<double> a(m * k), b(k * n), bt(n * k), c1(m * n), c2(m * n);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  for (auto& v : bt) v = rng.normal();

  {
    const double ts = time_ms([&] { kernels::matmul_serial(a.data(), b.data(), c1.data(), m, k, n); }, 5);
    const double tp = time_ms([&] { kernels::matmul(a.data(), b.data(), c2.data(), m, k, n); }, 5);
    report("matmul", ts, tp, max_abs_diff(c1, c2));
  }
  {
    const double ts =
        time_ms([&] { kernels::matmul_bt_serial(a.data(), bt.data(), c1.data(), m, k, n); }, 5);
    const double tp = time_ms([&] { kernels::matmul_bt(a.data(), bt.data(), c2.data(), m, k, n); }, 5);
    report("matmul_bt", ts, tp, max_abs_diff(c1, c2));
  }
  {
    std::vector<double> at(k * m);
    for (auto& v : at) v = rng.normal();
    const double ts =
        time_ms([&] { kernels::matmul_at_serial(at.data(), b.data(), c1.data(), m, k, n); }, 5);
    const double tp = time_ms([&] { kernels::matmul_at(at.data(), b.data(), c2.data(), m, k, n); }, 5);
    report("matmul_at", ts, tp, max_abs_diff(c1, c2));
  }

  const std::size_t nn = 1 << 22;
  std::vector<double> x(nn), y(nn), z1(nn), z2(nn);
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  {
    const double ts = time_ms([&] { kernels::add_serial(x.data(), y.data(), z1.data(), nn); }, 10);
    const double tp = time_ms([&] { kernels::add(x.data(), y.data(), z2.data(), nn); }, 10);
    report("add", ts, tp, max_abs_diff(z1, z2));
  }
  {
    const double ts = time_ms([&] { kernels::mul_serial(x.data(), y.data(), z1.data(), nn); }, 10);
    const double tp = time_ms([&] { kernels::mul(x.data(), y.data(), z2.data(), nn); }, 10);
    report("mul", ts, tp, max_abs_diff(z1, z2));
  }
  {
    const std::size_t r = 2048, cdim = 2048;
    const double ts =
        time_ms([&] { kernels::row_softmax_serial(x.data(), z1.data(), r, cdim); }, 10);
    const double tp = time_ms([&] { kernels::row_softmax(x.data(), z2.data(), r, cdim); }, 10);
    report("row_softmax", ts, tp, max_abs_diff(z1, z2));
  }
  return 0;
}
