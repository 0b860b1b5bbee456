#include "gemm.hpp"

#include <algorithm>
#include <vector>

namespace garden::detail {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  // A transposed B is repacked so every row update is a contiguous axpy,
  // which vectorizes; dot-product reductions would not.
  std::vector<T> packed;
  if (trans_b) {
    packed.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * k + p];
    b = packed.data();
  }
  const long rows = static_cast<long>(m);
  const bool big = m * n * k > 16384;
#pragma omp parallel for if (big) schedule(static)
  for (long ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    auto a_at = [&](std::size_t p) { return trans_a ? a[p * m + i] : a[i * k + p]; };
    std::size_t p = 0;
    // Four rank-1 updates per pass over the C row; the grouping is fixed,
    // so results stay independent of the thread count.
    for (; p + 4 <= k; p += 4) {
      const T a0 = a_at(p), a1 = a_at(p + 1), a2 = a_at(p + 2), a3 = a_at(p + 3);
      const T* b0 = b + p * n;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
    }
    for (; p < k; ++p) {
      const T av = a_at(p);
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace garden::detail
