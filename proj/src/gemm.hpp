#pragma once

#include <cstddef>

namespace garden::detail {

/// C[m x n] (+)= op(A) * op(B) where op(A) is m x k and op(B) is k x n.
/// A is stored k x m when trans_a, B is stored n x k when trans_b.
/// Each row of C is produced by a single thread in a fixed summation order,
/// so results do not depend on the thread count.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

}  // namespace garden::detail
