#pragma once

#include <cstddef>

namespace fewshot {

// Dot product with four independent accumulator chains. The summation order
// is fixed by the source, so results are identical on every platform; the
// independent chains let the compiler pipeline or vectorize the reduction.
inline double dot(const double* a, const double* b, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        acc0 += a[j] * b[j];
        acc1 += a[j + 1] * b[j + 1];
        acc2 += a[j + 2] * b[j + 2];
        acc3 += a[j + 3] * b[j + 3];
    }
    double acc = (acc0 + acc1) + (acc2 + acc3);
    for (; j < n; ++j)
        acc += a[j] * b[j];
    return acc;
}

} // namespace fewshot
