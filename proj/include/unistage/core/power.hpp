#pragma once

// The classic staging example: b is a next-stage value, n is known while
// staging, so the recursion unfolds into straight-line multiplications.
// power(b, n/2) is built twice per even step; CSE keeps one copy.

#include "unistage/core/graph.hpp"

namespace unistage {

inline StagedValue power(IrGraph& g, StagedValue b, int64_t n) {
    if (n < 0) throw StagingError("power: negative exponent");
    if (n == 0) return g.i64(1);
    if (n % 2 == 0) return g.mul(power(g, b, n / 2), power(g, b, n / 2));
    return g.mul(b, power(g, b, n - 1));
}

}  // namespace unistage
