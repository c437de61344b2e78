#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include <cmath>
#include <cstdlib>
#include <utility>
#include <vector>

namespace oracle {

// Whole-sample symmetric extension: x[-i] = x[i], x[n-1+i] = x[n-1-i].
inline double sym(const std::vector<double>& x, int i)
{
    const int n = int(x.size());
    while (i < 0 || i >= n)
        i = i < 0 ? -i : 2 * (n - 1) - i;
    return x[std::size_t(i)];
}

struct FilterBank {
    std::vector<double> low;  // taps at offsets 0, +-1, ... (symmetric)
    std::vector<double> high;
};

// Analysis filters in the normalization with unit DC gain for the low band
// and gain 2 at Nyquist for the high band.
inline FilterBank cdf97_bank()
{
    return {{0.602949018236358, 0.266864118442872, -0.078223266528988, -0.016864118442875, 0.026748757410810},
            {1.115087052456994, -0.591271763114247, -0.057543526228500, 0.091271763114249}};
}

inline FilterBank cdf53_bank() { return {{0.75, 0.25, -0.125}, {1.0, -0.5}}; }

// low[m] = sum_k lo_|k| x[2m + k], high[m] = sum_k hi_|k| x[2m + 1 + k].
inline std::pair<std::vector<double>, std::vector<double>> analyze(const FilterBank& fb, const std::vector<double>& x)
{
    const int half = int(x.size()) / 2;
    std::vector<double> lo(half), hi(half);
    for (int m = 0; m < half; ++m) {
        for (int k = -int(fb.low.size()) + 1; k < int(fb.low.size()); ++k)
            lo[m] += fb.low[std::size_t(std::abs(k))] * sym(x, 2 * m + k);
        for (int k = -int(fb.high.size()) + 1; k < int(fb.high.size()); ++k)
            hi[m] += fb.high[std::size_t(std::abs(k))] * sym(x, 2 * m + 1 + k);
    }
    return {lo, hi};
}

// Laurent polynomials; key k is the coefficient of the shift x[m + k].

} // namespace oracle
