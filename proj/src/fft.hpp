#pragma once

#include <complex>
#include <cstddef>

namespace reefclust::detail {

/// Real-to-complex forward DFT; `out` holds n/2+1 bins.
void rfft(const double* in, std::complex<double>* out, std::size_t n);

/// Complex DFT, unnormalised. sign = -1 forward, +1 inverse.
void cfft(const std::complex<double>* in, std::complex<double>* out, std::size_t n, int sign);

}  // namespace reefclust::detail
