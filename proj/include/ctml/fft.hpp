#pragma once

#include <complex>
#include <vector>

namespace ctml {

// In-place iterative radix-2 FFT. Length must be a power of two.
// inverse=true applies the 1/N normalization.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

int next_pow2(int n);

} // namespace ctml
