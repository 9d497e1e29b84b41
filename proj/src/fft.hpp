#pragma once

#include <complex>
#include <vector>

namespace ppgauth::detail {

// Unnormalized complex DFT of arbitrary length (FFTW backend).
// inverse=true uses exp(+i...) and does NOT divide by n.
std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& in, bool inverse);

}  // namespace ppgauth::detail
