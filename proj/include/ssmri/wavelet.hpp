#pragma once

// Multilevel orthogonal Daubechies-4 wavelet transform (periodized), applied
// separately to the real and imaginary planes of a complex image. The
// periodization keeps the transform exactly orthogonal at every even length,
// so wavelet_inv is both the inverse and the transpose.

#include <complex>
#include <vector>

namespace ssmri::wav {

template <typename T>
std::vector<std::complex<T>> wavelet_fwd(const std::vector<std::complex<T>>& img, int h, int w,
                                         int levels);

template <typename T>
std::vector<std::complex<T>> wavelet_inv(const std::vector<std::complex<T>>& coeffs, int h, int w,
                                         int levels);

} // namespace ssmri::wav
