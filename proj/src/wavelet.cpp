#include "ssmri/wavelet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ssmri::wav {

namespace {

// 4-tap Daubechies analysis filters (2 vanishing moments), L2-normalized.
const double kSqrt3 = 1.7320508075688772935;
const double kH[4] = {(1 + kSqrt3) / (4 * 1.4142135623730950488),
                      (3 + kSqrt3) / (4 * 1.4142135623730950488),
                      (3 - kSqrt3) / (4 * 1.4142135623730950488),
                      (1 - kSqrt3) / (4 * 1.4142135623730950488)};
// quadrature mirror: g[i] = (-1)^i h[3-i]
const double kG[4] = {kH[3], -kH[2], kH[1], -kH[0]};

void check_size(int h, int w, int levels, const char* op) {
    if (levels < 1) throw std::invalid_argument(std::string(op) + ": levels must be >= 1");
    const int div = 1 << levels;
    if (h <= 0 || w <= 0 || h % div != 0 || w % div != 0)
        throw std::invalid_argument(std::string(op) + ": size " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by 2^" +
                                    std::to_string(levels));
}

// One periodized analysis step along a strided 1-D slice of length n (even).
template <typename T>
void dwt_step(std::complex<T>* s, int n, int stride, std::vector<std::complex<T>>& tmp) {
    const int half = n / 2;
    for (int k = 0; k < half; ++k) {
        std::complex<T> a{}, d{};
        for (int i = 0; i < 4; ++i) {
            const std::complex<T> v = s[((2 * k + i) % n) * stride];
            a += static_cast<T>(kH[i]) * v;
            d += static_cast<T>(kG[i]) * v;
        }
        tmp[k] = a;
        tmp[half + k] = d;
    }
    for (int k = 0; k < n; ++k) s[k * stride] = tmp[k];
}

template <typename T>
void idwt_step(std::complex<T>* s, int n, int stride, std::vector<std::complex<T>>& tmp) {
    const int half = n / 2;
    std::fill(tmp.begin(), tmp.begin() + n, std::complex<T>{});
    for (int k = 0; k < half; ++k) {
        const std::complex<T> a = s[k * stride], d = s[(half + k) * stride];
        for (int i = 0; i < 4; ++i)
            tmp[(2 * k + i) % n] += static_cast<T>(kH[i]) * a + static_cast<T>(kG[i]) * d;
    }
    for (int k = 0; k < n; ++k) s[k * stride] = tmp[k];
}

} // namespace

template <typename T>
std::vector<std::complex<T>> wavelet_fwd(const std::vector<std::complex<T>>& img, int h, int w,
                                         int levels) {
    check_size(h, w, levels, "wavelet_fwd");
    if (img.size() != static_cast<std::size_t>(h) * w)
        throw std::invalid_argument("wavelet_fwd: data length mismatch");
    auto out = img;
    std::vector<std::complex<T>> tmp(static_cast<std::size_t>(std::max(h, w)));
    int ch = h, cw = w;
    for (int l = 0; l < levels; ++l) {
        for (int y = 0; y < ch; ++y) dwt_step(out.data() + static_cast<std::size_t>(y) * w, cw, 1, tmp);
        for (int x = 0; x < cw; ++x) dwt_step(out.data() + x, ch, w, tmp);
        ch /= 2;
        cw /= 2;
    }
    return out;
}

template <typename T>
std::vector<std::complex<T>> wavelet_inv(const std::vector<std::complex<T>>& coeffs, int h, int w,
                                         int levels) {
    check_size(h, w, levels, "wavelet_inv");
    if (coeffs.size() != static_cast<std::size_t>(h) * w)
        throw std::invalid_argument("wavelet_inv: data length mismatch");
    auto out = coeffs;
    std::vector<std::complex<T>> tmp(static_cast<std::size_t>(std::max(h, w)));
    for (int l = levels - 1; l >= 0; --l) {
        const int ch = h >> l, cw = w >> l;
        for (int x = 0; x < cw; ++x) idwt_step(out.data() + x, ch, w, tmp);
        for (int y = 0; y < ch; ++y) idwt_step(out.data() + static_cast<std::size_t>(y) * w, cw, 1, tmp);
    }
    return out;
}

template std::vector<std::complex<float>> wavelet_fwd(const std::vector<std::complex<float>>&, int,
                                                      int, int);
template std::vector<std::complex<float>> wavelet_inv(const std::vector<std::complex<float>>&, int,
                                                      int, int);
template std::vector<std::complex<double>> wavelet_fwd(const std::vector<std::complex<double>>&,
                                                       int, int, int);
template std::vector<std::complex<double>> wavelet_inv(const std::vector<std::complex<double>>&,
                                                       int, int, int);

} // namespace ssmri::wav
