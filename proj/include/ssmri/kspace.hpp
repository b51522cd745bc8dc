#pragma once

// MRI signal-domain machinery: centered orthonormal 2-D Fourier transforms,
// sampling masks, coil projection/combination, ESPIRiT calibration and
// geometric coil compression.

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ssmri::ks {

template <typename T>
struct CImage {
    int h = 0, w = 0;
    std::vector<std::complex<T>> v; // row-major

    CImage() = default;
    CImage(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_) {}
    std::complex<T>& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    const std::complex<T>& at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

template <typename T>
struct CoilStack {
    int coils = 0, h = 0, w = 0;
    std::vector<std::complex<T>> v; // coil-major, row-major planes

    CoilStack() = default;
    CoilStack(int c, int h_, int w_)
        : coils(c), h(h_), w(w_), v(static_cast<std::size_t>(c) * h_ * w_) {}
    std::complex<T>* coil(int c) { return v.data() + static_cast<std::size_t>(c) * h * w; }
    const std::complex<T>* coil(int c) const {
        return v.data() + static_cast<std::size_t>(c) * h * w;
    }
    std::complex<T>& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    const std::complex<T>& at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
};

using ComplexImage = CImage<float>;
using MultiCoilImage = CoilStack<float>;
using KSpace = CoilStack<float>; // Fourier-domain semantics, DC at (h/2, w/2)

enum class SensKind { TrueSimulated, Estimated };

template <typename T>
struct SensMaps {
    int coils = 0, h = 0, w = 0;
    std::vector<std::complex<T>> v;
    SensKind kind = SensKind::TrueSimulated;

    SensMaps() = default;
    SensMaps(int c, int h_, int w_)
        : coils(c), h(h_), w(w_), v(static_cast<std::size_t>(c) * h_ * w_) {}
    std::complex<T>& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    const std::complex<T>& at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
};

using SensitivityMaps = SensMaps<float>;

struct SamplingMask {
    int h = 0, w = 0;
    int R = 1;
    int center_h = 0, center_w = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> m; // row-major {0,1}

    int ones() const {
        int n = 0;
        for (auto b : m) n += b;
        return n;
    }
    bool all_ones() const {
        for (auto b : m)
            if (!b) return false;
        return true;
    }
};

// ---- centered orthonormal FFT ----

// Planar interface used by the autodiff tape: each plane is 2*H*W scalars,
// a real HxW block followed by an imaginary HxW block.
template <typename T>
void fft2c_planar(const T* in, T* out, int planes, int H, int W, bool inverse);

template <typename T>
CoilStack<T> fft2c(const CoilStack<T>& img);
template <typename T>
CoilStack<T> ifft2c(const CoilStack<T>& k);
template <typename T>
CImage<T> fft2c(const CImage<T>& img);
template <typename T>
CImage<T> ifft2c(const CImage<T>& k);

// ---- sampling ----

// Uniform random 2-D undersampling with a fully-sampled centered block.
// Exactly floor(H*W/R) samples; counter-based RNG keyed by seed, so the
// result is a pure function of its arguments.
SamplingMask generate_mask(int H, int W, int R, int center_h, int center_w, std::uint64_t seed);

template <typename T>
CoilStack<T> apply_mask(const CoilStack<T>& k, const SamplingMask& mask);

// ---- coils ----

template <typename T>
CoilStack<T> coil_project(const CImage<T>& image, const SensMaps<T>& sens);

// SENSE-style combine: sum conj(C)*y / sum |C|^2, zero where RSS(C) = 0.
template <typename T>
CImage<T> coil_combine(const CoilStack<T>& mc, const SensMaps<T>& sens);

// Adjoint of coil_project: sum_c conj(C_c) * y_c (no normalization).
template <typename T>
CImage<T> coil_adjoint(const CoilStack<T>& mc, const SensMaps<T>& sens);

// ESPIRiT from the fully-sampled calibration block at k-space center.
// calib_h/calib_w select the centered region used for calibration.
SensitivityMaps estimate_sensitivities_espirit(const KSpace& calib, int calib_h, int calib_w,
                                               int kernel_h, int kernel_w, double sv_threshold,
                                               double eig_threshold);

// Geometric coil compression along the readout (width) dimension.
KSpace gcc_compress(const KSpace& k, int n_out);

// ---- helpers ----

template <typename T>
CImage<T> rss_combine(const CoilStack<T>& mc) {
    CImage<T> out(mc.h, mc.w);
    for (int y = 0; y < mc.h; ++y)
        for (int x = 0; x < mc.w; ++x) {
            T acc = T(0);
            for (int c = 0; c < mc.coils; ++c) acc += std::norm(mc.at(c, y, x));
            out.at(y, x) = std::sqrt(acc);
        }
    return out;
}

} // namespace ssmri::ks
