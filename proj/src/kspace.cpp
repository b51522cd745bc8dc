#include "ssmri/kspace.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

#include "ssmri/rng.hpp"

namespace ssmri::ks {

namespace {

// FFTW planning is not thread-safe; execution through the new-array API is.
std::mutex g_plan_mutex;

struct PlanKey {
    int H, W;
    int sign;
    bool single;
    bool operator<(const PlanKey& o) const {
        return std::tie(H, W, sign, single) < std::tie(o.H, o.W, o.sign, o.single);
    }
};

fftw_plan plan_d(int H, int W, int sign) {
    static std::map<PlanKey, fftw_plan> cache;
    std::lock_guard<std::mutex> lk(g_plan_mutex);
    PlanKey key{H, W, sign, false};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<fftw_complex> tmp(static_cast<std::size_t>(H) * W);
    fftw_plan p = fftw_plan_dft_2d(H, W, tmp.data(), tmp.data(), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    cache[key] = p;
    return p;
}

fftwf_plan plan_f(int H, int W, int sign) {
    static std::map<PlanKey, fftwf_plan> cache;
    std::lock_guard<std::mutex> lk(g_plan_mutex);
    PlanKey key{H, W, sign, true};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<fftwf_complex> tmp(static_cast<std::size_t>(H) * W);
    fftwf_plan p = fftwf_plan_dft_2d(H, W, tmp.data(), tmp.data(), sign,
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
    cache[key] = p;
    return p;
}

void execute_dft(std::complex<double>* buf, int H, int W, int sign) {
    fftw_plan p = plan_d(H, W, sign);
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(buf), reinterpret_cast<fftw_complex*>(buf));
}

void execute_dft(std::complex<float>* buf, int H, int W, int sign) {
    fftwf_plan p = plan_f(H, W, sign);
    fftwf_execute_dft(p, reinterpret_cast<fftwf_complex*>(buf),
                      reinterpret_cast<fftwf_complex*>(buf));
}

// fft2c = fftshift . FFT . ifftshift, orthonormal; ifft2c is its inverse.
template <typename T>
void fft2c_plane(std::complex<T>* buf, int H, int W, bool inverse) {
    const int ch = H / 2, cw = W / 2;
    std::vector<std::complex<T>> tmp(static_cast<std::size_t>(H) * W);
    // ifftshift
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            tmp[static_cast<std::size_t>(y) * W + x] =
                buf[static_cast<std::size_t>((y + ch) % H) * W + (x + cw) % W];
    execute_dft(tmp.data(), H, W, inverse ? FFTW_BACKWARD : FFTW_FORWARD);
    const T scale = T(1) / std::sqrt(static_cast<T>(H) * W);
    // fftshift + scale
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            buf[static_cast<std::size_t>((y + ch) % H) * W + (x + cw) % W] =
                tmp[static_cast<std::size_t>(y) * W + x] * scale;
}

template <typename T>
void check_dims(int H, int W) {
    if (H < 2 || W < 2)
        throw std::invalid_argument("fft2c: spatial dimensions must be >= 2, got " +
                                    std::to_string(H) + "x" + std::to_string(W));
}

} // namespace

template <typename T>
void fft2c_planar(const T* in, T* out, int planes, int H, int W, bool inverse) {
    check_dims<T>(H, W);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    std::vector<std::complex<T>> buf(hw);
    for (int p = 0; p < planes; ++p) {
        const T* re = in + static_cast<std::size_t>(p) * 2 * hw;
        const T* im = re + hw;
        for (std::size_t i = 0; i < hw; ++i) buf[i] = {re[i], im[i]};
        fft2c_plane(buf.data(), H, W, inverse);
        T* ore = out + static_cast<std::size_t>(p) * 2 * hw;
        T* oim = ore + hw;
        for (std::size_t i = 0; i < hw; ++i) {
            ore[i] = buf[i].real();
            oim[i] = buf[i].imag();
        }
    }
}

template void fft2c_planar<float>(const float*, float*, int, int, int, bool);
template void fft2c_planar<double>(const double*, double*, int, int, int, bool);

template <typename T>
CoilStack<T> fft2c(const CoilStack<T>& img) {
    check_dims<T>(img.h, img.w);
    CoilStack<T> out = img;
    for (int c = 0; c < out.coils; ++c) fft2c_plane(out.coil(c), out.h, out.w, false);
    return out;
}

template <typename T>
CoilStack<T> ifft2c(const CoilStack<T>& k) {
    check_dims<T>(k.h, k.w);
    CoilStack<T> out = k;
    for (int c = 0; c < out.coils; ++c) fft2c_plane(out.coil(c), out.h, out.w, true);
    return out;
}

template <typename T>
CImage<T> fft2c(const CImage<T>& img) {
    check_dims<T>(img.h, img.w);
    CImage<T> out = img;
    fft2c_plane(out.v.data(), out.h, out.w, false);
    return out;
}

template <typename T>
CImage<T> ifft2c(const CImage<T>& k) {
    check_dims<T>(k.h, k.w);
    CImage<T> out = k;
    fft2c_plane(out.v.data(), out.h, out.w, true);
    return out;
}

template CoilStack<float> fft2c<float>(const CoilStack<float>&);
template CoilStack<double> fft2c<double>(const CoilStack<double>&);
template CoilStack<float> ifft2c<float>(const CoilStack<float>&);
template CoilStack<double> ifft2c<double>(const CoilStack<double>&);
template CImage<float> fft2c<float>(const CImage<float>&);
template CImage<double> fft2c<double>(const CImage<double>&);
template CImage<float> ifft2c<float>(const CImage<float>&);
template CImage<double> ifft2c<double>(const CImage<double>&);

SamplingMask generate_mask(int H, int W, int R, int center_h, int center_w, std::uint64_t seed) {
    if (R < 1) throw std::invalid_argument("generate_mask: acceleration R must be >= 1");
    if (center_h < 0 || center_w < 0 || center_h > H || center_w > W)
        throw std::invalid_argument("generate_mask: center block does not fit the grid");
    const std::int64_t total = static_cast<std::int64_t>(H) * W;
    const std::int64_t budget = total / R;
    if (static_cast<std::int64_t>(center_h) * center_w > budget)
        throw std::invalid_argument("generate_mask: center block (" + std::to_string(center_h) +
                                    "x" + std::to_string(center_w) + ") exceeds sample budget " +
                                    std::to_string(budget));

    SamplingMask mask;
    mask.h = H;
    mask.w = W;
    mask.R = R;
    mask.center_h = center_h;
    mask.center_w = center_w;
    mask.seed = seed;
    mask.m.assign(static_cast<std::size_t>(total), 0);

    const int y0 = H / 2 - center_h / 2, x0 = W / 2 - center_w / 2;
    auto in_center = [&](int y, int x) {
        return y >= y0 && y < y0 + center_h && x >= x0 && x < x0 + center_w;
    };
    for (int y = y0; y < y0 + center_h; ++y)
        for (int x = x0; x < x0 + center_w; ++x) mask.m[static_cast<std::size_t>(y) * W + x] = 1;

    const std::int64_t remaining = budget - static_cast<std::int64_t>(center_h) * center_w;
    if (remaining == 0) return mask;

    // Key every non-center position and keep the `remaining` smallest keys:
    // equivalent to uniform sampling without replacement, and independent of
    // evaluation order.
    std::vector<std::pair<std::uint64_t, std::int64_t>> keyed;
    keyed.reserve(static_cast<std::size_t>(total));
    for (std::int64_t idx = 0; idx < total; ++idx) {
        const int y = static_cast<int>(idx / W), x = static_cast<int>(idx % W);
        if (in_center(y, x)) continue;
        keyed.emplace_back(rng::hash64(seed, static_cast<std::uint64_t>(idx)), idx);
    }
    std::nth_element(keyed.begin(), keyed.begin() + remaining - 1, keyed.end());
    std::uint64_t kth = 0;
    std::int64_t kth_idx = 0;
    std::tie(kth, kth_idx) = keyed[static_cast<std::size_t>(remaining - 1)];
    for (auto& [key, idx] : keyed)
        if (key < kth || (key == kth && idx <= kth_idx)) mask.m[static_cast<std::size_t>(idx)] = 1;
    return mask;
}

template <typename T>
CoilStack<T> apply_mask(const CoilStack<T>& k, const SamplingMask& mask) {
    if (k.h != mask.h || k.w != mask.w)
        throw std::invalid_argument("apply_mask: k-space " + std::to_string(k.h) + "x" +
                                    std::to_string(k.w) + " vs mask " + std::to_string(mask.h) +
                                    "x" + std::to_string(mask.w));
    CoilStack<T> out = k;
    const std::size_t hw = static_cast<std::size_t>(k.h) * k.w;
    for (int c = 0; c < k.coils; ++c) {
        std::complex<T>* p = out.coil(c);
        for (std::size_t i = 0; i < hw; ++i)
            if (!mask.m[i]) p[i] = std::complex<T>(0, 0);
    }
    return out;
}

template CoilStack<float> apply_mask<float>(const CoilStack<float>&, const SamplingMask&);
template CoilStack<double> apply_mask<double>(const CoilStack<double>&, const SamplingMask&);

template <typename T>
CoilStack<T> coil_project(const CImage<T>& image, const SensMaps<T>& sens) {
    if (image.h != sens.h || image.w != sens.w)
        throw std::invalid_argument("coil_project: image and sensitivity shapes differ");
    CoilStack<T> out(sens.coils, sens.h, sens.w);
    const std::size_t hw = static_cast<std::size_t>(sens.h) * sens.w;
    for (int c = 0; c < sens.coils; ++c) {
        const std::complex<T>* s = sens.v.data() + static_cast<std::size_t>(c) * hw;
        std::complex<T>* o = out.coil(c);
        for (std::size_t i = 0; i < hw; ++i) o[i] = image.v[i] * s[i];
    }
    return out;
}

template <typename T>
CImage<T> coil_adjoint(const CoilStack<T>& mc, const SensMaps<T>& sens) {
    if (mc.h != sens.h || mc.w != sens.w || mc.coils != sens.coils)
        throw std::invalid_argument("coil_adjoint: stack and sensitivity shapes differ");
    CImage<T> out(mc.h, mc.w);
    const std::size_t hw = static_cast<std::size_t>(mc.h) * mc.w;
    for (int c = 0; c < mc.coils; ++c) {
        const std::complex<T>* s = sens.v.data() + static_cast<std::size_t>(c) * hw;
        const std::complex<T>* y = mc.coil(c);
        for (std::size_t i = 0; i < hw; ++i) out.v[i] += std::conj(s[i]) * y[i];
    }
    return out;
}

template <typename T>
CImage<T> coil_combine(const CoilStack<T>& mc, const SensMaps<T>& sens) {
    if (mc.h != sens.h || mc.w != sens.w || mc.coils != sens.coils)
        throw std::invalid_argument("coil_combine: stack and sensitivity shapes differ");
    CImage<T> out(mc.h, mc.w);
    const std::size_t hw = static_cast<std::size_t>(mc.h) * mc.w;
    for (std::size_t i = 0; i < hw; ++i) {
        std::complex<T> num(0, 0);
        T den = T(0);
        for (int c = 0; c < mc.coils; ++c) {
            const std::complex<T> s = sens.v[static_cast<std::size_t>(c) * hw + i];
            num += std::conj(s) * mc.v[static_cast<std::size_t>(c) * hw + i];
            den += std::norm(s);
        }
        out.v[i] = den > T(0) ? num / den : std::complex<T>(0, 0);
    }
    return out;
}

template CoilStack<float> coil_project<float>(const CImage<float>&, const SensMaps<float>&);
template CoilStack<double> coil_project<double>(const CImage<double>&, const SensMaps<double>&);
template CImage<float> coil_adjoint<float>(const CoilStack<float>&, const SensMaps<float>&);
template CImage<double> coil_adjoint<double>(const CoilStack<double>&, const SensMaps<double>&);
template CImage<float> coil_combine<float>(const CoilStack<float>&, const SensMaps<float>&);
template CImage<double> coil_combine<double>(const CoilStack<double>&, const SensMaps<double>&);

} // namespace ssmri::ks
