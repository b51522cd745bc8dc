#include "ssmri/csrecon.hpp"

#include <cmath>

#include "ssmri/wavelet.hpp"

namespace ssmri::cs {

namespace {

template <typename T>
double dot_re(const ks::CImage<T>& a, const ks::CImage<T>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        acc += double(a.v[i].real()) * b.v[i].real() + double(a.v[i].imag()) * b.v[i].imag();
    return acc;
}

template <typename T>
void axpy(ks::CImage<T>& x, double t, const ks::CImage<T>& d) {
    for (std::size_t i = 0; i < x.v.size(); ++i)
        x.v[i] += std::complex<T>(static_cast<T>(t * d.v[i].real()), static_cast<T>(t * d.v[i].imag()));
}

} // namespace

template <typename T>
double cs_objective(const ks::CImage<T>& x, const ks::CImage<T>& y, const ks::SamplingMask& mask,
                    const CsParams& p, ks::CImage<T>* grad_out) {
    const int h = x.h, w = x.w;
    if (y.h != h || y.w != w || mask.h != h || mask.w != w)
        throw std::invalid_argument("cs_objective: image/k-space/mask shape mismatch");
    double f = 0;
    if (grad_out) {
        grad_out->h = h;
        grad_out->w = w;
        grad_out->v.assign(x.v.size(), {});
    }

    // data consistency ||mask * fft2c(x) - y||^2
    auto k = ks::fft2c(x);
    for (std::size_t i = 0; i < k.v.size(); ++i) {
        k.v[i] = (mask.m[i] ? k.v[i] : std::complex<T>{}) - y.v[i];
        f += double(k.v[i].real()) * k.v[i].real() + double(k.v[i].imag()) * k.v[i].imag();
        if (!mask.m[i]) k.v[i] = {};
    }
    if (grad_out) {
        auto gd = ks::ifft2c(k);
        for (std::size_t i = 0; i < gd.v.size(); ++i) grad_out->v[i] += T(2) * gd.v[i];
    }

    // isotropic TV, forward differences with Neumann boundary
    if (p.lambda_tv > 0) {
        const T mu = static_cast<T>(p.mu);
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                const std::complex<T> c = x.v[yy * w + xx];
                const std::complex<T> du = xx + 1 < w ? x.v[yy * w + xx + 1] - c : std::complex<T>{};
                const std::complex<T> dv = yy + 1 < h ? x.v[(yy + 1) * w + xx] - c : std::complex<T>{};
                const T t = std::sqrt(std::norm(du) + std::norm(dv) + mu);
                f += p.lambda_tv * t;
                if (grad_out) {
                    const T s = static_cast<T>(p.lambda_tv) / t;
                    if (xx + 1 < w) {
                        grad_out->v[yy * w + xx + 1] += s * du;
                        grad_out->v[yy * w + xx] -= s * du;
                    }
                    if (yy + 1 < h) {
                        grad_out->v[(yy + 1) * w + xx] += s * dv;
                        grad_out->v[yy * w + xx] -= s * dv;
                    }
                }
            }
    }

    // wavelet-domain L1; W is orthogonal so W^T = W^{-1}
    if (p.lambda_wav > 0) {
        auto wc = wav::wavelet_fwd(x.v, h, w, p.wavelet_levels);
        const T mu = static_cast<T>(p.mu);
        for (auto& c : wc) {
            const T t = std::sqrt(std::norm(c) + mu);
            f += p.lambda_wav * t;
            c = static_cast<T>(p.lambda_wav) * c / t;
        }
        if (grad_out) {
            auto gw = wav::wavelet_inv(wc, h, w, p.wavelet_levels);
            for (std::size_t i = 0; i < gw.size(); ++i) grad_out->v[i] += gw[i];
        }
    }
    return f;
}

template <typename T>
CsResult<T> sparsemri_reconstruct_t(const ks::CImage<T>& masked_kspace,
                                    const ks::SamplingMask& mask, const CsParams& p) {
    p.validate();
    const int h = masked_kspace.h, w = masked_kspace.w;
    if (mask.h != h || mask.w != w)
        throw std::invalid_argument("sparsemri_reconstruct: mask/data shape mismatch");
    for (std::size_t i = 0; i < masked_kspace.v.size(); ++i)
        if (!mask.m[i] && masked_kspace.v[i] != std::complex<T>{})
            throw std::invalid_argument("sparsemri_reconstruct: data nonzero outside the mask");

    CsResult<T> res;
    if (mask.all_ones()) {
        // Fully sampled data inverts exactly; downstream regimes rely on this
        // path agreeing with the plain inverse FFT bit for bit.
        res.image = ks::ifft2c(masked_kspace);
        res.objective.push_back(cs_objective(res.image, masked_kspace, mask, p));
        return res;
    }

    ks::CImage<T> x = ks::ifft2c(masked_kspace); // zero-filled start
    ks::CImage<T> g, g_new;
    double f = cs_objective(x, masked_kspace, mask, p, &g);
    ks::CImage<T> d = g;
    for (auto& c : d.v) c = -c;

    for (int it = 0; it < p.n_iters; ++it) {
        res.objective.push_back(f);
        double gd = dot_re(g, d);
        if (gd >= 0) { // not a descent direction: restart on steepest descent
            d = g;
            for (auto& c : d.v) c = -c;
            gd = dot_re(g, d);
            if (gd >= 0) break; // zero gradient
        }
        double t = 1.0;
        ks::CImage<T> cand;
        double fc = 0;
        int bt = 0;
        for (; bt < p.max_backtracks; ++bt) {
            cand = x;
            axpy(cand, t, d);
            fc = cs_objective(cand, masked_kspace, mask, p);
            if (fc <= f + p.ls_alpha * t * gd) break;
            t *= p.ls_beta;
        }
        if (bt == p.max_backtracks) {
            res.line_search_failed = true;
            break;
        }
        x = std::move(cand);
        cs_objective(x, masked_kspace, mask, p, &g_new);
        const double beta_fr = dot_re(g_new, g_new) / std::max(dot_re(g, g), 1e-300);
        for (std::size_t i = 0; i < d.v.size(); ++i)
            d.v[i] = -g_new.v[i] + static_cast<T>(beta_fr) * d.v[i];
        g = g_new;
        f = fc;
    }
    res.objective.push_back(f);

    auto k = ks::fft2c(x);
    double r2 = 0;
    for (std::size_t i = 0; i < k.v.size(); ++i)
        if (mask.m[i]) r2 += std::norm(std::complex<double>(k.v[i]) -
                                       std::complex<double>(masked_kspace.v[i]));
    res.data_residual = std::sqrt(r2);
    res.image = std::move(x);
    return res;
}

template double cs_objective<float>(const ks::CImage<float>&, const ks::CImage<float>&,
                                    const ks::SamplingMask&, const CsParams&, ks::CImage<float>*);
template double cs_objective<double>(const ks::CImage<double>&, const ks::CImage<double>&,
                                     const ks::SamplingMask&, const CsParams&, ks::CImage<double>*);
template CsResult<float> sparsemri_reconstruct_t<float>(const ks::CImage<float>&,
                                                        const ks::SamplingMask&, const CsParams&);
template CsResult<double> sparsemri_reconstruct_t<double>(const ks::CImage<double>&,
                                                          const ks::SamplingMask&, const CsParams&);

} // namespace ssmri::cs
