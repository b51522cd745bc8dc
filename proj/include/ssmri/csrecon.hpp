#pragma once

// Single-coil compressed-sensing reconstruction in the SparseMRI style:
// nonlinear conjugate gradients with backtracking line search on
//   ||F_Omega x - y||^2 + lambda_tv * TV(x) + lambda_wav * ||W x||_1
// with the absolute values smoothed as |z| ~ sqrt(|z|^2 + mu).

#include <complex>
#include <stdexcept>
#include <vector>

#include "ssmri/kspace.hpp"

namespace ssmri::cs {

struct CsParams {
    int n_iters = 30;
    double lambda_tv = 1e-4;
    double lambda_wav = 1e-4;
    int wavelet_levels = 3;
    double mu = 1e-15;       // |.| smoothing constant
    double ls_alpha = 0.01;  // Armijo sufficient-decrease fraction
    double ls_beta = 0.6;    // backtracking shrink factor
    int max_backtracks = 20;

    // stage-1 preset used inside CasGAN
    static CsParams casgan() {
        CsParams p;
        p.n_iters = 4;
        return p;
    }
    static CsParams standalone() { return {}; }

    void validate() const {
        if (n_iters < 1) throw std::invalid_argument("CsParams: n_iters must be >= 1");
        if (lambda_tv < 0 || lambda_wav < 0)
            throw std::invalid_argument("CsParams: regularization weights must be >= 0");
        if (wavelet_levels < 1) throw std::invalid_argument("CsParams: wavelet_levels must be >= 1");
        if (mu <= 0) throw std::invalid_argument("CsParams: mu must be > 0");
        if (ls_alpha <= 0 || ls_alpha >= 0.5 || ls_beta <= 0 || ls_beta >= 1)
            throw std::invalid_argument("CsParams: bad line-search parameters");
        if (max_backtracks < 1) throw std::invalid_argument("CsParams: max_backtracks must be >= 1");
    }
};

template <typename T>
struct CsResult {
    ks::CImage<T> image;
    std::vector<double> objective; // value before each accepted step and after the last
    double data_residual = 0.0;    // ||mask * fft2c(image) - y||_2
    bool line_search_failed = false;
};

// Smoothed objective and (optionally) its gradient at x. The gradient is
// packed as complex(df/d Re x, df/d Im x) per pixel.
template <typename T>
double cs_objective(const ks::CImage<T>& x, const ks::CImage<T>& y, const ks::SamplingMask& mask,
                    const CsParams& p, ks::CImage<T>* grad_out = nullptr);

template <typename T>
CsResult<T> sparsemri_reconstruct_t(const ks::CImage<T>& masked_kspace,
                                    const ks::SamplingMask& mask, const CsParams& p);

inline CsResult<float> sparsemri_reconstruct(const ks::CImage<float>& masked_kspace,
                                             const ks::SamplingMask& mask, const CsParams& p) {
    return sparsemri_reconstruct_t<float>(masked_kspace, mask, p);
}

} // namespace ssmri::cs
