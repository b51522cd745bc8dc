#pragma once

// Image quality metrics on coil-combined magnitude images.

#include <vector>

namespace ssmri::metrics {

struct MetricReport {
    double psnr = 0.0;   // dB
    double ssim = 0.0;   // percent
    double mse100 = 0.0; // MSE x 100
};

inline constexpr double kPsnrCap = 100.0; // reported for identical images

// 10*log10(peak^2 / MSE), peak = max(ref). Identical images return the cap.
double psnr(const std::vector<float>& ref, const std::vector<float>& test, int h, int w,
            double cap = kPsnrCap);

// Mean local SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
// reported x100. dynamic_range <= 0 means "use max(ref)".
double ssim(const std::vector<float>& ref, const std::vector<float>& test, int h, int w,
            double dynamic_range = -1.0);

// 100 * mean squared error.
double mse100(const std::vector<float>& ref, const std::vector<float>& test, int h, int w);

MetricReport evaluate_pair(const std::vector<float>& ref, const std::vector<float>& test, int h,
                           int w);

} // namespace ssmri::metrics
