#include "ssmri/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ssmri::metrics {

namespace {

void check_pair(const std::vector<float>& ref, const std::vector<float>& test, int h, int w,
                const char* op) {
    if (static_cast<std::size_t>(h) * w != ref.size() || ref.size() != test.size())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(h) +
                                    "x" + std::to_string(w) + ", ref " + std::to_string(ref.size()) +
                                    ", test " + std::to_string(test.size()) + ")");
}

double mse(const std::vector<float>& ref, const std::vector<float>& test) {
    double acc = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = static_cast<double>(ref[i]) - test[i];
        acc += d * d;
    }
    return acc / static_cast<double>(ref.size());
}

} // namespace

double psnr(const std::vector<float>& ref, const std::vector<float>& test, int h, int w,
            double cap) {
    check_pair(ref, test, h, w, "psnr");
    double peak = 0;
    for (float v : ref) peak = std::max(peak, static_cast<double>(v));
    if (peak <= 0) throw std::invalid_argument("psnr: reference image is all-zero");
    const double e = mse(ref, test);
    if (e == 0) return cap;
    return std::min(cap, 10.0 * std::log10(peak * peak / e));
}

double ssim(const std::vector<float>& ref, const std::vector<float>& test, int h, int w,
            double dynamic_range) {
    check_pair(ref, test, h, w, "ssim");
    constexpr int win = 11;
    constexpr double sigma = 1.5, k1 = 0.01, k2 = 0.03;
    if (h < win || w < win)
        throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                    " smaller than the " + std::to_string(win) + "-pixel window");
    double range = dynamic_range;
    if (range <= 0) {
        range = 0;
        for (float v : ref) range = std::max(range, static_cast<double>(v));
    }
    const double c1 = (k1 * range) * (k1 * range);
    const double c2 = (k2 * range) * (k2 * range);

    double g[win];
    double gsum = 0;
    for (int i = 0; i < win; ++i) {
        const double d = i - win / 2;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        gsum += g[i];
    }
    for (double& v : g) v /= gsum;

    // separable Gaussian moments, valid mode
    const int hw = w - win + 1, hh = h - win + 1;
    auto blur = [&](auto&& pix) {
        std::vector<double> tmp(static_cast<std::size_t>(h) * hw);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < hw; ++x) {
                double acc = 0;
                for (int i = 0; i < win; ++i) acc += g[i] * pix(y, x + i);
                tmp[static_cast<std::size_t>(y) * hw + x] = acc;
            }
        std::vector<double> out(static_cast<std::size_t>(hh) * hw);
        for (int y = 0; y < hh; ++y)
            for (int x = 0; x < hw; ++x) {
                double acc = 0;
                for (int i = 0; i < win; ++i) acc += g[i] * tmp[static_cast<std::size_t>(y + i) * hw + x];
                out[static_cast<std::size_t>(y) * hw + x] = acc;
            }
        return out;
    };

    auto mu_x = blur([&](int y, int x) { return static_cast<double>(ref[y * w + x]); });
    auto mu_y = blur([&](int y, int x) { return static_cast<double>(test[y * w + x]); });
    auto xx = blur([&](int y, int x) { return static_cast<double>(ref[y * w + x]) * ref[y * w + x]; });
    auto yy = blur([&](int y, int x) { return static_cast<double>(test[y * w + x]) * test[y * w + x]; });
    auto xy = blur([&](int y, int x) { return static_cast<double>(ref[y * w + x]) * test[y * w + x]; });

    double acc = 0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double mx = mu_x[i], my = mu_y[i];
        const double vx = xx[i] - mx * mx;
        const double vy = yy[i] - my * my;
        const double cxy = xy[i] - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return 100.0 * acc / static_cast<double>(mu_x.size());
}

double mse100(const std::vector<float>& ref, const std::vector<float>& test, int h, int w) {
    check_pair(ref, test, h, w, "mse100");
    return 100.0 * mse(ref, test);
}

MetricReport evaluate_pair(const std::vector<float>& ref, const std::vector<float>& test, int h,
                           int w) {
    return MetricReport{psnr(ref, test, h, w), ssim(ref, test, h, w), mse100(ref, test, h, w)};
}

} // namespace ssmri::metrics
