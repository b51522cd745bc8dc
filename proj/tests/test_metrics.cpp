#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "ssmri/metrics.hpp"

using namespace ssmri::metrics;

namespace {

std::vector<float> random_img(int n, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// One-line PSNR oracle, written independently of the implementation.
double psnr_oracle(const std::vector<float>& r, const std::vector<float>& t) {
    double peak = *std::max_element(r.begin(), r.end());
    double e = 0;
    for (std::size_t i = 0; i < r.size(); ++i) e += (double(r[i]) - t[i]) * (double(r[i]) - t[i]);
    e /= r.size();
    return 10.0 * std::log10(peak * peak / e);
}

// Direct, unoptimized sliding-window SSIM.
double ssim_oracle(const std::vector<float>& r, const std::vector<float>& t, int h, int w,
                   double range) {
    const int win = 11;
    const double sigma = 1.5, c1 = 0.01 * range * 0.01 * range, c2 = 0.03 * range * 0.03 * range;
    std::vector<double> g(win * win);
    double gs = 0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            double dy = i - 5, dx = j - 5;
            g[i * win + j] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            gs += g[i * win + j];
        }
    for (auto& v : g) v /= gs;
    double acc = 0;
    int n = 0;
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double a = r[(y + i) * w + x + j], b = t[(y + i) * w + x + j];
                    double wgt = g[i * win + j];
                    mx += wgt * a;
                    my += wgt * b;
                    xx += wgt * a * a;
                    yy += wgt * b * b;
                    xy += wgt * a * b;
                }
            double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
            acc += ((2 * mx * my + c1) * (2 * cxy + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++n;
        }
    return 100.0 * acc / n;
}

} // namespace

TEST_CASE("psnr") {
    std::mt19937_64 rng(1);
    auto img = random_img(32 * 32, rng);
    SUBCASE("identical images hit the cap") { CHECK(psnr(img, img, 32, 32) == 100.0); }
    SUBCASE("closed form: ref 1, test 0.9") {
        std::vector<float> r(256, 1.0f), t(256, 0.9f);
        CHECK(psnr(r, t, 16, 16) == doctest::Approx(20.0).epsilon(1e-6));
    }
    SUBCASE("random pair matches the loop oracle to 1e-9") {
        for (int trial = 0; trial < 10; ++trial) {
            auto r = random_img(24 * 24, rng, 0.1f, 1.0f);
            auto t = random_img(24 * 24, rng, 0.1f, 1.0f);
            CHECK(psnr(r, t, 24, 24) == doctest::Approx(psnr_oracle(r, t)).epsilon(1e-9));
        }
    }
    SUBCASE("all-zero reference and shape mismatch are rejected") {
        std::vector<float> z(256, 0.0f);
        CHECK_THROWS_AS(psnr(z, img, 16, 16), std::invalid_argument);
        CHECK_THROWS_AS(psnr(img, z, 32, 32), std::invalid_argument);
    }
    SUBCASE("strictly decreasing with noise amplitude") {
        std::mt19937_64 nrng(7);
        std::normal_distribution<float> nd(0.f, 1.f);
        std::vector<float> noise(img.size());
        for (auto& v : noise) v = nd(nrng);
        double prev = 1e9;
        for (float amp : {0.01f, 0.05f, 0.25f}) {
            auto t = img;
            for (std::size_t i = 0; i < t.size(); ++i) t[i] += amp * noise[i];
            double p = psnr(img, t, 32, 32);
            CHECK(p < prev);
            prev = p;
        }
    }
}

TEST_CASE("ssim") {
    std::mt19937_64 rng(2);
    auto img = random_img(32 * 32, rng, 0.2f, 1.0f);
    SUBCASE("identical images give exactly 100") {
        CHECK(ssim(img, img, 32, 32) == doctest::Approx(100.0).epsilon(1e-12));
    }
    SUBCASE("0 dB SNR noise drops SSIM below 50") {
        std::mt19937_64 nrng(3);
        double power = 0;
        for (auto v : img) power += v * v;
        std::normal_distribution<float> nd(0.f, static_cast<float>(std::sqrt(power / img.size())));
        auto t = img;
        for (auto& v : t) v += nd(nrng);
        CHECK(ssim(img, t, 32, 32) < 50.0);
    }
    SUBCASE("matches brute-force oracle to 1e-6") {
        for (int trial = 0; trial < 3; ++trial) {
            auto r = random_img(20 * 24, rng, 0.0f, 1.0f);
            auto t = random_img(20 * 24, rng, 0.0f, 1.0f);
            double range = *std::max_element(r.begin(), r.end());
            CHECK(ssim(r, t, 20, 24) == doctest::Approx(ssim_oracle(r, t, 20, 24, range)).epsilon(1e-6));
        }
    }
    SUBCASE("symmetric in fixed-range mode") {
        auto r = random_img(16 * 16, rng);
        auto t = random_img(16 * 16, rng);
        CHECK(ssim(r, t, 16, 16, 1.0) == doctest::Approx(ssim(t, r, 16, 16, 1.0)).epsilon(1e-12));
    }
    SUBCASE("window larger than image is rejected") {
        std::vector<float> small(8 * 8, 0.5f);
        CHECK_THROWS_AS(ssim(small, small, 8, 8), std::invalid_argument);
    }
}

TEST_CASE("mse100") {
    SUBCASE("identical gives 0") {
        std::vector<float> r(64, 0.3f);
        CHECK(mse100(r, r, 8, 8) == 0.0);
    }
    SUBCASE("closed form: 0 vs 0.1") {
        std::vector<float> r(64, 0.0f), t(64, 0.1f);
        CHECK(mse100(r, t, 8, 8) == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("psnr-mse identity to 1e-9") {
        std::mt19937_64 rng(4);
        for (int trial = 0; trial < 10; ++trial) {
            auto r = random_img(16 * 16, rng, 0.1f, 1.0f);
            auto t = random_img(16 * 16, rng, 0.1f, 1.0f);
            double peak = *std::max_element(r.begin(), r.end());
            double lhs = psnr(r, t, 16, 16);
            double rhs = 10.0 * std::log10(100.0 * peak * peak / mse100(r, t, 16, 16));
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
        }
    }
}
