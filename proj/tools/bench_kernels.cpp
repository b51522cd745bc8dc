// Compares the OpenMP-parallel conv/instance-norm kernels used in training
// against the serial reference implementations, checking agreement and
// reporting throughput for both.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ssmri/rng.hpp"
#include "ssmri/serial_ref.hpp"
#include "ssmri/tensor.hpp"

using namespace ssmri;

namespace {

double now_ms() {
    using clk = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clk::now().time_since_epoch()).count();
}

std::vector<double> random_vec(std::size_t n, rng::Stream& rs) {
    std::vector<double> v(n);
    for (auto& x : v) x = rs.next_normal();
    return v;
}

template <typename F>
double time_best_of(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now_ms();
        f();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

void bench_conv(int Ci, int Co, int H, int W, int k) {
    rng::Stream rs(1);
    // the parallel path pads internally; feed the serial reference the same
    // padded input so both compute the identical stride-1 convolution
    const int pad = (k - 1) / 2;
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    const int Ho = Hp - k + 1, Wo = Wp - k + 1;

    auto in = random_vec(std::size_t(Ci) * H * W, rs);
    auto w = random_vec(std::size_t(Co) * Ci * k * k, rs);
    std::vector<double> padded(std::size_t(Ci) * Hp * Wp, 0.0);
    for (int c = 0; c < Ci; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                padded[(std::size_t(c) * Hp + y + pad) * Wp + x + pad] =
                    in[(std::size_t(c) * H + y) * W + x];

    std::vector<double> ref_out(std::size_t(Co) * Ho * Wo);
    const double t_serial = time_best_of(3, [&] {
        ref::conv_forward_serial(padded.data(), w.data(), nullptr, ref_out.data(), 1, Ci, Hp, Wp,
                                 Co, k, k, 1, Ho, Wo);
    });

    auto xin = ad::make_leaf<double>(ad::Shape{1, Ci, H, W}, in);
    auto wn = ad::make_leaf<double>(ad::Shape{Co, Ci, k, k}, w);
    ad::NodePtr<double> out;
    const double t_parallel = time_best_of(3, [&] {
        ad::Tape<double> tape;
        out = ad::conv2d(tape, xin, wn, nullptr, 1, pad);
    });

    double worst = 0;
    for (std::size_t i = 0; i < ref_out.size(); ++i)
        worst = std::max(worst, std::abs(ref_out[i] - out->value[i]));

    std::printf("conv %3dx%-3d %dx%d k%d   serial %8.2f ms   parallel %8.2f ms   x%.2f   max|d| %.2e\n",
                Ci, Co, H, W, k, t_serial, t_parallel, t_serial / t_parallel, worst);
}

void bench_instance_norm(int C, int H, int W) {
    rng::Stream rs(2);
    auto in = random_vec(std::size_t(C) * H * W, rs);
    std::vector<double> ref_out(in.size());
    const double t_serial = time_best_of(5, [&] {
        ref::instance_norm_serial(in.data(), ref_out.data(), C, std::int64_t(H) * W, 1e-5);
    });

    auto xin = ad::make_leaf<double>(ad::Shape{1, C, H, W}, in);
    ad::NodePtr<double> out;
    const double t_parallel = time_best_of(5, [&] {
        ad::Tape<double> tape;
        out = ad::instance_norm(tape, xin, 1e-5);
    });

    double worst = 0;
    for (std::size_t i = 0; i < ref_out.size(); ++i)
        worst = std::max(worst, std::abs(ref_out[i] - out->value[i]));

    std::printf("inorm %4d    %dx%d      serial %8.2f ms   parallel %8.2f ms   x%.2f   max|d| %.2e\n",
                C, H, W, t_serial, t_parallel, t_serial / t_parallel, worst);
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled (serial build)\n");
#endif
    bench_conv(16, 16, 64, 64, 3);
    bench_conv(32, 32, 64, 64, 3);
    bench_conv(2, 64, 128, 128, 7);
    bench_conv(64, 64, 32, 32, 4);
    bench_instance_norm(64, 64, 64);
    bench_instance_norm(128, 128, 128);
    return 0;
}
