#include "ssmri/serial_ref.hpp"

#include <cmath>

namespace ssmri::ref {

void conv_forward_serial(const double* in, const double* w, const double* bias, double* out,
                         std::int64_t N, std::int64_t Ci, std::int64_t H, std::int64_t W,
                         std::int64_t Co, std::int64_t kH, std::int64_t kW, std::int64_t stride,
                         std::int64_t Ho, std::int64_t Wo) {
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = bias ? bias[co] : 0.0;
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t kh = 0; kh < kH; ++kh)
                            for (std::int64_t kw = 0; kw < kW; ++kw)
                                acc += in[((n * Ci + ci) * H + oh * stride + kh) * W + ow * stride + kw] *
                                       w[((co * Ci + ci) * kH + kh) * kW + kw];
                    out[((n * Co + co) * Ho + oh) * Wo + ow] = acc;
                }
}

void instance_norm_serial(const double* in, double* out, std::int64_t NC, std::int64_t HW,
                          double eps) {
    for (std::int64_t s = 0; s < NC; ++s) {
        const double* x = in + s * HW;
        double* y = out + s * HW;
        double m = 0.0;
        for (std::int64_t i = 0; i < HW; ++i) m += x[i];
        m /= static_cast<double>(HW);
        double v = 0.0;
        for (std::int64_t i = 0; i < HW; ++i) v += (x[i] - m) * (x[i] - m);
        v /= static_cast<double>(HW);
        const double is = 1.0 / std::sqrt(v + eps);
        for (std::int64_t i = 0; i < HW; ++i) y[i] = (x[i] - m) * is;
    }
}

void dft2c_serial(const double* re_in, const double* im_in, double* re_out, double* im_out, int H,
                  int W, bool inverse) {
    const double sgn = inverse ? 1.0 : -1.0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(H) * W);
    const int ch = H / 2, cw = W / 2;
    for (int ku = 0; ku < H; ++ku)
        for (int kv = 0; kv < W; ++kv) {
            double ar = 0.0, ai = 0.0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double ph = sgn * 2.0 * M_PI *
                                      (static_cast<double>((ku - ch) * (y - ch)) / H +
                                       static_cast<double>((kv - cw) * (x - cw)) / W);
                    const double c = std::cos(ph), s = std::sin(ph);
                    const double xr = re_in[y * W + x], xi = im_in[y * W + x];
                    ar += xr * c - xi * s;
                    ai += xr * s + xi * c;
                }
            re_out[ku * W + kv] = ar * scale;
            im_out[ku * W + kv] = ai * scale;
        }
}

} // namespace ssmri::ref
