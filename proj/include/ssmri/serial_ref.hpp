#pragma once

// Plain serial reference kernels. Kept deliberately naive; tests compare the
// OpenMP kernels in tensor.hpp against these, and bench_kernels times both.

#include <cstdint>
#include <vector>

namespace ssmri::ref {

// Cross-correlation on already-padded NCHW input.
void conv_forward_serial(const double* in, const double* w, const double* bias, double* out,
                         std::int64_t N, std::int64_t Ci, std::int64_t H, std::int64_t W,
                         std::int64_t Co, std::int64_t kH, std::int64_t kW, std::int64_t stride,
                         std::int64_t Ho, std::int64_t Wo);

void instance_norm_serial(const double* in, double* out, std::int64_t NC, std::int64_t HW,
                          double eps);

// Unnormalized centered 2-D DFT by direct O(N^2) summation, DC at
// (H/2, W/2); inverse flag conjugates the exponent. Orthonormal scaling.
void dft2c_serial(const double* re_in, const double* im_in, double* re_out, double* im_out, int H,
                  int W, bool inverse);

} // namespace ssmri::ref
