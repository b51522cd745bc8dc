#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "ssmri/kspace.hpp"

namespace ssmri::ks {

namespace {

using Cd = std::complex<double>;
using MatX = Eigen::MatrixXcd;

// Centered orthonormal 1-D DFT along the width axis of one row.
void dft1c_row(std::vector<Cd>& row, bool inverse) {
    const int n = static_cast<int>(row.size());
    const int c = n / 2;
    std::vector<Cd> shifted(n), out(n);
    for (int i = 0; i < n; ++i) shifted[i] = row[(i + c) % n];
    const double sgn = inverse ? 1.0 : -1.0;
    for (int k = 0; k < n; ++k) {
        Cd acc(0, 0);
        for (int m = 0; m < n; ++m) {
            const double ph = sgn * 2.0 * M_PI * k * m / n;
            acc += shifted[m] * Cd(std::cos(ph), std::sin(ph));
        }
        out[k] = acc / std::sqrt(static_cast<double>(n));
    }
    for (int k = 0; k < n; ++k) row[(k + c) % n] = out[k];
}

} // namespace

SensitivityMaps estimate_sensitivities_espirit(const KSpace& calib, int calib_h, int calib_w,
                                               int kernel_h, int kernel_w, double sv_threshold,
                                               double eig_threshold) {
    const int nc = calib.coils, H = calib.h, W = calib.w;
    if (calib_h > H || calib_w > W)
        throw std::invalid_argument("espirit: calibration region exceeds k-space extent");
    if (calib_h < kernel_h + 7 || calib_w < kernel_w + 7)
        throw std::invalid_argument("espirit: calibration region " + std::to_string(calib_h) + "x" +
                                    std::to_string(calib_w) + " too small for kernel " +
                                    std::to_string(kernel_h) + "x" + std::to_string(kernel_w));

    SensitivityMaps maps(nc, H, W);
    maps.kind = SensKind::Estimated;
    if (nc == 1) {
        // trivial subspace: unit map everywhere
        for (auto& s : maps.v) s = {1.0f, 0.0f};
        return maps;
    }

    const int y0 = H / 2 - calib_h / 2, x0 = W / 2 - calib_w / 2;
    const int wy = calib_h - kernel_h + 1, wx = calib_w - kernel_w + 1;
    const int ncols = nc * kernel_h * kernel_w;

    MatX hankel(wy * wx, ncols);
    for (int ry = 0; ry < wy; ++ry)
        for (int rx = 0; rx < wx; ++rx)
            for (int c = 0; c < nc; ++c)
                for (int ky = 0; ky < kernel_h; ++ky)
                    for (int kx = 0; kx < kernel_w; ++kx) {
                        const auto z = calib.at(c, y0 + ry + ky, x0 + rx + kx);
                        hankel(ry * wx + rx, (c * kernel_h + ky) * kernel_w + kx) =
                            Cd(z.real(), z.imag());
                    }

    Eigen::JacobiSVD<MatX> svd(hankel, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) <= 0.0) throw std::runtime_error("espirit: degenerate SVD of calibration matrix");
    int nk = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) >= sv_threshold * sv(0)) ++nk;
    if (nk == 0) throw std::runtime_error("espirit: no calibration kernels above threshold");

    // Image-domain filters: F_i,c = sqrt(HW / (kh*kw)) * fft2c(embed(conj(v_i[c])))
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    std::vector<std::vector<Cd>> filters(static_cast<std::size_t>(nk) * nc);
    const double scale = std::sqrt(static_cast<double>(H) * W / (kernel_h * kernel_w));
    {
        CoilStack<double> embedded(1, H, W);
        const int ey = H / 2 - kernel_h / 2, ex = W / 2 - kernel_w / 2;
        for (int i = 0; i < nk; ++i)
            for (int c = 0; c < nc; ++c) {
                std::fill(embedded.v.begin(), embedded.v.end(), Cd(0, 0));
                for (int ky = 0; ky < kernel_h; ++ky)
                    for (int kx = 0; kx < kernel_w; ++kx)
                        embedded.at(0, ey + ky, ex + kx) =
                            svd.matrixV()((c * kernel_h + ky) * kernel_w + kx, i);
                auto img = fft2c(embedded);
                auto& f = filters[static_cast<std::size_t>(i) * nc + c];
                f.resize(hw);
                for (std::size_t p = 0; p < hw; ++p) f[p] = img.v[p] * scale;
            }
    }

    // Per-pixel M = sum_i f_i f_i^H; the top eigenvector (eigenvalue ~1 on
    // the object support) is the conjugate sensitivity vector.
    Eigen::SelfAdjointEigenSolver<MatX> eig;
    MatX M(nc, nc);
    Eigen::VectorXcd fi(nc);
    for (std::size_t p = 0; p < hw; ++p) {
        M.setZero();
        for (int i = 0; i < nk; ++i) {
            for (int c = 0; c < nc; ++c) fi(c) = filters[static_cast<std::size_t>(i) * nc + c][p];
            M.noalias() += fi * fi.adjoint();
        }
        eig.compute(M);
        const double top = eig.eigenvalues()(nc - 1);
        if (top < eig_threshold) continue;
        Eigen::VectorXcd m = eig.eigenvectors().col(nc - 1).conjugate();
        // coil 1 real-nonnegative
        const Cd m0 = m(0);
        if (std::abs(m0) > 0) m *= std::conj(m0) / std::abs(m0);
        for (int c = 0; c < nc; ++c)
            maps.v[static_cast<std::size_t>(c) * hw + p] =
                std::complex<float>(static_cast<float>(m(c).real()), static_cast<float>(m(c).imag()));
    }
    return maps;
}

KSpace gcc_compress(const KSpace& k, int n_out) {
    const int nc = k.coils, H = k.h, W = k.w;
    if (n_out < 1 || n_out > nc)
        throw std::invalid_argument("gcc_compress: n_out " + std::to_string(n_out) +
                                    " out of range [1, " + std::to_string(nc) + "]");

    // hybrid space: inverse DFT along the readout (width) axis only
    std::vector<Cd> hybrid(static_cast<std::size_t>(nc) * H * W);
    {
        std::vector<Cd> row(W);
        for (int c = 0; c < nc; ++c)
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const auto z = k.at(c, y, x);
                    row[x] = Cd(z.real(), z.imag());
                }
                dft1c_row(row, true);
                for (int x = 0; x < W; ++x)
                    hybrid[(static_cast<std::size_t>(c) * H + y) * W + x] = row[x];
            }
    }

    // per-readout-position SVD with Procrustes alignment to the previous one
    std::vector<MatX> proj(W);
    MatX prev;
    for (int x = 0; x < W; ++x) {
        MatX D(H, nc);
        for (int y = 0; y < H; ++y)
            for (int c = 0; c < nc; ++c) D(y, c) = hybrid[(static_cast<std::size_t>(c) * H + y) * W + x];
        Eigen::JacobiSVD<MatX> svd(D, Eigen::ComputeThinV);
        MatX A = svd.matrixV().leftCols(n_out);
        if (x > 0) {
            Eigen::JacobiSVD<MatX> ps(A.adjoint() * prev, Eigen::ComputeFullU | Eigen::ComputeFullV);
            A = A * (ps.matrixU() * ps.matrixV().adjoint());
        }
        proj[x] = A;
        prev = A;
    }

    // project and DFT back along the readout
    KSpace out(n_out, H, W);
    std::vector<Cd> row(W);
    for (int co = 0; co < n_out; ++co)
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                Cd acc(0, 0);
                // rows of the hybrid matrix live in the span of the
                // conjugated right singular vectors, so project with the
                // transpose rather than the adjoint
                for (int c = 0; c < nc; ++c)
                    acc += proj[x](c, co) * hybrid[(static_cast<std::size_t>(c) * H + y) * W + x];
                row[x] = acc;
            }
            dft1c_row(row, false);
            for (int x = 0; x < W; ++x)
                out.at(co, y, x) = std::complex<float>(static_cast<float>(row[x].real()),
                                                       static_cast<float>(row[x].imag()));
        }
    return out;
}

} // namespace ssmri::ks
