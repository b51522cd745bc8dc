#pragma once

// Selective multi-coil tensor losses (image, k-space, adversarial) and
// their nonselective counterparts, plus the differentiable k-space chain
// (coil projection -> FFT -> mask -> inverse FFT) they are evaluated on.

#include <cmath>
#include <stdexcept>

#include "ssmri/kspace.hpp"
#include "ssmri/tensor.hpp"

namespace ssmri::losses {

using ad::NodePtr;
using ad::Shape;
using ad::Tape;

struct LossWeights {
    double lambda_i = 100.0;
    double lambda_k = 3000.0;
    double lambda_a = 1.0;
    double beta = 5000.0; // k-space tanh normalization constant

    void validate() const {
        if (lambda_i < 0 || lambda_k < 0 || lambda_a < 0)
            throw std::invalid_argument("loss weights must be >= 0");
        if (beta <= 0) throw std::invalid_argument("beta must be > 0");
    }
};

struct LossReport {
    double l_i = 0, l_k = 0, l_a_gen = 0, l_a_disc = 0, l_total = 0;
};

// ---- conversions between coil stacks and [C,2,H,W] nodes ----

template <typename T, typename U>
NodePtr<T> stack_to_node(const ks::CoilStack<U>& s, bool requires_grad = false) {
    const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
    std::vector<T> data(static_cast<std::size_t>(s.coils * 2 * hw));
    for (int c = 0; c < s.coils; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            data[static_cast<std::size_t>((c * 2 + 0) * hw + i)] = static_cast<T>(s.v[c * hw + i].real());
            data[static_cast<std::size_t>((c * 2 + 1) * hw + i)] = static_cast<T>(s.v[c * hw + i].imag());
        }
    return ad::make_leaf<T>(Shape{s.coils, 2, s.h, s.w}, std::move(data), requires_grad);
}

template <typename T, typename U>
NodePtr<T> image_to_node(const ks::CImage<U>& img, bool requires_grad = false) {
    const std::int64_t hw = static_cast<std::int64_t>(img.h) * img.w;
    std::vector<T> data(static_cast<std::size_t>(2 * hw));
    for (std::int64_t i = 0; i < hw; ++i) {
        data[static_cast<std::size_t>(i)] = static_cast<T>(img.v[i].real());
        data[static_cast<std::size_t>(hw + i)] = static_cast<T>(img.v[i].imag());
    }
    return ad::make_leaf<T>(Shape{1, 2, img.h, img.w}, std::move(data), requires_grad);
}

template <typename T>
ks::CoilStack<T> node_to_stack(const NodePtr<T>& n) {
    if (n->shape.size() != 4 || n->shape[1] != 2)
        throw std::invalid_argument("node_to_stack: expected [C,2,H,W], got " + ad::shape_str(n->shape));
    const int C = static_cast<int>(n->shape[0]), H = static_cast<int>(n->shape[2]),
              W = static_cast<int>(n->shape[3]);
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    ks::CoilStack<T> s(C, H, W);
    for (int c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < hw; ++i)
            s.v[c * hw + i] = {n->value[static_cast<std::size_t>((c * 2 + 0) * hw + i)],
                               n->value[static_cast<std::size_t>((c * 2 + 1) * hw + i)]};
    return s;
}

// ---- differentiable k-space chain ----

// Centered orthonormal FFT over each coil of a [C,2,H,W] node. Linear and
// unitary, so the backward rule is the opposite transform.
template <typename T>
NodePtr<T> fft2c_node(Tape<T>& tape, const NodePtr<T>& x, bool inverse = false) {
    if (x->shape.size() != 4 || x->shape[1] != 2)
        throw std::invalid_argument("fft2c_node: expected [C,2,H,W], got " + ad::shape_str(x->shape));
    const int C = static_cast<int>(x->shape[0]), H = static_cast<int>(x->shape[2]),
              W = static_cast<int>(x->shape[3]);
    auto out = Tape<T>::alloc(x->shape, x->requires_grad);
    ks::fft2c_planar<T>(x->value.data(), out->value.data(), C, H, W, inverse);
    if (out->requires_grad)
        tape.push(out, [x, out, C, H, W, inverse]() {
            x->ensure_grad();
            std::vector<T> g(x->value.size());
            ks::fft2c_planar<T>(out->grad.data(), g.data(), C, H, W, !inverse);
            for (std::size_t i = 0; i < g.size(); ++i) x->grad[i] += g[i];
        });
    return out;
}

template <typename T>
NodePtr<T> ifft2c_node(Tape<T>& tape, const NodePtr<T>& x) {
    return fft2c_node(tape, x, true);
}

// Element-wise binary masking of every coil and channel.
template <typename T>
NodePtr<T> mask_mul_node(Tape<T>& tape, const NodePtr<T>& x, const ks::SamplingMask& mask) {
    if (x->shape.size() != 4 || x->shape[1] != 2 || x->shape[2] != mask.h || x->shape[3] != mask.w)
        throw std::invalid_argument("mask_mul_node: node " + ad::shape_str(x->shape) +
                                    " vs mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w));
    const std::int64_t planes = x->shape[0] * 2;
    const std::int64_t hw = x->shape[2] * x->shape[3];
    auto m = std::make_shared<std::vector<std::uint8_t>>(mask.m);
    auto out = Tape<T>::alloc(x->shape, x->requires_grad);
    for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < hw; ++i)
            out->value[p * hw + i] = (*m)[static_cast<std::size_t>(i)] ? x->value[p * hw + i] : T(0);
    if (out->requires_grad)
        tape.push(out, [x, out, m, planes, hw]() {
            x->ensure_grad();
            for (std::int64_t p = 0; p < planes; ++p)
                for (std::int64_t i = 0; i < hw; ++i)
                    if ((*m)[static_cast<std::size_t>(i)]) x->grad[p * hw + i] += out->grad[p * hw + i];
        });
    return out;
}

// Complex multiply of a [1,2,H,W] image node by fixed per-coil sensitivity
// fields -> [C,2,H,W]. Backward applies conjugated fields and sums coils.
template <typename T, typename U>
NodePtr<T> coil_project_node(Tape<T>& tape, const NodePtr<T>& y, const ks::SensMaps<U>& sens) {
    if (y->shape.size() != 4 || y->shape[0] != 1 || y->shape[1] != 2 || y->shape[2] != sens.h ||
        y->shape[3] != sens.w)
        throw std::invalid_argument("coil_project_node: image " + ad::shape_str(y->shape) +
                                    " vs maps " + std::to_string(sens.h) + "x" + std::to_string(sens.w));
    const int C = sens.coils;
    const std::int64_t hw = static_cast<std::int64_t>(sens.h) * sens.w;
    auto sr = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C) * hw);
    auto si = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C) * hw);
    for (int c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            (*sr)[c * hw + i] = static_cast<T>(sens.v[c * hw + i].real());
            (*si)[c * hw + i] = static_cast<T>(sens.v[c * hw + i].imag());
        }
    auto out = Tape<T>::alloc(Shape{C, 2, sens.h, sens.w}, y->requires_grad);
    const T* yr = y->value.data();
    const T* yi = y->value.data() + hw;
    for (int c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            const T a = (*sr)[c * hw + i], b = (*si)[c * hw + i];
            out->value[(c * 2 + 0) * hw + i] = yr[i] * a - yi[i] * b;
            out->value[(c * 2 + 1) * hw + i] = yr[i] * b + yi[i] * a;
        }
    if (out->requires_grad)
        tape.push(out, [y, out, sr, si, C, hw]() {
            y->ensure_grad();
            T* gyr = y->grad.data();
            T* gyi = y->grad.data() + hw;
            for (int c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T a = (*sr)[c * hw + i], b = (*si)[c * hw + i];
                    const T gr = out->grad[(c * 2 + 0) * hw + i];
                    const T gi = out->grad[(c * 2 + 1) * hw + i];
                    // adjoint of complex multiply: conj(s) * g
                    gyr[i] += a * gr + b * gi;
                    gyi[i] += a * gi - b * gr;
                }
        });
    return out;
}

// Generator output [1,2,H,W] -> masked per-coil image domain [C,2,H,W]:
// ifft2c(mask * fft2c(coil_project(y, sens))).
template <typename T, typename U>
NodePtr<T> project_to_masked_coils(Tape<T>& tape, const NodePtr<T>& y, const ks::SensMaps<U>& sens,
                                   const ks::SamplingMask& mask) {
    auto coils = coil_project_node(tape, y, sens);
    auto k = fft2c_node(tape, coils);
    auto km = mask_mul_node(tape, k, mask);
    return ifft2c_node(tape, km);
}

// ---- loss terms ----

enum class ComplexL1 { Modulus, Split };

// Mean |difference| over coils and pixels of two [C,2,H,W] stacks.
template <typename T>
NodePtr<T> selective_image_loss(Tape<T>& tape, const NodePtr<T>& synth, const NodePtr<T>& acquired,
                                ComplexL1 mode = ComplexL1::Modulus) {
    ad::detail::check_same_shape(synth, acquired, "selective_image_loss");
    auto diff = ad::sub(tape, synth, acquired);
    if (mode == ComplexL1::Modulus) return ad::mean(tape, ad::complex_abs(tape, diff));
    return ad::mean(tape, ad::abs_op(tape, diff));
}

// Mean |tanh(k_synth / beta) - tanh(k_acq / beta)| over coils and
// frequencies; tanh acts separately on real and imaginary parts. Inputs are
// the Omega-masked image-domain stacks; the FFT is applied here.
template <typename T>
NodePtr<T> selective_kspace_loss(Tape<T>& tape, const NodePtr<T>& synth, const NodePtr<T>& acquired,
                                 T beta, ComplexL1 mode = ComplexL1::Modulus) {
    ad::detail::check_same_shape(synth, acquired, "selective_kspace_loss");
    if (beta <= T(0)) throw std::invalid_argument("selective_kspace_loss: beta must be > 0");
    auto ks_s = fft2c_node(tape, synth);
    auto ks_a = fft2c_node(tape, acquired);
    auto ts = ad::tanh_op(tape, ad::scalar_mul(tape, ks_s, T(1) / beta));
    auto ta = ad::tanh_op(tape, ad::scalar_mul(tape, ks_a, T(1) / beta));
    auto diff = ad::sub(tape, ts, ta);
    if (mode == ComplexL1::Modulus) return ad::mean(tape, ad::complex_abs(tape, diff));
    return ad::mean(tape, ad::abs_op(tape, diff));
}

// Least-squares adversarial pair on patch score maps.
// disc: mean[(D(real)-1)^2] + mean[D(fake_detached)^2]
// gen:  mean[(D(fake)-1)^2]
template <typename T>
NodePtr<T> lsgan_disc_loss(Tape<T>& tape, const NodePtr<T>& d_real, const NodePtr<T>& d_fake_detached) {
    auto r = ad::scalar_add(tape, d_real, T(-1));
    auto lr = ad::mean(tape, ad::mul(tape, r, r));
    auto lf = ad::mean(tape, ad::mul(tape, d_fake_detached, d_fake_detached));
    return ad::add(tape, lr, lf);
}

template <typename T>
NodePtr<T> lsgan_gen_loss(Tape<T>& tape, const NodePtr<T>& d_fake) {
    auto f = ad::scalar_add(tape, d_fake, T(-1));
    return ad::mean(tape, ad::mul(tape, f, f));
}

// Nonselective variants: the selective formulas evaluated on fully-sampled
// stacks (the all-ones-mask reduction is definitional).
template <typename T>
NodePtr<T> nonselective_image_loss(Tape<T>& tape, const NodePtr<T>& synth, const NodePtr<T>& ref,
                                   ComplexL1 mode = ComplexL1::Modulus) {
    return selective_image_loss(tape, synth, ref, mode);
}

template <typename T>
NodePtr<T> nonselective_kspace_loss(Tape<T>& tape, const NodePtr<T>& synth, const NodePtr<T>& ref,
                                    T beta, ComplexL1 mode = ComplexL1::Modulus) {
    return selective_kspace_loss(tape, synth, ref, beta, mode);
}

// L_ssGAN = lambda_k L_k + lambda_i L_i + lambda_a L_a
template <typename T>
NodePtr<T> total_generator_loss(Tape<T>& tape, const LossWeights& w, const NodePtr<T>& l_i,
                                const NodePtr<T>& l_k, const NodePtr<T>& l_a_gen) {
    w.validate();
    auto wi = ad::scalar_mul(tape, l_i, static_cast<T>(w.lambda_i));
    auto wk = ad::scalar_mul(tape, l_k, static_cast<T>(w.lambda_k));
    auto wa = ad::scalar_mul(tape, l_a_gen, static_cast<T>(w.lambda_a));
    return ad::add(tape, ad::add(tape, wk, wi), wa);
}

} // namespace ssmri::losses
