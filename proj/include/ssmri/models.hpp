#pragma once

// Residual generator and patch discriminator at configurable scale, plus the
// SSCK1 named-tensor checkpoint format used by the training pipeline.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmri/rng.hpp"
#include "ssmri/tensor.hpp"

namespace ssmri::models {

using ad::NodePtr;
using ad::Shape;
using ad::Tape;

struct GeneratorConfig {
    int in_channels = 2;  // real/imag of the coil-combined source
    int out_channels = 2;
    int base_width = 64;
    int n_resblocks = 9;
    int n_down = 2;
    ad::PadMode pad = ad::PadMode::Zero;

    static GeneratorConfig paper() { return {}; }
    static GeneratorConfig desk() {
        GeneratorConfig c;
        c.base_width = 16;
        c.n_resblocks = 3;
        return c;
    }

    void validate() const {
        if (n_resblocks < 1) throw std::invalid_argument("GeneratorConfig: n_resblocks must be >= 1");
        if (base_width < 4) throw std::invalid_argument("GeneratorConfig: base_width must be >= 4");
        if (n_down < 0) throw std::invalid_argument("GeneratorConfig: n_down must be >= 0");
        if (in_channels < 1 || out_channels < 1)
            throw std::invalid_argument("GeneratorConfig: channel counts must be >= 1");
    }
};

struct DiscriminatorConfig {
    int in_channels = 2;
    int n_layers = 5;
    int base_width = 64;

    static DiscriminatorConfig paper() { return {}; }
    static DiscriminatorConfig desk() {
        DiscriminatorConfig c;
        c.base_width = 16;
        return c;
    }

    void validate() const {
        if (n_layers < 2) throw std::invalid_argument("DiscriminatorConfig: n_layers must be >= 2");
        if (base_width < 4) throw std::invalid_argument("DiscriminatorConfig: base_width must be >= 4");
        if (in_channels < 1) throw std::invalid_argument("DiscriminatorConfig: in_channels must be >= 1");
    }
};

template <typename T>
struct NamedParam {
    std::string name;
    NodePtr<T> p;
};

namespace detail {

template <typename T>
NodePtr<T> init_weight(const Shape& shape, rng::Stream& rs, double sigma, std::string name,
                       std::vector<NamedParam<T>>& reg) {
    std::vector<T> v(static_cast<std::size_t>(ad::numel_of(shape)));
    for (auto& x : v) x = static_cast<T>(sigma * rs.next_normal());
    auto n = ad::make_leaf<T>(shape, std::move(v), true, name);
    reg.push_back({std::move(name), n});
    return n;
}

template <typename T>
NodePtr<T> init_bias(std::int64_t ch, std::string name, std::vector<NamedParam<T>>& reg) {
    auto n = ad::make_full<T>(Shape{ch}, T(0), true);
    n->name = name;
    reg.push_back({std::move(name), n});
    return n;
}

} // namespace detail

// Encoder c7s1 + n_down stride-2 convs, n_resblocks residual blocks, mirrored
// decoder with transpose convs, final c7s1 into tanh. Instance norm carries no
// learned scale/shift, so the parameter list is exactly the conv weights and
// biases in declaration order.
template <typename T>
class Generator {
  public:
    explicit Generator(const GeneratorConfig& cfg, std::uint64_t init_seed = 1)
        : cfg_(cfg) {
        cfg_.validate();
        rng::Stream rs(init_seed);
        const double sigma = 0.02;
        // Convs feeding an instance norm carry no bias: the norm subtracts the
        // per-plane mean, so such a bias would never receive gradient.
        auto conv = [&](const std::string& name, int co, int ci, int k) {
            detail::init_weight<T>(Shape{co, ci, k, k}, rs, sigma, name + ".w", params_);
        };
        int w = cfg_.base_width;
        conv("enc0", w, cfg_.in_channels, 7);
        for (int i = 1; i <= cfg_.n_down; ++i, w *= 2) conv("enc" + std::to_string(i), 2 * w, w, 4);
        for (int j = 0; j < cfg_.n_resblocks; ++j) {
            conv("res" + std::to_string(j) + ".0", w, w, 3);
            conv("res" + std::to_string(j) + ".1", w, w, 3);
        }
        for (int i = 0; i < cfg_.n_down; ++i, w /= 2)
            // conv_transpose2d weights are laid out [Cin, Cout, kH, kW]
            detail::init_weight<T>(Shape{w, w / 2, 4, 4}, rs, sigma,
                                   "dec" + std::to_string(i) + ".w", params_);
        detail::init_weight<T>(Shape{cfg_.out_channels, w, 7, 7}, rs, sigma, "out.w", params_);
        detail::init_bias<T>(cfg_.out_channels, "out.b", params_);
    }

    NodePtr<T> forward(Tape<T>& tape, const NodePtr<T>& x) const {
        if (x->shape.size() != 4 || x->shape[1] != cfg_.in_channels)
            throw std::invalid_argument("Generator: expected [N," + std::to_string(cfg_.in_channels) +
                                        ",H,W], got " + ad::shape_str(x->shape));
        const std::int64_t div = std::int64_t(1) << cfg_.n_down;
        if (x->shape[2] % div != 0 || x->shape[3] % div != 0)
            throw std::invalid_argument("Generator: spatial size " + std::to_string(x->shape[2]) +
                                        "x" + std::to_string(x->shape[3]) + " not divisible by " +
                                        std::to_string(div));
        std::size_t pi = 0;
        auto next = [&]() -> const NodePtr<T>& { return params_[pi++].p; };
        auto in_relu = [&](const NodePtr<T>& h) {
            return ad::relu(tape, ad::instance_norm(tape, h, T(1e-5)));
        };

        auto h = in_relu(ad::conv2d(tape, x, next(), nullptr, 1, 3, cfg_.pad));
        for (int i = 1; i <= cfg_.n_down; ++i)
            h = in_relu(ad::conv2d(tape, h, next(), nullptr, 2, 1, cfg_.pad));
        for (int j = 0; j < cfg_.n_resblocks; ++j) {
            auto r = in_relu(ad::conv2d(tape, h, next(), nullptr, 1, 1, cfg_.pad));
            r = ad::instance_norm(tape, ad::conv2d(tape, r, next(), nullptr, 1, 1, cfg_.pad), T(1e-5));
            h = ad::add(tape, h, r);
        }
        for (int i = 0; i < cfg_.n_down; ++i)
            h = in_relu(ad::conv_transpose2d(tape, h, next(), nullptr, 2, 1));
        const NodePtr<T>&wo = next(), &bo = next();
        return ad::tanh_op(tape, ad::conv2d(tape, h, wo, bo, 1, 3, cfg_.pad));
    }

    const GeneratorConfig& config() const { return cfg_; }
    std::vector<NamedParam<T>>& params() { return params_; }
    const std::vector<NamedParam<T>>& params() const { return params_; }

    NodePtr<T> param(const std::string& name) const {
        for (const auto& np : params_)
            if (np.name == name) return np.p;
        throw std::invalid_argument("Generator: no parameter named " + name);
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& np : params_) n += np.p->numel();
        return n;
    }

  private:
    GeneratorConfig cfg_;
    std::vector<NamedParam<T>> params_;
};

// Patch discriminator: n_layers 4x4 convs, stride 2 on the first three,
// leaky-ReLU(0.2) everywhere but the final 1-channel score layer, instance
// norm on the middle layers. No global pooling -- the output is a score map.
template <typename T>
class Discriminator {
  public:
    explicit Discriminator(const DiscriminatorConfig& cfg, std::uint64_t init_seed = 2)
        : cfg_(cfg) {
        cfg_.validate();
        rng::Stream rs(init_seed);
        const double sigma = 0.02;
        int ci = cfg_.in_channels;
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const int co = l == cfg_.n_layers - 1 ? 1 : cfg_.base_width * (1 << std::min(l, 3));
            const std::string name = "d" + std::to_string(l);
            detail::init_weight<T>(Shape{co, ci, 4, 4}, rs, sigma, name + ".w", params_);
            // middle layers feed an instance norm, which would zero out any
            // bias gradient; only the first and last layers keep a bias
            if (l == 0 || l == cfg_.n_layers - 1) detail::init_bias<T>(co, name + ".b", params_);
            ci = co;
        }
    }

    NodePtr<T> forward(Tape<T>& tape, const NodePtr<T>& x) const {
        if (x->shape.size() != 4 || x->shape[1] != cfg_.in_channels)
            throw std::invalid_argument("Discriminator: expected [N," +
                                        std::to_string(cfg_.in_channels) + ",H,W], got " +
                                        ad::shape_str(x->shape));
        auto h = x;
        std::size_t pi = 0;
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::int64_t stride = l < std::min(3, cfg_.n_layers - 2) ? 2 : 1;
            if (h->shape[2] + 2 < 4 || h->shape[3] + 2 < 4)
                throw std::invalid_argument("Discriminator: input too small at layer " +
                                            std::to_string(l) + " (" + ad::shape_str(h->shape) + ")");
            const NodePtr<T>& w = params_[pi++].p;
            const bool has_bias = l == 0 || l == cfg_.n_layers - 1;
            const NodePtr<T> b = has_bias ? params_[pi++].p : nullptr;
            h = ad::conv2d(tape, h, w, b, stride, 1);
            if (l == cfg_.n_layers - 1) break;
            if (l > 0) h = ad::instance_norm(tape, h, T(1e-5));
            h = ad::leaky_relu(tape, h, T(0.2));
        }
        return h;
    }

    const DiscriminatorConfig& config() const { return cfg_; }
    std::vector<NamedParam<T>>& params() { return params_; }
    const std::vector<NamedParam<T>>& params() const { return params_; }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& np : params_) n += np.p->numel();
        return n;
    }

  private:
    DiscriminatorConfig cfg_;
    std::vector<NamedParam<T>> params_;
};

// ---- SSCK1 checkpoints ----
//
// magic "SSCK1\0", u32 config-echo length + bytes, u32 tensor count, then per
// tensor: u32 name length, name bytes, u8 rank, u32 dims, float32 data.
// Everything little-endian.

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::string config_echo;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies model parameters into / out of a checkpoint tensor list. Loading
// requires an exact name/shape match and throws on any mismatch.
void append_params(Checkpoint& ckpt, const std::vector<NamedParam<float>>& params,
                   const std::string& prefix = {});
void restore_params(const Checkpoint& ckpt, std::vector<NamedParam<float>>& params,
                    const std::string& prefix = {});

} // namespace ssmri::models
