#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "ssmri/serial_ref.hpp"
#include "ssmri/tensor.hpp"
#include "test_util.hpp"

using namespace ssmri::ad;

namespace {

// Gradient of sum(conv2d(x, w, b)) w.r.t. the chosen leaf, checked by
// central differences through a freshly built graph.
double conv_sum(const std::vector<double>& xv, const std::vector<double>& wv,
                const std::vector<double>& bv, const Shape& xs, const Shape& ws, std::int64_t Co,
                std::int64_t stride, std::int64_t pad, PadMode mode) {
    Tape<double> tape;
    auto x = make_leaf<double>(xs, xv);
    auto w = make_leaf<double>(ws, wv);
    auto b = make_leaf<double>(Shape{Co}, bv);
    auto y = conv2d(tape, x, w, b, stride, pad, mode);
    double acc = 0;
    for (auto v : y->value) acc += v;
    return acc;
}

} // namespace

TEST_CASE("conv2d identity kernel") {
    Tape<double> tape;
    auto x = make_leaf<double>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = make_leaf<double>({1, 1, 1, 1}, {1.0});
    auto b = make_leaf<double>({1}, {0.0});
    auto y = conv2d(tape, x, w, b, 1, 0);
    REQUIRE(y->shape == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y->value[i] == doctest::Approx(x->value[i]));
}

TEST_CASE("conv2d averaging a constant keeps interior at 7") {
    Tape<double> tape;
    auto x = make_full<double>({1, 1, 6, 6}, 7.0);
    auto w = make_full<double>({1, 1, 3, 3}, 1.0 / 9.0);
    auto b = make_leaf<double>({1}, {0.0});
    auto y = conv2d(tape, x, w, b, 1, 1);
    for (int i = 1; i < 5; ++i)
        for (int j = 1; j < 5; ++j) CHECK(y->value[i * 6 + j] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("conv2d shape errors name the offending axes") {
    Tape<double> tape;
    auto x = make_full<double>({1, 2, 4, 4}, 1.0);
    auto w = make_full<double>({1, 3, 3, 3}, 1.0);
    CHECK_THROWS_AS(conv2d(tape, x, w, nullptr, 1, 1), std::invalid_argument);
    auto w2 = make_full<double>({1, 2, 3, 3}, 1.0);
    CHECK_THROWS_AS(conv2d(tape, x, w2, nullptr, 2, 1), std::invalid_argument); // non-integral output
}

TEST_CASE("conv2d matches serial reference kernel") {
    std::mt19937_64 rng(11);
    auto xv = testutil::random_vec(2 * 3 * 8 * 8, rng);
    auto wv = testutil::random_vec(4 * 3 * 3 * 3, rng);
    auto bv = testutil::random_vec(4, rng);
    Tape<double> tape;
    auto x = make_leaf<double>({2, 3, 8, 8}, xv);
    auto w = make_leaf<double>({4, 3, 3, 3}, wv);
    auto b = make_leaf<double>({4}, bv);
    auto y = conv2d(tape, x, w, b, 1, 0);

    std::vector<double> ref(2 * 4 * 6 * 6);
    ssmri::ref::conv_forward_serial(xv.data(), wv.data(), bv.data(), ref.data(), 2, 3, 8, 8, 4, 3,
                                    3, 1, 6, 6);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(y->value[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d gradient vs finite differences") {
    std::mt19937_64 rng(42);
    struct Cfg {
        Shape xs, ws;
        std::int64_t stride, pad;
        PadMode mode;
    };
    for (const Cfg& c : {Cfg{{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 0, PadMode::Zero},
                         Cfg{{1, 2, 6, 6}, {3, 2, 3, 3}, 1, 1, PadMode::Zero},
                         Cfg{{1, 2, 8, 8}, {2, 2, 4, 4}, 2, 1, PadMode::Zero},
                         Cfg{{1, 1, 6, 6}, {2, 1, 3, 3}, 1, 1, PadMode::Reflect}}) {
        auto xv = testutil::random_vec(static_cast<std::size_t>(numel_of(c.xs)), rng);
        auto wv = testutil::random_vec(static_cast<std::size_t>(numel_of(c.ws)), rng);
        auto bv = testutil::random_vec(static_cast<std::size_t>(c.ws[0]), rng);

        Tape<double> tape;
        auto x = make_leaf<double>(c.xs, xv, true);
        auto w = make_leaf<double>(c.ws, wv, true);
        auto b = make_leaf<double>({c.ws[0]}, bv, true);
        auto loss = sum(tape, conv2d(tape, x, w, b, c.stride, c.pad, c.mode));
        tape.backward(loss);

        auto fx = [&](const std::vector<double>& v) {
            return conv_sum(v, wv, bv, c.xs, c.ws, c.ws[0], c.stride, c.pad, c.mode);
        };
        CHECK(testutil::fd_check(fx, xv, x->grad, rng, 24) < 1e-4);
        auto fw = [&](const std::vector<double>& v) {
            return conv_sum(xv, v, bv, c.xs, c.ws, c.ws[0], c.stride, c.pad, c.mode);
        };
        CHECK(testutil::fd_check(fw, wv, w->grad, rng, 24) < 1e-4);
        auto fb = [&](const std::vector<double>& v) {
            return conv_sum(xv, wv, v, c.xs, c.ws, c.ws[0], c.stride, c.pad, c.mode);
        };
        CHECK(testutil::fd_check(fb, bv, b->grad, rng) < 1e-4);
    }
}

TEST_CASE("conv_transpose2d is the exact adjoint of conv2d") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 3; ++trial) {
        const std::int64_t stride = 1 + trial % 2, pad = trial % 2;
        const std::int64_t H = 6, kH = 3 + (trial == 2);
        const std::int64_t Ho = (H + 2 * pad - kH) / stride + 1;
        if ((H + 2 * pad - kH) % stride) continue;

        auto xv = testutil::random_vec(static_cast<std::size_t>(2 * H * H), rng);
        auto yv = testutil::random_vec(static_cast<std::size_t>(3 * Ho * Ho), rng);
        auto wv = testutil::random_vec(static_cast<std::size_t>(3 * 2 * kH * kH), rng);

        Tape<double> tape;
        auto x = make_leaf<double>({1, 2, H, H}, xv);
        auto w = make_leaf<double>({3, 2, kH, kH}, wv);
        auto ax = conv2d(tape, x, w, nullptr, stride, pad);
        REQUIRE(ax->shape == Shape{1, 3, Ho, Ho});

        auto y = make_leaf<double>({1, 3, Ho, Ho}, yv);
        auto aty = conv_transpose2d(tape, y, w, nullptr, stride, pad);
        REQUIRE(aty->shape == Shape{1, 2, H, H});

        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < yv.size(); ++i) lhs += ax->value[i] * yv[i];
        for (std::size_t i = 0; i < xv.size(); ++i) rhs += xv[i] * aty->value[i];
        CHECK(std::abs(lhs - rhs) < 1e-10);
    }
}

TEST_CASE("conv_transpose2d unit kernel identity") {
    Tape<double> tape;
    auto x = make_leaf<double>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = make_leaf<double>({1, 1, 1, 1}, {1.0});
    auto y = conv_transpose2d(tape, x, w, nullptr, 1, 0);
    REQUIRE(y->shape == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y->value[i] == doctest::Approx(x->value[i]));
}

TEST_CASE("conv_transpose2d gradient vs finite differences") {
    std::mt19937_64 rng(13);
    const Shape xs{1, 3, 4, 4}, ws{3, 2, 4, 4};
    auto xv = testutil::random_vec(static_cast<std::size_t>(numel_of(xs)), rng);
    auto wv = testutil::random_vec(static_cast<std::size_t>(numel_of(ws)), rng);
    auto bv = testutil::random_vec(2, rng);

    auto run = [&](const std::vector<double>& x_, const std::vector<double>& w_,
                   const std::vector<double>& b_, std::vector<double>* gx, std::vector<double>* gw,
                   std::vector<double>* gb) {
        Tape<double> tape;
        auto x = make_leaf<double>(xs, x_, gx != nullptr);
        auto w = make_leaf<double>(ws, w_, gw != nullptr);
        auto b = make_leaf<double>({2}, b_, gb != nullptr);
        auto y = conv_transpose2d(tape, x, w, b, 2, 1);
        // weight the outputs so the gradient is not constant
        auto wgt = Tape<double>::alloc(y->shape, false);
        for (std::int64_t i = 0; i < y->numel(); ++i) wgt->value[i] = std::sin(0.1 * i);
        auto loss = sum(tape, mul(tape, y, wgt));
        if (gx || gw || gb) {
            tape.backward(loss);
            if (gx) *gx = x->grad;
            if (gw) *gw = w->grad;
            if (gb) *gb = b->grad;
        }
        return loss->value[0];
    };

    std::vector<double> gx, gw, gb;
    run(xv, wv, bv, &gx, &gw, &gb);
    auto fx = [&](const std::vector<double>& v) { return run(v, wv, bv, nullptr, nullptr, nullptr); };
    CHECK(testutil::fd_check(fx, xv, gx, rng, 24) < 1e-4);
    auto fw = [&](const std::vector<double>& v) { return run(xv, v, bv, nullptr, nullptr, nullptr); };
    CHECK(testutil::fd_check(fw, wv, gw, rng, 24) < 1e-4);
    auto fb = [&](const std::vector<double>& v) { return run(xv, wv, v, nullptr, nullptr, nullptr); };
    CHECK(testutil::fd_check(fb, bv, gb, rng) < 1e-4);
}

TEST_CASE("instance_norm basics") {
    SUBCASE("constant slice maps to zeros") {
        Tape<double> tape;
        auto x = make_full<double>({1, 1, 2, 2}, 3.5);
        auto y = instance_norm(tape, x, 1e-5);
        for (auto v : y->value) CHECK(v == doctest::Approx(0.0));
    }
    SUBCASE("symmetric two-point slice at eps=0") {
        Tape<double> tape;
        auto x = make_leaf<double>({1, 1, 1, 2}, {-1.0, 1.0});
        auto y = instance_norm(tape, x, 0.0);
        CHECK(y->value[0] == doctest::Approx(-1.0));
        CHECK(y->value[1] == doctest::Approx(1.0));
    }
    SUBCASE("normalized moments") {
        std::mt19937_64 rng(3);
        auto xv = testutil::random_vec(2 * 3 * 8 * 8, rng);
        Tape<double> tape;
        auto y = instance_norm(tape, make_leaf<double>({2, 3, 8, 8}, xv), 1e-10);
        for (int s = 0; s < 6; ++s) {
            double m = 0, v = 0;
            for (int i = 0; i < 64; ++i) m += y->value[s * 64 + i];
            m /= 64;
            for (int i = 0; i < 64; ++i) v += (y->value[s * 64 + i] - m) * (y->value[s * 64 + i] - m);
            v /= 64;
            CHECK(std::abs(m) < 1e-6);
            CHECK(std::abs(v - 1.0) < 1e-4);
        }
    }
    SUBCASE("matches serial reference") {
        std::mt19937_64 rng(5);
        auto xv = testutil::random_vec(1 * 2 * 4 * 4, rng);
        Tape<double> tape;
        auto y = instance_norm(tape, make_leaf<double>({1, 2, 4, 4}, xv), 1e-5);
        std::vector<double> ref(xv.size());
        ssmri::ref::instance_norm_serial(xv.data(), ref.data(), 2, 16, 1e-5);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(y->value[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("instance_norm gradient vs finite differences") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 3; ++trial) {
        auto xv = testutil::random_vec(1 * 2 * 4 * 4, rng);
        auto run = [&](const std::vector<double>& v, std::vector<double>* g) {
            Tape<double> tape;
            auto x = make_leaf<double>({1, 2, 4, 4}, v, g != nullptr);
            auto y = instance_norm(tape, x, 1e-5);
            auto wgt = Tape<double>::alloc(y->shape, false);
            for (std::int64_t i = 0; i < y->numel(); ++i) wgt->value[i] = std::cos(0.3 * i);
            auto loss = sum(tape, mul(tape, y, wgt));
            if (g) {
                tape.backward(loss);
                *g = x->grad;
            }
            return loss->value[0];
        };
        std::vector<double> g;
        run(xv, &g);
        auto f = [&](const std::vector<double>& v) { return run(v, nullptr); };
        CHECK(testutil::fd_check(f, xv, g, rng) < 1e-4);
    }
}

TEST_CASE("elementwise values and conventions") {
    Tape<double> tape;
    auto x = make_leaf<double>({1, 4}, {0.0, 10.0, -3.0, 3.0});
    auto t = tanh_op(tape, x);
    CHECK(t->value[0] == doctest::Approx(0.0));
    CHECK(std::abs(t->value[1] - 1.0) < 1e-6);
    auto r = relu(tape, x);
    CHECK(r->value[2] == 0.0);
    CHECK(r->value[3] == 3.0);

    auto a = make_leaf<double>({1, 2}, {0.5, -0.5}, true);
    auto loss = sum(tape, abs_op(tape, a));
    tape.backward(loss);
    CHECK(a->grad[0] == doctest::Approx(1.0));
    CHECK(a->grad[1] == doctest::Approx(-1.0));

    auto z = make_leaf<double>({1}, {0.0}, true);
    Tape<double> t2;
    auto l2 = sum(t2, abs_op(t2, z));
    t2.backward(l2);
    CHECK(z->grad[0] == 0.0); // subgradient convention at 0

    auto b1 = make_full<double>({2, 2}, 1.0);
    auto b2 = make_full<double>({2, 3}, 1.0);
    CHECK_THROWS_AS(add(tape, b1, b2), std::invalid_argument);
}

TEST_CASE("reductions") {
    Tape<double> tape;
    auto ones = make_full<double>({2, 3}, 1.0);
    CHECK(sum(tape, ones)->value[0] == doctest::Approx(6.0));
    auto x = make_leaf<double>({4}, {1, 2, 3, 4}, true);
    auto m = mean(tape, x);
    CHECK(m->value[0] == doctest::Approx(2.5));
    tape.backward(m);
    for (int i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(0.25));
    auto empty = make_leaf<double>({0}, {});
    CHECK_THROWS_AS(sum(tape, empty), std::invalid_argument);
}

TEST_CASE("backward chain rules and error paths") {
    SUBCASE("y = x*x at x=3") {
        Tape<double> tape;
        auto x = make_leaf<double>({1}, {3.0}, true);
        auto y = sum(tape, mul(tape, x, x));
        tape.backward(y);
        CHECK(x->grad[0] == doctest::Approx(6.0));
    }
    SUBCASE("y = tanh(2x) at x=0") {
        Tape<double> tape;
        auto x = make_leaf<double>({1}, {0.0}, true);
        auto y = sum(tape, tanh_op(tape, scalar_mul(tape, x, 2.0)));
        tape.backward(y);
        CHECK(x->grad[0] == doctest::Approx(2.0));
    }
    SUBCASE("fan-out sums both contributions") {
        std::mt19937_64 rng(23);
        auto xv = testutil::random_vec(6, rng);
        auto run = [&](const std::vector<double>& v, std::vector<double>* g) {
            Tape<double> tape;
            auto x = make_leaf<double>({6}, v, g != nullptr);
            auto a = tanh_op(tape, x);
            auto b = mul(tape, x, x);
            auto loss = sum(tape, add(tape, a, b)); // x feeds two consumers
            if (g) {
                tape.backward(loss);
                *g = x->grad;
            }
            return loss->value[0];
        };
        std::vector<double> g;
        run(xv, &g);
        auto f = [&](const std::vector<double>& v) { return run(v, nullptr); };
        CHECK(testutil::fd_check(f, xv, g, rng) < 1e-4);
    }
    SUBCASE("repeated backward accumulates additively") {
        Tape<double> tape;
        auto x = make_leaf<double>({1}, {3.0}, true);
        auto y = sum(tape, mul(tape, x, x));
        tape.backward(y);
        tape.backward(y);
        CHECK(x->grad[0] == doctest::Approx(12.0));
    }
    SUBCASE("non-scalar loss and off-tape node are rejected") {
        Tape<double> tape;
        auto x = make_leaf<double>({2}, {1.0, 2.0}, true);
        auto y = mul(tape, x, x);
        CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
        CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
    }
}

TEST_CASE("complex_abs and select_coil") {
    Tape<double> tape;
    auto x = make_leaf<double>({1, 2, 1, 2}, {3.0, 0.0, 4.0, 1.0}, true);
    auto m = complex_abs(tape, x);
    CHECK(m->value[0] == doctest::Approx(5.0));
    CHECK(m->value[1] == doctest::Approx(1.0));
    auto loss = sum(tape, m);
    tape.backward(loss);
    CHECK(x->grad[0] == doctest::Approx(0.6));
    CHECK(x->grad[2] == doctest::Approx(0.8));

    std::mt19937_64 rng(31);
    auto xv = testutil::random_vec(3 * 2 * 2 * 2, rng);
    Tape<double> t2;
    auto stack = make_leaf<double>({3, 2, 2, 2}, xv, true);
    auto c1 = select_coil(t2, stack, 1);
    REQUIRE(c1->shape == Shape{1, 2, 2, 2});
    for (int i = 0; i < 8; ++i) CHECK(c1->value[i] == xv[8 + i]);
}

TEST_CASE("adam_step") {
    SUBCASE("first step magnitude is lr") {
        auto p = make_leaf<float>({2}, {1.0f, -2.0f}, true, "p");
        p->ensure_grad();
        p->grad = {0.3f, -0.7f};
        AdamState<float> st;
        st.init({p});
        adam_step<float>({p}, st, 0.01f);
        CHECK(st.t == 1);
        CHECK(p->value[0] == doctest::Approx(1.0f - 0.01f * 0.3f / (0.3f + 1e-8f)).epsilon(1e-4));
        CHECK(p->value[1] == doctest::Approx(-2.0f + 0.01f).epsilon(1e-4));
    }
    SUBCASE("zero gradient leaves parameters; t still advances") {
        auto p = make_leaf<float>({3}, {1.0f, 2.0f, 3.0f}, true, "p");
        p->ensure_grad();
        AdamState<float> st;
        st.init({p});
        adam_step<float>({p}, st, 0.1f);
        CHECK(st.t == 1);
        CHECK(p->value[0] == 1.0f);
        CHECK(p->value[2] == 3.0f);
    }
    SUBCASE("two constant-gradient steps match hand-computed sequence") {
        // float64 hand computation: g = 0.5, beta1 = 0.5, beta2 = 0.999,
        // eps = 1e-8, lr = 0.1, theta0 = 1.
        const double g = 0.5, b1 = 0.5, b2 = 0.999, eps = 1e-8, lr = 0.1;
        double m = 0, v = 0, theta = 1.0;
        for (int t = 1; t <= 2; ++t) {
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        }

        auto p = make_leaf<double>({1}, {1.0}, true, "theta");
        p->ensure_grad();
        AdamState<double> st;
        st.init({p});
        for (int t = 0; t < 2; ++t) {
            p->grad[0] = g;
            adam_step<double>({p}, st, lr);
        }
        CHECK(p->value[0] == doctest::Approx(theta).epsilon(1e-12));
    }
    SUBCASE("non-finite gradient names the parameter") {
        auto p = make_leaf<double>({1}, {1.0}, true, "conv1.weight");
        p->ensure_grad();
        p->grad[0] = std::numeric_limits<double>::quiet_NaN();
        AdamState<double> st;
        st.init({p});
        try {
            adam_step<double>({p}, st, 0.1);
            FAIL("expected a training error");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("conv1.weight") != std::string::npos);
        }
    }
}

TEST_CASE("tape replay determinism") {
    std::mt19937_64 rng(77);
    auto xv = testutil::random_vec(1 * 2 * 8 * 8, rng);
    auto wv = testutil::random_vec(4 * 2 * 3 * 3, rng);
    auto run = [&]() {
        Tape<float> tape;
        auto x = make_leaf<float>({1, 2, 8, 8}, testutil::cast_vec<float>(xv), true);
        auto w = make_leaf<float>({4, 2, 3, 3}, testutil::cast_vec<float>(wv), true);
        auto y = instance_norm(tape, conv2d(tape, x, w, nullptr, 1, 1), 1e-5f);
        auto loss = mean(tape, abs_op(tape, y));
        tape.backward(loss);
        return std::make_pair(y->value, x->grad);
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);   // bitwise
    CHECK(a.second == b.second); // bitwise
}
