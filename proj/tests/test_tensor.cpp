#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srsqueeze/tensor.hpp"
#include "testutil.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace srsq;

namespace {

struct TapeReset {
    TapeReset() { clear_tape(); }
    ~TapeReset() { clear_tape(); }
};

}  // namespace

TEST_CASE("tensor construction and accessors") {
    TapeReset reset;
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.rank() == 2);
    CHECK(z.numel() == 6);
    CHECK(z.dim(1) == 3);
    CHECK(std::all_of(z.data().begin(), z.data().end(), [](float v) { return v == 0.0f; }));

    Tensor f = Tensor::full({4}, 1.5f);
    CHECK(f.data()[3] == 1.5f);

    Tensor s = Tensor::scalar(-2.0f);
    CHECK(s.item() == -2.0f);

    CHECK_THROWS(Tensor::from_data({1.0f, 2.0f}, {3}));
    CHECK_THROWS(Tensor::zeros({2, 0}));
    CHECK_THROWS(Tensor::zeros({2, 2}).item());

    Tensor orig = Tensor::from_data({1.0f, 2.0f}, {2});
    Tensor copy = orig.clone();
    copy.data()[0] = 9.0f;
    CHECK(orig.data()[0] == 1.0f);
}

TEST_CASE("elementwise forward values") {
    TapeReset reset;
    Tensor a = Tensor::from_data({1.0f, -2.0f, 3.0f}, {3});
    Tensor b = Tensor::from_data({0.5f, 4.0f, -1.0f}, {3});

    CHECK(add(a, b).data()[1] == 2.0f);
    CHECK(sub(a, b).data()[2] == 4.0f);
    CHECK(mul(a, b).data()[0] == 0.5f);
    CHECK(scale(a, -2.0).data()[0] == -2.0f);

    Tensor r = relu(Tensor::from_data({-1.0f, 0.0f, 2.0f}, {3}));
    CHECK(r.data()[0] == 0.0f);
    CHECK(r.data()[1] == 0.0f);
    CHECK(r.data()[2] == 2.0f);

    CHECK_THROWS(add(a, Tensor::zeros({4})));
}

TEST_CASE("relu on all-negative input has zero output and zero gradient") {
    TapeReset reset;
    Tensor x = Tensor::from_data({-1.0f, -0.5f, -3.0f}, {3}, true);
    Tensor loss = sum(relu(x));
    backward(loss);
    for (float v : x.grad()) CHECK(v == 0.0f);
}

TEST_CASE("backward basics") {
    TapeReset reset;

    SUBCASE("sum gradient is ones") {
        Tensor x = Tensor::from_data({1.0f, 2.0f, 3.0f}, {3}, true);
        backward(sum(x));
        for (float g : x.grad()) CHECK(g == 1.0f);
    }

    SUBCASE("sum of squares gradient is 2x") {
        Tensor x = Tensor::from_data({1.0f, 2.0f}, {2}, true);
        backward(sum(mul(x, x)));
        CHECK(x.grad()[0] == 2.0f);
        CHECK(x.grad()[1] == 4.0f);
    }

    SUBCASE("non-scalar loss rejected") {
        Tensor x = Tensor::zeros({2}, true);
        CHECK_THROWS(backward(add(x, x)));
    }

    SUBCASE("two backward passes accumulate exactly twice") {
        Tensor x = testutil::random_tensor({8}, 17, -1.0f, 1.0f, true);
        Tensor loss = mean(mul(x, x));
        backward(loss);
        std::vector<float> once(x.grad().begin(), x.grad().end());
        backward(loss);
        for (long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0f * once[i]);
    }

    SUBCASE("zero_grad resets accumulation") {
        Tensor x = Tensor::from_data({3.0f}, {1}, true);
        backward(sum(x));
        x.zero_grad();
        CHECK(x.grad()[0] == 0.0f);
    }
}

TEST_CASE("no-grad guard suppresses recording") {
    TapeReset reset;
    Tensor x = Tensor::zeros({2}, true);
    {
        NoGradGuard guard;
        CHECK(!grad_enabled());
        Tensor y = add(x, x);
        CHECK(!y.requires_grad());
        CHECK(tape_size() == 0);
    }
    CHECK(grad_enabled());
    add(x, x);
    CHECK(tape_size() == 1);
}

TEST_CASE("backward on a tensor from a cleared tape treats it as a leaf") {
    TapeReset reset;
    Tensor x = Tensor::from_data({1.0f}, {1}, true);
    Tensor y = scale(x, 2.0);
    clear_tape();
    backward(y);  // history gone: must not touch x
    CHECK(x.grad().empty());
}

TEST_CASE("conv2d matches documented small cases") {
    TapeReset reset;

    SUBCASE("1x1 scalar kernel doubles the input") {
        Tensor input = Tensor::full({1, 1, 3, 3}, 1.0f);
        Tensor weight = Tensor::from_data({2.0f}, {1, 1, 1, 1});
        Tensor bias = Tensor::zeros({1});
        Tensor out = conv2d(input, weight, bias, 1, 0);
        CHECK(out.shape() == std::vector<long>{1, 1, 3, 3});
        for (float v : out.data()) CHECK(v == 2.0f);
    }

    SUBCASE("identity 3x3 kernel with pad 1 reproduces the input") {
        Tensor input = testutil::random_tensor({1, 1, 5, 4}, 3);
        std::vector<float> k(9, 0.0f);
        k[4] = 1.0f;
        Tensor weight = Tensor::from_data(k, {1, 1, 3, 3});
        Tensor out = conv2d(input, weight, Tensor(), 1, 1);
        for (long i = 0; i < input.numel(); ++i) CHECK(out.data()[i] == input.data()[i]);
    }
}

TEST_CASE("conv2d agrees with the direct-loop oracle") {
    TapeReset reset;

    struct Case {
        long batch, in_ch, h, w, out_ch, kh, kw;
        int stride, padding;
        unsigned seed;
    };
    const Case cases[] = {
        {2, 4, 8, 8, 6, 3, 3, 1, 0, 101},
        {1, 3, 9, 7, 5, 3, 3, 1, 1, 102},
        {2, 2, 10, 10, 3, 5, 5, 2, 2, 103},
        {1, 1, 6, 6, 2, 1, 1, 1, 0, 104},
        {1, 5, 7, 8, 4, 3, 3, 2, 1, 105},
    };
    for (const Case& c : cases) {
        CAPTURE(c.seed);
        Tensor input = testutil::random_tensor({c.batch, c.in_ch, c.h, c.w}, c.seed);
        Tensor weight = testutil::random_tensor({c.out_ch, c.in_ch, c.kh, c.kw}, c.seed + 1000);
        Tensor bias = testutil::random_tensor({c.out_ch}, c.seed + 2000);
        Tensor out = conv2d(input, weight, bias, c.stride, c.padding);
        std::vector<float> expect = testutil::conv_oracle(
            {input.data().begin(), input.data().end()}, c.batch, c.in_ch, c.h, c.w,
            {weight.data().begin(), weight.data().end()}, c.out_ch, c.kh, c.kw,
            {bias.data().begin(), bias.data().end()}, c.stride, c.padding);
        REQUIRE(out.numel() == static_cast<long>(expect.size()));
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(std::abs(out.data()[i] - expect[i]) <= 1e-5f);
        }
    }
}

TEST_CASE("conv2d shape errors are descriptive") {
    TapeReset reset;
    Tensor input = Tensor::zeros({1, 3, 4, 4});
    Tensor weight = Tensor::zeros({2, 4, 3, 3});  // expects 4 input channels
    CHECK_THROWS_WITH_AS(conv2d(input, weight, Tensor(), 1, 1), doctest::Contains("channels"),
                         std::invalid_argument);
    CHECK_THROWS(conv2d(input, Tensor::zeros({2, 3, 9, 9}), Tensor(), 1, 0));
    CHECK_THROWS(conv2d(input, Tensor::zeros({2, 3, 3, 3}), Tensor::zeros({3}), 1, 1));
}

TEST_CASE("conv2d gradients match finite differences") {
    TapeReset reset;
    Tensor input = testutil::random_tensor({1, 2, 5, 5}, 7, -1.0f, 1.0f, true);
    Tensor weight = testutil::random_tensor({3, 2, 3, 3}, 8, -1.0f, 1.0f, true);
    Tensor bias = testutil::random_tensor({3}, 9, -1.0f, 1.0f, true);
    Tensor target = testutil::random_tensor({1, 3, 5, 5}, 10);

    auto forward = [&] {
        Tensor out = conv2d(input, weight, bias, 1, 1);
        Tensor diff = sub(out, target);
        return mean(mul(diff, diff));
    };
    CHECK(testutil::gradcheck(weight, forward));
    CHECK(testutil::gradcheck(bias, forward));
    CHECK(testutil::gradcheck(input, forward));
}

TEST_CASE("strided padded conv2d gradients match finite differences") {
    TapeReset reset;
    Tensor input = testutil::random_tensor({2, 2, 6, 6}, 21, -1.0f, 1.0f, true);
    Tensor weight = testutil::random_tensor({2, 2, 3, 3}, 22, -1.0f, 1.0f, true);
    Tensor bias = testutil::random_tensor({2}, 23, -1.0f, 1.0f, true);

    auto forward = [&] { return mean(relu(conv2d(input, weight, bias, 2, 1))); };
    CHECK(testutil::gradcheck(weight, forward));
    CHECK(testutil::gradcheck(input, forward));
}

TEST_CASE("composite conv-relu-mean network gradients match finite differences") {
    TapeReset reset;
    Tensor input = testutil::random_tensor({1, 1, 6, 6}, 31);
    Tensor w1 = testutil::random_tensor({4, 1, 3, 3}, 32, -0.5f, 0.5f, true);
    Tensor b1 = testutil::random_tensor({4}, 33, -0.1f, 0.1f, true);
    Tensor w2 = testutil::random_tensor({1, 4, 3, 3}, 34, -0.5f, 0.5f, true);
    Tensor b2 = testutil::random_tensor({1}, 35, -0.1f, 0.1f, true);

    auto forward = [&] {
        Tensor h1 = relu(conv2d(input, w1, b1, 1, 1));
        Tensor h2 = conv2d(h1, w2, b2, 1, 1);
        return mean(mul(h2, h2));
    };
    CHECK(testutil::gradcheck(w1, forward));
    CHECK(testutil::gradcheck(b1, forward));
    CHECK(testutil::gradcheck(w2, forward));
    CHECK(testutil::gradcheck(b2, forward));
}

TEST_CASE("elementwise op gradients match finite differences") {
    TapeReset reset;
    Tensor a = testutil::random_tensor({12}, 41, -1.0f, 1.0f, true);
    Tensor b = testutil::random_tensor({12}, 42, -1.0f, 1.0f, true);

    auto relu_loss = [&] { return mean(relu(a)); };
    CHECK(testutil::gradcheck(a, relu_loss));

    auto mix = [&] { return sum(mul(add(a, b), sub(a, scale(b, 0.5)))); };
    CHECK(testutil::gradcheck(a, mix));
    CHECK(testutil::gradcheck(b, mix));
}

TEST_CASE("pixel_shuffle defining case and round trip") {
    TapeReset reset;

    SUBCASE("1x4x1x1 to 1x1x2x2") {
        Tensor x = Tensor::from_data({10.0f, 20.0f, 30.0f, 40.0f}, {1, 4, 1, 1});
        Tensor y = pixel_shuffle(x, 2);
        CHECK(y.shape() == std::vector<long>{1, 1, 2, 2});
        CHECK(y.data()[0] == 10.0f);
        CHECK(y.data()[1] == 20.0f);
        CHECK(y.data()[2] == 30.0f);
        CHECK(y.data()[3] == 40.0f);
    }

    SUBCASE("r=1 is the identity") {
        Tensor x = testutil::random_tensor({2, 3, 4, 4}, 51);
        Tensor y = pixel_shuffle(x, 1);
        for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
    }

    SUBCASE("unshuffle inverts shuffle") {
        Tensor x = testutil::random_tensor({2, 8, 3, 5}, 52);
        Tensor back = pixel_unshuffle(pixel_shuffle(x, 2), 2);
        REQUIRE(back.shape() == x.shape());
        for (long i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
    }

    SUBCASE("value multiset is preserved") {
        Tensor x = testutil::random_tensor({1, 9, 2, 2}, 53);
        Tensor y = pixel_shuffle(x, 3);
        std::vector<float> xs(x.data().begin(), x.data().end());
        std::vector<float> ys(y.data().begin(), y.data().end());
        std::sort(xs.begin(), xs.end());
        std::sort(ys.begin(), ys.end());
        CHECK(xs == ys);
    }

    SUBCASE("indivisible channels rejected") {
        CHECK_THROWS(pixel_shuffle(Tensor::zeros({1, 3, 2, 2}), 2));
        CHECK_THROWS(pixel_unshuffle(Tensor::zeros({1, 1, 3, 2}), 2));
    }

    SUBCASE("gradients flow through shuffle") {
        Tensor x = testutil::random_tensor({1, 4, 2, 2}, 54, -1.0f, 1.0f, true);
        auto forward = [&] { return mean(mul(pixel_shuffle(x, 2), pixel_shuffle(x, 2))); };
        CHECK(testutil::gradcheck(x, forward));
    }
}

TEST_CASE("depthwise_conv2d applies one fixed kernel per channel") {
    TapeReset reset;
    Tensor x = testutil::random_tensor({2, 3, 6, 6}, 61, -1.0f, 1.0f, true);
    Tensor k = Tensor::from_data({0.25f, 0.5f, 0.25f, 0.0f, 1.0f, 0.0f, -0.25f, -0.5f, -0.25f},
                                 {3, 3});
    Tensor y = depthwise_conv2d(x, k);
    CHECK(y.shape() == std::vector<long>{2, 3, 4, 4});

    // Check one output element against a hand-rolled window sum.
    double acc = 0.0;
    for (long dy = 0; dy < 3; ++dy) {
        for (long dx = 0; dx < 3; ++dx) {
            acc += static_cast<double>(k.data()[dy * 3 + dx]) *
                   x.data()[(1 * 6 + (2 + dy)) * 6 + (1 + dx) + 0];
        }
    }
    CHECK(std::abs(y.data()[(1 * 4 + 2) * 4 + 1] - static_cast<float>(acc)) <= 1e-6f);

    auto forward = [&] { return mean(mul(depthwise_conv2d(x, k), depthwise_conv2d(x, k))); };
    CHECK(testutil::gradcheck(x, forward));
}

TEST_CASE("reflect_pad2d mirrors without repeating the border") {
    TapeReset reset;
    Tensor x = Tensor::from_data({1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f, 7.0f, 8.0f, 9.0f},
                                 {1, 1, 3, 3});
    Tensor y = reflect_pad2d(x, 1);
    CHECK(y.shape() == std::vector<long>{1, 1, 5, 5});
    // Row 0 mirrors row 2 of the padded interior: [5 4 5 6 5]
    const float expect_row0[5] = {5.0f, 4.0f, 5.0f, 6.0f, 5.0f};
    for (int i = 0; i < 5; ++i) CHECK(y.data()[i] == expect_row0[i]);
    CHECK(y.data()[1 * 5 + 1] == 1.0f);  // interior is untouched
    CHECK(y.data()[2 * 5 + 0] == 5.0f);  // left edge of middle row mirrors column 1
    CHECK(y.data()[2 * 5 + 2] == 5.0f);  // centre stays put

    // Pads wider than the image fold repeatedly: along an axis of length 2 the
    // reflected index is |i| mod 2, so a pad-2 border tiles the source values.
    Tensor tiny = Tensor::from_data({1.0f, 2.0f, 3.0f, 4.0f}, {1, 1, 2, 2});
    Tensor wide = reflect_pad2d(tiny, 2);
    CHECK(wide.shape() == std::vector<long>{1, 1, 6, 6});
    const float* tv = tiny.data().data();
    for (long oy = 0; oy < 6; ++oy) {
        for (long ox = 0; ox < 6; ++ox) {
            CHECK(wide.data()[oy * 6 + ox] == tv[(std::abs(oy - 2) % 2) * 2 + std::abs(ox - 2) % 2]);
        }
    }
    // A 1x1 image reflects to a constant field no matter the pad.
    Tensor dot = Tensor::from_data({0.75f}, {1, 1, 1, 1});
    Tensor field = reflect_pad2d(dot, 3);
    CHECK(field.shape() == std::vector<long>{1, 1, 7, 7});
    for (float v : field.data()) CHECK(v == 0.75f);

    Tensor g = testutil::random_tensor({1, 2, 4, 4}, 71, -1.0f, 1.0f, true);
    auto forward = [&] { return mean(mul(reflect_pad2d(g, 2), reflect_pad2d(g, 2))); };
    CHECK(testutil::gradcheck(g, forward));

    Tensor g2 = testutil::random_tensor({1, 1, 2, 3}, 73, -1.0f, 1.0f, true);
    auto fold = [&] { return mean(mul(reflect_pad2d(g2, 4), reflect_pad2d(g2, 4))); };
    CHECK(testutil::gradcheck(g2, fold));
}

TEST_CASE("downsample2 and upsample_zero2 are adjoint samplers") {
    TapeReset reset;
    Tensor x = testutil::random_tensor({1, 2, 5, 7}, 81, -1.0f, 1.0f, true);
    Tensor d = downsample2(x);
    CHECK(d.shape() == std::vector<long>{1, 2, 3, 4});
    CHECK(d.data()[0] == x.data()[0]);
    CHECK(d.data()[1] == x.data()[2]);

    Tensor u = upsample_zero2(d, 5, 7);
    CHECK(u.shape() == x.shape());
    CHECK(u.data()[0] == d.data()[0]);
    CHECK(u.data()[1] == 0.0f);

    CHECK_THROWS(upsample_zero2(d, 9, 7));

    auto fd = [&] { return mean(mul(downsample2(x), downsample2(x))); };
    CHECK(testutil::gradcheck(x, fd));
    auto fu = [&] {
        Tensor up = upsample_zero2(x, 10, 14);
        return mean(mul(up, up));
    };
    CHECK(testutil::gradcheck(x, fu));
}

TEST_CASE("reductions and losses") {
    TapeReset reset;

    SUBCASE("sum and mean values") {
        Tensor x = Tensor::from_data({1.0f, 2.0f, 3.0f, 4.0f}, {4});
        CHECK(sum(x).item() == 10.0f);
        CHECK(mean(x).item() == 2.5f);
    }

    SUBCASE("l1 norm and loss values") {
        Tensor a = Tensor::from_data({1.0f, -2.0f, 0.0f}, {3});
        Tensor b = Tensor::from_data({0.0f, 1.0f, 0.0f}, {3});
        CHECK(l1_norm(a).item() == 3.0f);
        CHECK(l1_loss(a, b).item() == doctest::Approx(4.0 / 3.0));
    }

    SUBCASE("charbonnier of identical tensors is exactly eps in f32") {
        Tensor a = testutil::random_tensor({64}, 91);
        CHECK(charbonnier(a, a.clone(), 1e-3).item() == 1e-3f);
        CHECK_THROWS(charbonnier(a, a, 0.0));
    }

    SUBCASE("charbonnier approaches l1 for large differences") {
        Tensor a = Tensor::from_data({10.0f}, {1});
        Tensor b = Tensor::from_data({4.0f}, {1});
        CHECK(charbonnier(a, b, 1e-3).item() == doctest::Approx(6.0).epsilon(1e-6));
    }

    SUBCASE("reduction gradients match finite differences") {
        Tensor x = testutil::random_tensor({10}, 92, -1.0f, 1.0f, true);
        Tensor t = testutil::random_tensor({10}, 93);
        auto f_mean = [&] { return mean(x); };
        CHECK(testutil::gradcheck(x, f_mean));
        auto f_char = [&] { return charbonnier(x, t, 1e-3); };
        CHECK(testutil::gradcheck(x, f_char));
        // |x| is non-differentiable at 0; keep elements away from it for FD.
        Tensor y = testutil::random_tensor({10}, 94, 0.2f, 1.0f, true);
        auto f_l1 = [&] { return l1_norm(y); };
        CHECK(testutil::gradcheck(y, f_l1));
        Tensor z = testutil::random_tensor({10}, 95, -1.0f, -0.2f, true);
        auto f_l1loss = [&] { return l1_loss(y, z); };
        CHECK(testutil::gradcheck(y, f_l1loss));
        CHECK(testutil::gradcheck(z, f_l1loss));
    }
}

TEST_CASE("charbonnier gradient saturates toward the sign for large differences") {
    TapeReset reset;
    Tensor x = Tensor::from_data({100.0f, -100.0f, 0.0f}, {3}, true);
    Tensor t = Tensor::zeros({3});
    backward(charbonnier(x, t, 1e-3));
    CHECK(x.grad()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    CHECK(x.grad()[1] == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));
    CHECK(x.grad()[2] == 0.0f);
}

