#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "hgcnet/conv.hpp"
#include "hgcnet/ops.hpp"
#include "hgcnet/tensor.hpp"
#include "oracles.hpp"

using namespace hgcnet;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::mt19937& rng, double stddev = 1.0) {
    Tensor t(n, c, h, w);
    fill_gaussian(t, rng, stddev);
    return t;
}

}  // namespace

TEST_CASE("tensor shape validation") {
    CHECK_THROWS_AS(Tensor(0, 1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(1, 1, -2, 1), std::invalid_argument);
    Tensor t(2, 3, 4, 5);
    CHECK(t.size() == 2u * 3u * 4u * 5u);
}

TEST_CASE("conv2d scalar scaling and identity") {
    Tensor x(1, 1, 2, 2, 1.0f);
    ConvWeights w(1, 1, 1, 1, 1);
    w.data[0] = 3.0f;
    Tensor y = conv2d(x, w, 1, 0);
    for (float v : y.data) CHECK(v == doctest::Approx(3.0f));

    // identity 1x1: W[o][i] = delta(o, i) leaves the input untouched bit-exactly
    std::mt19937 rng(7);
    Tensor x2 = random_tensor(2, 4, 3, 3, rng);
    ConvWeights id(4, 4, 1, 1, 1);
    for (int o = 0; o < 4; ++o) id.at(o, o, 0, 0) = 1.0f;
    Tensor y2 = conv2d(x2, id, 1, 0);
    CHECK(y2.data == x2.data);
}

TEST_CASE("conv2d matches naive-loop oracle") {
    std::mt19937 rng(11);
    SUBCASE("grouped 3x3 with padding") {
        Tensor x = random_tensor(1, 4, 3, 3, rng);
        ConvWeights w(4, 2, 3, 3, 2);
        init_conv_weights(w, rng);
        Tensor got = conv2d(x, w, 1, 1);
        Tensor want = oracle::naive_conv2d(x, w, 1, 1);
        CHECK(max_abs_diff(got, want) < 1e-5);
    }
    SUBCASE("strided dense with bias") {
        Tensor x = random_tensor(2, 3, 7, 6, rng);
        ConvWeights w(5, 3, 3, 3, 1, true);
        init_conv_weights(w, rng);
        fill_gaussian(w.bias, rng, 0.5);
        Tensor got = conv2d(x, w, 2, 1);
        Tensor want = oracle::naive_conv2d(x, w, 2, 1);
        CHECK(got.h == 4);
        CHECK(got.w == 3);
        CHECK(max_abs_diff(got, want) < 1e-5);
    }
    SUBCASE("random shapes") {
        for (int trial = 0; trial < 20; ++trial) {
            const int groups = 1 << (trial % 3);
            const int ipg = 1 + trial % 3;
            const int opg = 1 + (trial / 3) % 3;
            const int k = (trial % 2) ? 1 : 3;
            const int pad = k / 2;
            Tensor x = random_tensor(1 + trial % 2, groups * ipg, 4, 5, rng);
            ConvWeights w(groups * opg, ipg, k, k, groups);
            init_conv_weights(w, rng);
            Tensor got = conv2d(x, w, 1, pad);
            Tensor want = oracle::naive_conv2d(x, w, 1, pad);
            CHECK(max_abs_diff(got, want) < 1e-5);
        }
    }
}

TEST_CASE("conv2d direct path agrees with im2col path") {
    std::mt19937 rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const int groups = (trial % 2) ? 2 : 1;
        Tensor x = random_tensor(2, 4, 5, 5, rng);
        ConvWeights w(6, 4 / groups, 3, 3, groups);
        init_conv_weights(w, rng);
        Tensor fast = conv2d(x, w, 1, 1);
        Tensor direct = conv2d_direct(x, w, 1, 1);
        CHECK(max_abs_diff(fast, direct) < 1e-5);
    }
}

TEST_CASE("conv2d rejects malformed shapes with named dimensions") {
    Tensor x(1, 5, 4, 4);
    ConvWeights w(4, 2, 1, 1, 2);
    CHECK_THROWS_WITH_AS(conv2d(x, w, 1, 0),
                         doctest::Contains("input channels (5)"), std::invalid_argument);
    CHECK_THROWS_AS(ConvWeights(5, 2, 1, 1, 2), std::invalid_argument);
    Tensor x2(1, 4, 2, 2);
    ConvWeights w2(4, 2, 3, 3, 2);
    CHECK_THROWS_AS(conv2d(x2, w2, 1, 0), std::invalid_argument);  // kernel larger than input
    CHECK_THROWS_AS(conv2d(x2, w2, 0, 1), std::invalid_argument);  // bad stride
    CHECK_THROWS_AS(conv2d(x2, w2, 1, -1), std::invalid_argument); // bad pad
}

TEST_CASE("grouped conv equals concatenated per-group dense convs") {
    std::mt19937 rng(17);
    const int groups = 4, ipg = 2, opg = 3;
    Tensor x = random_tensor(2, groups * ipg, 4, 4, rng);
    ConvWeights w(groups * opg, ipg, 3, 3, groups);
    init_conv_weights(w, rng);
    Tensor whole = conv2d(x, w, 1, 1);

    std::vector<Tensor> parts;
    for (int g = 0; g < groups; ++g) {
        Tensor xg = slice_channels(x, g * ipg, ipg);
        ConvWeights wg(opg, ipg, 3, 3, 1);
        for (int o = 0; o < opg; ++o) {
            for (std::size_t i = 0; i < wg.kernel_size(); ++i) {
                wg.data[static_cast<std::size_t>(o) * wg.kernel_size() + i] =
                    w.data[(static_cast<std::size_t>(g) * opg + o) * w.kernel_size() + i];
            }
        }
        parts.push_back(conv2d(xg, wg, 1, 1));
    }
    CHECK(max_abs_diff(whole, concat_channels(parts)) < 1e-5);
}

TEST_CASE("conv2d output group is blind to other input groups") {
    std::mt19937 rng(19);
    const int groups = 3, ipg = 2, opg = 2;
    Tensor x = random_tensor(1, groups * ipg, 3, 3, rng);
    ConvWeights w(groups * opg, ipg, 1, 1, groups);
    init_conv_weights(w, rng);
    Tensor base = conv2d(x, w, 1, 0);
    for (int other = 0; other < groups; ++other) {
        Tensor xp = x;
        xp.at(0, other * ipg, 1, 1) += 5.0f;
        Tensor yp = conv2d(xp, w, 1, 0);
        for (int g = 0; g < groups; ++g) {
            Tensor a = slice_channels(base, g * opg, opg);
            Tensor b = slice_channels(yp, g * opg, opg);
            if (g == other) {
                CHECK(max_abs_diff(a, b) > 0.0);
            } else {
                CHECK(a.data == b.data);
            }
        }
    }
}

TEST_CASE("depthwise conv3x3") {
    std::mt19937 rng(23);
    SUBCASE("zero weights give zero output") {
        Tensor x = random_tensor(1, 3, 4, 4, rng);
        ConvWeights w(3, 1, 3, 3, 3);
        Tensor y = depthwise_conv3x3(x, w, 1, 1);
        for (float v : y.data) CHECK(v == 0.0f);
    }
    SUBCASE("centered delta kernel is the identity") {
        Tensor x = random_tensor(2, 3, 5, 5, rng);
        ConvWeights w(3, 1, 3, 3, 3);
        for (int c = 0; c < 3; ++c) w.at(c, 0, 1, 1) = 1.0f;
        Tensor y = depthwise_conv3x3(x, w, 1, 1);
        CHECK(max_abs_diff(y, x) == 0.0);
    }
    SUBCASE("matches naive reference") {
        Tensor x = random_tensor(2, 3, 5, 5, rng);
        ConvWeights w(3, 1, 3, 3, 3);
        init_conv_weights(w, rng);
        Tensor got = depthwise_conv3x3(x, w, 1, 1);
        Tensor want = oracle::naive_conv2d(x, w, 1, 1);
        CHECK(max_abs_diff(got, want) < 1e-5);
    }
    SUBCASE("rejects non-depthwise weights") {
        Tensor x = random_tensor(1, 4, 5, 5, rng);
        CHECK_THROWS_AS(depthwise_conv3x3(x, ConvWeights(4, 2, 3, 3, 2), 1, 1), std::invalid_argument);
        CHECK_THROWS_AS(depthwise_conv3x3(x, ConvWeights(4, 1, 1, 1, 4), 1, 0), std::invalid_argument);
    }
}

TEST_CASE("channel shuffle permutation") {
    std::mt19937 rng(29);
    SUBCASE("groups=1 is the identity") {
        Tensor x = random_tensor(1, 6, 2, 2, rng);
        Tensor y = channel_shuffle(x, 1);
        CHECK(y.data == x.data);
    }
    SUBCASE("c=6 G=2 reads input channels (0,3,1,4,2,5)") {
        Tensor x(1, 6, 1, 1);
        for (int c = 0; c < 6; ++c) x.at(0, c, 0, 0) = static_cast<float>(c);
        Tensor y = channel_shuffle(x, 2);
        const std::vector<float> want = {0, 3, 1, 4, 2, 5};
        CHECK(y.data == want);
        for (int k = 0; k < 6; ++k) CHECK(shuffle_source_channel(k, 6, 2) == oracle::shuffle_sigma(k, 6, 2));
    }
    SUBCASE("shuffle then inverse shuffle is the bit-exact identity") {
        Tensor x = random_tensor(2, 12, 3, 3, rng);
        for (int g : {2, 3, 4, 6}) {
            Tensor y = channel_shuffle(channel_shuffle(x, g), 12 / g);
            CHECK(y.data == x.data);
        }
    }
    SUBCASE("bijection preserves the multiset of channel contents") {
        Tensor x = random_tensor(1, 8, 2, 2, rng);
        Tensor y = channel_shuffle(x, 4);
        auto a = x.data;
        auto b = y.data;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
    SUBCASE("rejects non-divisible channel counts") {
        Tensor x(1, 5, 2, 2);
        CHECK_THROWS_AS(channel_shuffle(x, 2), std::invalid_argument);
    }
}

TEST_CASE("concat and split") {
    std::mt19937 rng(31);
    Tensor a = random_tensor(2, 3, 2, 2, rng);
    Tensor b = random_tensor(2, 5, 2, 2, rng);
    SUBCASE("concat of a single part is that part") {
        Tensor y = concat_channels<float>({&a});
        CHECK(y.data == a.data);
    }
    SUBCASE("split(concat) round-trips bit-exactly") {
        Tensor y = concat_channels<float>({&a, &b});
        auto parts = split_channels(y, {3, 5});
        CHECK(parts[0].data == a.data);
        CHECK(parts[1].data == b.data);
    }
    SUBCASE("channel bookkeeping: channel 5 of 4x2 concat = channel 1 of part 3") {
        std::vector<Tensor> parts;
        for (int p = 0; p < 4; ++p) parts.push_back(random_tensor(1, 2, 3, 3, rng));
        Tensor y = concat_channels(parts);
        Tensor ch5 = slice_channels(y, 5, 1);
        Tensor want = slice_channels(parts[2], 1, 1);
        CHECK(ch5.data == want.data);
    }
    SUBCASE("mismatched spatial dims are rejected") {
        Tensor c(2, 3, 4, 2);
        CHECK_THROWS_AS(concat_channels<float>({&a, &c}), std::invalid_argument);
        CHECK_THROWS_AS(split_channels(a, {2, 2}), std::invalid_argument);
    }
}

TEST_CASE("batchnorm") {
    std::mt19937 rng(37);
    SUBCASE("already-normalized input passes through") {
        // two samples per channel at +/-1: mean 0, biased variance 1
        Tensor x(2, 3, 1, 1);
        for (int c = 0; c < 3; ++c) {
            x.at(0, c, 0, 0) = 1.0f;
            x.at(1, c, 0, 0) = -1.0f;
        }
        BatchNormParamsT<float> p(3);
        Tensor y = batchnorm(x, p, Mode::Train);
        CHECK(max_abs_diff(y, x) < 1e-4);
    }
    SUBCASE("gamma=0 yields beta broadcast") {
        Tensor x = random_tensor(4, 2, 3, 3, rng);
        BatchNormParamsT<float> p(2);
        p.gamma = {0.0f, 0.0f};
        p.beta = {0.5f, -1.25f};
        Tensor y = batchnorm(x, p, Mode::Train);
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 9; ++i) {
                CHECK(y.channel_ptr(n, 0)[i] == 0.5f);
                CHECK(y.channel_ptr(n, 1)[i] == -1.25f);
            }
    }
    SUBCASE("train mode standardizes per channel") {
        Tensor x = random_tensor(8, 4, 2, 2, rng, 2.0);
        BatchNormParamsT<float> p(4);
        Tensor y = batchnorm(x, p, Mode::Train);
        for (int c = 0; c < 4; ++c) {
            double mean = 0.0, var = 0.0;
            for (int n = 0; n < 8; ++n)
                for (int i = 0; i < 4; ++i) mean += y.channel_ptr(n, c)[i];
            mean /= 32.0;
            for (int n = 0; n < 8; ++n)
                for (int i = 0; i < 4; ++i) {
                    const double d = y.channel_ptr(n, c)[i] - mean;
                    var += d * d;
                }
            var /= 32.0;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-3);
        }
    }
    SUBCASE("zero-variance channel is safe") {
        Tensor x(4, 1, 2, 2, 3.5f);
        BatchNormParamsT<float> p(1);
        p.beta = {0.75f};
        Tensor y = batchnorm(x, p, Mode::Train);
        CHECK(all_finite(y));
        for (float v : y.data) CHECK(v == doctest::Approx(0.75f));
    }
    SUBCASE("running stats feed eval mode") {
        BatchNormParamsT<float> p(2);
        Tensor x = random_tensor(16, 2, 2, 2, rng);
        for (int i = 0; i < 50; ++i) batchnorm(x, p, Mode::Train);
        Tensor ytrain = batchnorm(x, p, Mode::Train);
        Tensor yeval = batchnorm(x, p, Mode::Eval);
        CHECK(max_abs_diff(ytrain, yeval) < 1e-2);  // stats converge to the batch stats
    }
}

TEST_CASE("activations and head ops") {
    SUBCASE("relu clamps negatives") {
        Tensor x(1, 1, 1, 2);
        x.data = {-1.0f, 2.0f};
        Tensor y = relu(x);
        CHECK(y.data[0] == 0.0f);
        CHECK(y.data[1] == 2.0f);
    }
    SUBCASE("global average pool") {
        Tensor x(1, 1, 2, 2);
        x.data = {1.0f, 2.0f, 3.0f, 4.0f};
        Tensor y = global_avg_pool(x);
        CHECK(y.data[0] == doctest::Approx(2.5f));
    }
    SUBCASE("uniform logits give ln k loss") {
        Tensor logits(3, 10, 1, 1, 0.0f);
        auto res = softmax_cross_entropy(logits, {0, 5, 9});
        CHECK(res.loss == doctest::Approx(std::log(10.0)).epsilon(1e-6));
    }
    SUBCASE("label out of range is rejected") {
        Tensor logits(1, 10, 1, 1);
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {10}), std::invalid_argument);
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), std::invalid_argument);
    }
    SUBCASE("linear layer shapes") {
        std::mt19937 rng(3);
        Tensor x = random_tensor(2, 6, 1, 1, rng);
        LinearWeightsT<float> lw(6, 4);
        init_linear_weights(lw, rng);
        Tensor y = linear(x, lw);
        CHECK(y.n == 2);
        CHECK(y.c == 4);
        Tensor bad(2, 6, 2, 2);
        CHECK_THROWS_AS(linear(bad, lw), std::invalid_argument);
    }
}

TEST_CASE("forward ops keep finite values on finite inputs") {
    std::mt19937 rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor(2, 4, 5, 5, rng, 3.0);
        ConvWeights w(6, 2, 3, 3, 2);
        init_conv_weights(w, rng);
        CHECK(all_finite(conv2d(x, w, 1, 1)));
        CHECK(all_finite(channel_shuffle(x, 2)));
        CHECK(all_finite(relu(x)));
        CHECK(all_finite(sigmoid(x)));
        CHECK(all_finite(global_avg_pool(x)));
        CHECK(all_finite(avg_pool2x2(x)));
        BatchNormParamsT<float> p(4);
        CHECK(all_finite(batchnorm(x, p, Mode::Train)));
    }
}
