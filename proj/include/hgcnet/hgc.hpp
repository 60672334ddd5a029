#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgcnet/conv.hpp"
#include "hgcnet/ops.hpp"
#include "hgcnet/tensor.hpp"

namespace hgcnet {

// One hierarchical group convolution layer: I input channels, O output
// channels, both split into G groups of 1x1 filters.
struct HgcLayerSpec {
    int in_channels = 0;
    int out_channels = 0;
    int groups = 1;

    HgcLayerSpec() = default;
    HgcLayerSpec(int in, int out, int g) : in_channels(in), out_channels(out), groups(g) { validate(); }

    void validate() const {
        if (groups < 1) throw std::invalid_argument("hgc: groups must be >= 1, got " + std::to_string(groups));
        if (in_channels < 1 || out_channels < 1) {
            throw std::invalid_argument("hgc: channel counts must be >= 1");
        }
        if (in_channels % groups != 0) {
            throw std::invalid_argument("hgc: in_channels (" + std::to_string(in_channels) +
                                        ") not divisible by groups (" + std::to_string(groups) + ")");
        }
        if (out_channels % groups != 0) {
            throw std::invalid_argument("hgc: out_channels (" + std::to_string(out_channels) +
                                        ") not divisible by groups (" + std::to_string(groups) + ")");
        }
    }

    int in_per_group() const { return in_channels / groups; }
    int out_per_group() const { return out_channels / groups; }
};

// G weight blocks: W_1 maps I/G -> O/G; each later W_i maps (I/G + O/G) -> O/G,
// consuming its input slice concatenated with the previous group's output.
template <class S>
struct HgcWeightsT {
    std::vector<ConvWeightsT<S>> blocks;

    std::size_t scalar_count() const {
        std::size_t total = 0;
        for (const auto& b : blocks) total += b.scalar_count();
        return total;
    }
};

using HgcWeights = HgcWeightsT<float>;

inline long long hgc_param_count(const HgcLayerSpec& spec) {
    spec.validate();
    const long long ipg = spec.in_per_group();
    const long long opg = spec.out_per_group();
    return opg * ipg + (spec.groups - 1) * opg * (opg + ipg);
}

// Standard group convolution baseline cost for the same layer shape.
inline long long sgc_param_count(const HgcLayerSpec& spec) {
    spec.validate();
    return static_cast<long long>(spec.in_channels) * spec.out_channels / spec.groups;
}

struct Ratio {
    long long num = 0;
    long long den = 1;

    Ratio() = default;
    Ratio(long long n, long long d) : num(n), den(d) { reduce(); }

    void reduce() {
        if (den < 0) {
            num = -num;
            den = -den;
        }
        const long long g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
    }

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Ratio& o) const { return num == o.num && den == o.den; }
};

struct CompressionRatio {
    Ratio exact;     // hgc_param_count / (I*O)
    double approx;   // (2/G)(1 - 1/G) + 1/G^2, the O = I simplification
};

inline CompressionRatio compression_ratio(const HgcLayerSpec& spec) {
    CompressionRatio r;
    r.exact = Ratio(hgc_param_count(spec),
                    static_cast<long long>(spec.in_channels) * spec.out_channels);
    const double g = static_cast<double>(spec.groups);
    r.approx = (2.0 / g) * (1.0 - 1.0 / g) + 1.0 / (g * g);
    return r;
}

// The O = I form of the approximation as an exact rational: (2G - 1) / G^2.
inline Ratio compression_ratio_approx_rational(int groups) {
    return Ratio(2LL * groups - 1, static_cast<long long>(groups) * groups);
}

template <class S>
void validate_hgc_weights(const HgcWeightsT<S>& w, const HgcLayerSpec& spec) {
    spec.validate();
    if (static_cast<int>(w.blocks.size()) != spec.groups) {
        throw std::invalid_argument("hgc: expected " + std::to_string(spec.groups) + " weight blocks, got " +
                                    std::to_string(w.blocks.size()));
    }
    const int ipg = spec.in_per_group();
    const int opg = spec.out_per_group();
    for (int i = 0; i < spec.groups; ++i) {
        const auto& b = w.blocks[static_cast<std::size_t>(i)];
        const int want_in = (i == 0) ? ipg : ipg + opg;
        if (b.out_channels != opg || b.in_per_group != want_in || b.kh != 1 || b.kw != 1 || b.groups != 1) {
            throw std::invalid_argument("hgc: weight block " + std::to_string(i + 1) + " has shape (" +
                                        std::to_string(b.out_channels) + "," + std::to_string(b.in_per_group) +
                                        "," + std::to_string(b.kh) + "," + std::to_string(b.kw) +
                                        "), expected (" + std::to_string(opg) + "," + std::to_string(want_in) +
                                        ",1,1)");
        }
        if (!b.bias.empty()) {
            throw std::invalid_argument("hgc: weight blocks carry no bias");
        }
    }
    if (w.scalar_count() != static_cast<std::size_t>(hgc_param_count(spec))) {
        throw std::invalid_argument("hgc: weight scalar count mismatch");
    }
}

template <class S>
HgcWeightsT<S> make_hgc_weights(const HgcLayerSpec& spec, std::mt19937& rng) {
    spec.validate();
    HgcWeightsT<S> w;
    const int ipg = spec.in_per_group();
    const int opg = spec.out_per_group();
    w.blocks.reserve(static_cast<std::size_t>(spec.groups));
    for (int i = 0; i < spec.groups; ++i) {
        ConvWeightsT<S> block(opg, i == 0 ? ipg : ipg + opg, 1, 1, 1, false);
        init_conv_weights(block, rng);
        w.blocks.push_back(std::move(block));
    }
    return w;
}

// Per-group inputs z_i = concat(X_i, Y_{i-1}) captured for the backward pass.
template <class S>
struct HgcCache {
    std::vector<TensorT<S>> inputs;
    HgcLayerSpec spec;
    bool valid = false;
};

// Eq.-style recurrence: Y_1 = X_1 * W_1; Y_i = concat(X_i, Y_{i-1}) * W_i.
// The group loop is strictly sequential by data dependence.
template <class S>
TensorT<S> hgc_forward(const TensorT<S>& x, const HgcWeightsT<S>& w, const HgcLayerSpec& spec,
                       HgcCache<S>* cache = nullptr) {
    validate_hgc_weights(w, spec);
    if (x.c != spec.in_channels) {
        throw std::invalid_argument("hgc_forward: input channels (" + std::to_string(x.c) + ") != spec I (" +
                                    std::to_string(spec.in_channels) + ")");
    }
    const int ipg = spec.in_per_group();
    if (cache) {
        cache->inputs.clear();
        cache->inputs.reserve(static_cast<std::size_t>(spec.groups));
        cache->spec = spec;
    }
    std::vector<TensorT<S>> outputs;
    outputs.reserve(static_cast<std::size_t>(spec.groups));
    for (int i = 0; i < spec.groups; ++i) {
        TensorT<S> xi = slice_channels(x, i * ipg, ipg);
        TensorT<S> zi = (i == 0) ? std::move(xi)
                                 : concat_channels<S>({&xi, &outputs.back()});
        TensorT<S> yi = conv2d(zi, w.blocks[static_cast<std::size_t>(i)], 1, 0);
        if (cache) cache->inputs.push_back(std::move(zi));
        outputs.push_back(std::move(yi));
    }
    TensorT<S> y = concat_channels(outputs);
    if (cache) cache->valid = true;
    return y;
}

template <class S>
struct HgcGrads {
    TensorT<S> dx;
    std::vector<ConvWeightsT<S>> dblocks;
};

template <class S>
HgcGrads<S> hgc_backward(const TensorT<S>& dy, const HgcCache<S>& cache, const HgcWeightsT<S>& w) {
    if (!cache.valid) throw std::logic_error("hgc_backward: forward pass has not been run");
    const HgcLayerSpec& spec = cache.spec;
    validate_hgc_weights(w, spec);
    const int ipg = spec.in_per_group();
    const int opg = spec.out_per_group();
    if (dy.c != spec.out_channels) {
        throw std::invalid_argument("hgc_backward: upstream channels (" + std::to_string(dy.c) +
                                    ") != spec O (" + std::to_string(spec.out_channels) + ")");
    }

    HgcGrads<S> out;
    out.dx = TensorT<S>(dy.n, spec.in_channels, dy.h, dy.w);
    out.dblocks.resize(static_cast<std::size_t>(spec.groups));

    TensorT<S> carry;  // gradient flowing into Y_{i-1} from group i
    bool has_carry = false;
    for (int i = spec.groups - 1; i >= 0; --i) {
        TensorT<S> up = slice_channels(dy, i * opg, opg);
        if (has_carry) {
            for (std::size_t k = 0; k < up.data.size(); ++k) up.data[k] += carry.data[k];
        }
        const TensorT<S>& zi = cache.inputs[static_cast<std::size_t>(i)];
        ConvGrads<S> g = conv2d_backward(zi, w.blocks[static_cast<std::size_t>(i)], 1, 0, up);
        out.dblocks[static_cast<std::size_t>(i)] = std::move(g.dw);
        // First I/G channels of dz belong to X_i; the rest feed Y_{i-1}.
        for (int in = 0; in < g.dx.n; ++in) {
            std::memcpy(out.dx.channel_ptr(in, i * ipg), g.dx.channel_ptr(in, 0),
                        static_cast<std::size_t>(ipg) * g.dx.plane() * sizeof(S));
        }
        if (i > 0) {
            carry = slice_channels(g.dx, ipg, opg);
            has_carry = true;
        }
    }
    return out;
}

// Standard group convolution (the ablation baseline): a plain grouped 1x1.
template <class S>
TensorT<S> sgc_forward(const TensorT<S>& x, const ConvWeightsT<S>& w, int groups) {
    if (w.groups != groups) {
        throw std::invalid_argument("sgc_forward: weight groups (" + std::to_string(w.groups) +
                                    ") != requested groups (" + std::to_string(groups) + ")");
    }
    if (w.kh != 1 || w.kw != 1) {
        throw std::invalid_argument("sgc_forward: kernel must be 1x1");
    }
    return conv2d(x, w, 1, 0);
}

}  // namespace hgcnet
