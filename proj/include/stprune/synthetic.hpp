#pragma once

#include <cstdint>
#include <string>

#include "stprune/error.hpp"
#include "stprune/model.hpp"
#include "stprune/rng.hpp"

namespace stprune {

enum class Planted { none, dup_neurons, dup_heads };

// Architecture recipe for synthetic desk-scale models and calibration data.
struct ArchSpec {
    std::size_t width = 32;     // n
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t head_dim = 8;
    std::size_t ffn_width = 64;  // f
    std::size_t examples = 32;   // m
    std::size_t seq_len = 8;     // b
    std::size_t holdout_examples = 16;
    std::size_t classes = 0;  // 0 = no classifier head
    NormPlacement norm_placement = NormPlacement::post;
    NormKind norm_kind = NormKind::layernorm;
    Activation activation = Activation::gelu;
    Planted planted = Planted::none;
};

namespace detail {

inline Matrix gaussian_weight(std::size_t rows, std::size_t cols, std::size_t fan_in,
                              SeqRng& rng) {
    const double gain = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(rows, cols);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = gain * rng.normal();
    return w;
}

}  // namespace detail

// Random model with 1/sqrt(fan-in) Gaussian weights. The planted modes make
// the second half of each layer's neurons or heads exact duplicates of the
// first half, so pruning to half size is exactly recoverable.
inline TransformerModel gen_model(const ArchSpec& spec, std::uint64_t seed) {
    if (spec.width == 0 || spec.layers == 0 || spec.heads == 0 || spec.head_dim == 0 ||
        spec.ffn_width == 0)
        throw DimError("gen_model: all architecture dimensions must be positive");
    if (spec.planted == Planted::dup_neurons && spec.ffn_width % 2 != 0)
        throw DimError("gen_model: dup-neurons needs an even ffn width");
    if (spec.planted == Planted::dup_heads && spec.heads % 2 != 0)
        throw DimError("gen_model: dup-heads needs an even head count");

    TransformerModel m;
    m.width = spec.width;
    m.norm_placement = spec.norm_placement;
    m.norm_kind = spec.norm_kind;

    std::uint64_t stream = 1;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        SeqRng rng(seed, stream++);
        TransformerBlock blk;
        auto& a = blk.attn;
        a.heads = spec.heads;
        a.head_dim = spec.head_dim;
        const std::size_t hd = a.proj_width();
        a.wq = detail::gaussian_weight(spec.width, hd, spec.width, rng);
        a.wk = detail::gaussian_weight(spec.width, hd, spec.width, rng);
        a.wv = detail::gaussian_weight(spec.width, hd, spec.width, rng);
        a.wo = detail::gaussian_weight(hd, spec.width, hd, rng);
        a.bq.assign(hd, 0.0);
        a.bk.assign(hd, 0.0);
        a.bv.assign(hd, 0.0);
        a.bo.assign(spec.width, 0.0);
        if (spec.planted == Planted::dup_heads) {
            const std::size_t half = spec.heads / 2;
            for (std::size_t h = 0; h < half; ++h)
                for (std::size_t i = 0; i < spec.width; ++i)
                    for (std::size_t d = 0; d < spec.head_dim; ++d) {
                        const std::size_t src = h * spec.head_dim + d;
                        const std::size_t dst = (h + half) * spec.head_dim + d;
                        a.wq(i, dst) = a.wq(i, src);
                        a.wk(i, dst) = a.wk(i, src);
                        a.wv(i, dst) = a.wv(i, src);
                    }
        }

        auto& f = blk.ffn;
        f.activation = spec.activation;
        f.w1 = detail::gaussian_weight(spec.width, spec.ffn_width, spec.width, rng);
        f.w2 = detail::gaussian_weight(spec.ffn_width, spec.width, spec.ffn_width, rng);
        f.b1.assign(spec.ffn_width, 0.0);
        f.b2.assign(spec.width, 0.0);
        if (spec.planted == Planted::dup_neurons) {
            const std::size_t half = spec.ffn_width / 2;
            for (std::size_t j = 0; j < half; ++j)
                for (std::size_t i = 0; i < spec.width; ++i) f.w1(i, j + half) = f.w1(i, j);
        }

        blk.norm1.gain.assign(spec.width, 1.0);
        blk.norm1.bias.assign(spec.width, 0.0);
        blk.norm2.gain.assign(spec.width, 1.0);
        blk.norm2.bias.assign(spec.width, 0.0);
        m.layers.push_back(std::move(blk));
    }

    if (spec.classes > 0) {
        SeqRng rng(seed, stream++);
        Classifier h;
        h.w = detail::gaussian_weight(spec.width, spec.classes, spec.width, rng);
        h.b.assign(spec.classes, 0.0);
        m.head = std::move(h);
    }
    return m;
}

// Random calibration sequences with random valid lengths in [1, b]. Distinct
// purposes (calibration vs holdout) use distinct streams of the same seed.
inline CalibrationSet gen_calib(std::size_t examples, std::size_t seq_len, std::size_t width,
                                std::uint64_t seed, std::uint64_t stream = 0x10AD) {
    if (examples == 0 || seq_len == 0 || width == 0)
        throw DimError("gen_calib: dimensions must be positive");
    CalibrationSet c;
    c.seq_len = seq_len;
    SeqRng lrng(seed, stream);
    c.lengths.resize(examples);
    for (std::size_t e = 0; e < examples; ++e)
        c.lengths[e] = 1 + static_cast<std::size_t>(lrng.below(seq_len));
    c.values = Matrix(examples * seq_len, width);
    SeqRng vrng(seed, stream + 1);
    for (std::size_t i = 0; i < c.values.size(); ++i) c.values.data()[i] = vrng.normal();
    return c;
}

}  // namespace stprune
