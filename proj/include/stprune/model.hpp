#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stprune/error.hpp"
#include "stprune/matrix.hpp"

namespace stprune {

enum class Activation { relu, gelu };
enum class NormPlacement { post, pre };  // post: BERT-style, pre: Llama-style
enum class NormKind { layernorm, rmsnorm };

constexpr double kNormEps = 1e-5;

struct AttentionLayer {
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    Matrix wq, wk, wv;            // n x (heads*head_dim), blocked by head
    std::vector<double> bq, bk, bv;
    Matrix wo;                    // (heads*head_dim) x n
    std::vector<double> bo;

    std::size_t proj_width() const { return heads * head_dim; }
};

struct FfnLayer {
    Matrix w1;  // n x f
    std::vector<double> b1;
    Activation activation = Activation::gelu;
    Matrix w2;  // f x n
    std::vector<double> b2;

    std::size_t hidden_width() const { return w1.cols(); }
};

struct NormParams {
    std::vector<double> gain;
    std::vector<double> bias;  // unused by rmsnorm, kept zero
};

struct TransformerBlock {
    AttentionLayer attn;
    NormParams norm1;  // attention sublayer
    FfnLayer ffn;
    NormParams norm2;  // ffn sublayer
};

struct Classifier {
    Matrix w;  // n x classes
    std::vector<double> b;
};

struct TransformerModel {
    std::size_t width = 0;  // hidden width n
    NormPlacement norm_placement = NormPlacement::post;
    NormKind norm_kind = NormKind::layernorm;
    std::vector<TransformerBlock> layers;
    std::optional<Classifier> head;  // pooled at the first position
};

inline void validate_model(const TransformerModel& m) {
    if (m.width == 0) throw FormatError("model: zero hidden width");
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& blk = m.layers[l];
        const auto& a = blk.attn;
        const auto& f = blk.ffn;
        const std::string where = "model layer " + std::to_string(l) + ": ";
        if (a.heads == 0 || a.head_dim == 0) throw FormatError(where + "empty attention");
        const std::size_t hd = a.proj_width();
        if (a.wq.rows() != m.width || a.wq.cols() != hd || a.wk.rows() != m.width ||
            a.wk.cols() != hd || a.wv.rows() != m.width || a.wv.cols() != hd)
            throw FormatError(where + "k/q/v projection shape mismatch");
        if (a.wo.rows() != hd || a.wo.cols() != m.width)
            throw FormatError(where + "output projection shape mismatch");
        if (a.bq.size() != hd || a.bk.size() != hd || a.bv.size() != hd ||
            a.bo.size() != m.width)
            throw FormatError(where + "attention bias size mismatch");
        if (f.hidden_width() == 0) throw FormatError(where + "empty ffn");
        if (f.w1.rows() != m.width || f.w2.rows() != f.hidden_width() ||
            f.w2.cols() != m.width)
            throw FormatError(where + "ffn shape mismatch");
        if (f.b1.size() != f.hidden_width() || f.b2.size() != m.width)
            throw FormatError(where + "ffn bias size mismatch");
        if (blk.norm1.gain.size() != m.width || blk.norm1.bias.size() != m.width ||
            blk.norm2.gain.size() != m.width || blk.norm2.bias.size() != m.width)
            throw FormatError(where + "norm parameter size mismatch");
        for (const Matrix* t : {&a.wq, &a.wk, &a.wv, &a.wo, &f.w1, &f.w2})
            if (!all_finite(*t)) throw FormatError(where + "non-finite tensor values");
    }
    if (m.head) {
        if (m.head->w.rows() != m.width || m.head->w.cols() == 0 ||
            m.head->b.size() != m.head->w.cols())
            throw FormatError("model: classifier shape mismatch");
        if (!all_finite(m.head->w)) throw FormatError("model: non-finite classifier");
    }
}

// Calibration batch: m sequences of b positions, each an n-vector; only the
// first lengths[i] positions of sequence i are valid.
struct CalibrationSet {
    std::size_t seq_len = 0;            // b
    std::vector<std::size_t> lengths;   // per example, in [1, b]
    Matrix values;                      // (m*b) x n, example-major

    std::size_t examples() const { return lengths.size(); }
    std::size_t total_valid() const {
        std::size_t s = 0;
        for (std::size_t v : lengths) s += v;
        return s;
    }
};

inline void validate_calib(const CalibrationSet& c) {
    if (c.seq_len == 0 || c.lengths.empty()) throw FormatError("calibration: empty");
    for (std::size_t v : c.lengths)
        if (v == 0 || v > c.seq_len)
            throw FormatError("calibration: length " + std::to_string(v) +
                              " outside [1, " + std::to_string(c.seq_len) + "]");
    if (c.values.rows() != c.examples() * c.seq_len)
        throw FormatError("calibration: row count does not match m*b");
    if (!all_finite(c.values)) throw FormatError("calibration: non-finite values");
}

enum class CapturePoint { attn_concat, ffn_hidden, layer_out };

inline std::string capture_name(CapturePoint p, std::size_t layer) {
    const char* base = p == CapturePoint::attn_concat ? "attn_concat"
                       : p == CapturePoint::ffn_hidden ? "ffn_hidden"
                                                       : "layer_out";
    return std::string(base) + "(" + std::to_string(layer) + ")";
}

// Masked, flattened activations gathered at named points: rows are the valid
// token positions of every example in batch order.
struct CaptureSet {
    std::map<std::string, Matrix> points;
    std::vector<std::size_t> lengths;

    bool has(const std::string& name) const { return points.count(name) != 0; }
    const Matrix& at(const std::string& name) const {
        auto it = points.find(name);
        if (it == points.end()) throw DimError("capture point missing: " + name);
        return it->second;
    }
};

struct ForwardResult {
    Matrix hidden;   // (m*b) x n final states; masked rows pass through
    Matrix logits;   // m x classes when a classifier head is present
    CaptureSet captures;
};

namespace detail {

inline double activate(Activation a, double x) {
    if (a == Activation::relu) return x > 0.0 ? x : 0.0;
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));  // exact gelu
}

// y = x * w + bias (row-broadcast).
inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
    Matrix y = matmul(x, w);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bias[j];
    return y;
}

inline void apply_norm(Matrix& x, const NormParams& p, NormKind kind) {
    const std::size_t n = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double* r = x.data() + i * n;
        if (kind == NormKind::layernorm) {
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j) mean += r[j];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + kNormEps);
            for (std::size_t j = 0; j < n; ++j)
                r[j] = (r[j] - mean) * inv * p.gain[j] + p.bias[j];
        } else {
            double ms = 0.0;
            for (std::size_t j = 0; j < n; ++j) ms += r[j] * r[j];
            ms /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(ms + kNormEps);
            for (std::size_t j = 0; j < n; ++j) r[j] = r[j] * inv * p.gain[j];
        }
    }
}

// Multi-head attention over the valid positions of one example; softmax is
// row-wise over valid key positions with 1/sqrt(d_h) scaling.
inline Matrix attention_concat(const AttentionLayer& a, const Matrix& x) {
    const std::size_t len = x.rows();
    const Matrix q = affine(x, a.wq, a.bq);
    const Matrix k = affine(x, a.wk, a.bk);
    const Matrix v = affine(x, a.wv, a.bv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(a.head_dim));

    Matrix concat(len, a.proj_width());
    std::vector<double> logits(len);
    for (std::size_t h = 0; h < a.heads; ++h) {
        const std::size_t c0 = h * a.head_dim;
        for (std::size_t i = 0; i < len; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < len; ++j) {
                double s = 0.0;
                for (std::size_t d = 0; d < a.head_dim; ++d)
                    s += q(i, c0 + d) * k(j, c0 + d);
                logits[j] = s * scale;
                mx = std::max(mx, logits[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                z += logits[j];
            }
            for (std::size_t d = 0; d < a.head_dim; ++d) {
                double s = 0.0;
                for (std::size_t j = 0; j < len; ++j) s += logits[j] * v(j, c0 + d);
                concat(i, c0 + d) = s / z;
            }
        }
    }
    return concat;
}

}  // namespace detail

// Full forward pass with activation capture. Masked positions are excluded
// from softmax normalization and from every captured row; their hidden
// states pass through unchanged.
inline ForwardResult forward_with_capture(const TransformerModel& model,
                                          const CalibrationSet& data,
                                          const std::vector<std::string>& capture_points = {}) {
    if (data.values.cols() != model.width)
        throw DimError("forward: input width " + std::to_string(data.values.cols()) +
                       " does not match model width " + std::to_string(model.width));
    validate_calib(data);

    // Validate capture names and size their buffers.
    const std::size_t total = data.total_valid();
    ForwardResult out;
    out.captures.lengths = data.lengths;
    for (const std::string& name : capture_points) {
        bool known = false;
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            if (name == capture_name(CapturePoint::attn_concat, l)) {
                out.captures.points.emplace(name,
                                            Matrix(total, model.layers[l].attn.proj_width()));
                known = true;
            } else if (name == capture_name(CapturePoint::ffn_hidden, l)) {
                out.captures.points.emplace(name,
                                            Matrix(total, model.layers[l].ffn.hidden_width()));
                known = true;
            } else if (name == capture_name(CapturePoint::layer_out, l)) {
                out.captures.points.emplace(name, Matrix(total, model.width));
                known = true;
            }
            if (known) break;
        }
        if (!known) throw DimError("forward: unknown capture point " + name);
    }

    const bool pre = model.norm_placement == NormPlacement::pre;
    out.hidden = data.values;
    if (model.head)
        out.logits = Matrix(data.examples(), model.head->w.cols());

    std::size_t cap_row = 0;
    for (std::size_t e = 0; e < data.examples(); ++e) {
        const std::size_t len = data.lengths[e];
        Matrix x = data.values.block(e * data.seq_len, 0, len, model.width);

        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            const TransformerBlock& blk = model.layers[l];

            Matrix ain = x;
            if (pre) detail::apply_norm(ain, blk.norm1, model.norm_kind);
            const Matrix concat = detail::attention_concat(blk.attn, ain);
            if (auto it = out.captures.points.find(capture_name(CapturePoint::attn_concat, l));
                it != out.captures.points.end())
                for (std::size_t i = 0; i < len; ++i)
                    for (std::size_t j = 0; j < concat.cols(); ++j)
                        it->second(cap_row + i, j) = concat(i, j);
            const Matrix attn_out = detail::affine(concat, blk.attn.wo, blk.attn.bo);
            x = x + attn_out;
            if (!pre) detail::apply_norm(x, blk.norm1, model.norm_kind);

            Matrix fin = x;
            if (pre) detail::apply_norm(fin, blk.norm2, model.norm_kind);
            Matrix hiddenact = detail::affine(fin, blk.ffn.w1, blk.ffn.b1);
            for (std::size_t i = 0; i < hiddenact.size(); ++i)
                hiddenact.data()[i] = detail::activate(blk.ffn.activation, hiddenact.data()[i]);
            if (auto it = out.captures.points.find(capture_name(CapturePoint::ffn_hidden, l));
                it != out.captures.points.end())
                for (std::size_t i = 0; i < len; ++i)
                    for (std::size_t j = 0; j < hiddenact.cols(); ++j)
                        it->second(cap_row + i, j) = hiddenact(i, j);
            const Matrix ffn_out = detail::affine(hiddenact, blk.ffn.w2, blk.ffn.b2);
            if (auto it = out.captures.points.find(capture_name(CapturePoint::layer_out, l));
                it != out.captures.points.end())
                for (std::size_t i = 0; i < len; ++i)
                    for (std::size_t j = 0; j < ffn_out.cols(); ++j)
                        it->second(cap_row + i, j) = ffn_out(i, j);
            x = x + ffn_out;
            if (!pre) detail::apply_norm(x, blk.norm2, model.norm_kind);
        }

        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < model.width; ++j)
                out.hidden(e * data.seq_len + i, j) = x(i, j);
        if (model.head) {
            for (std::size_t c = 0; c < model.head->w.cols(); ++c) {
                double s = model.head->b[c];
                for (std::size_t j = 0; j < model.width; ++j)
                    s += x(0, j) * model.head->w(j, c);  // pooling = first position
                out.logits(e, c) = s;
            }
        }
        cap_row += len;
    }
    return out;
}

// FLOPs for one inference at sequence length b. Matrix multiplies count a
// multiply-add as 2 FLOPs; softmax, norms and biases are excluded. Only
// ratios are ever compared, so the convention cancels.
inline std::uint64_t count_block_flops_attention(std::size_t n, std::size_t proj_width,
                                                 std::size_t b) {
    const std::uint64_t bb = b, nn = n, hd = proj_width;
    return 2 * bb * nn * (3 * hd) + 2 * bb * bb * hd + 2 * bb * bb * hd + 2 * bb * hd * nn;
}

inline std::uint64_t count_block_flops_ffn(std::size_t n, std::size_t f, std::size_t b) {
    const std::uint64_t bb = b, nn = n, ff = f;
    return 2 * bb * nn * ff + 2 * bb * ff * nn;
}

inline std::uint64_t count_flops(const TransformerModel& m, std::size_t b) {
    if (b < 1) throw DimError("count_flops: sequence length must be >= 1");
    std::uint64_t total = 0;
    for (const auto& blk : m.layers) {
        total += count_block_flops_attention(m.width, blk.attn.proj_width(), b);
        total += count_block_flops_ffn(m.width, blk.ffn.hidden_width(), b);
    }
    return total;
}

inline double flops_ratio(const TransformerModel& pruned, const TransformerModel& original,
                          std::size_t b) {
    return static_cast<double>(count_flops(pruned, b)) /
           static_cast<double>(count_flops(original, b));
}

}  // namespace stprune
