#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "stprune/error.hpp"
#include "stprune/id.hpp"
#include "stprune/linalg.hpp"
#include "stprune/matrix.hpp"
#include "stprune/model.hpp"
#include "stprune/sketch.hpp"

namespace stprune {

enum class CorrectionMode { fold_qr, block_diag, refine_ls };
enum class BlockKind { ffn, attention };

inline std::string to_string(CorrectionMode m) {
    switch (m) {
        case CorrectionMode::fold_qr: return "fold_qr";
        case CorrectionMode::block_diag: return "block_diag";
        default: return "refine_ls";
    }
}

struct LayerPruneRecord {
    std::size_t layer = 0;
    BlockKind block = BlockKind::ffn;
    std::vector<std::size_t> kept;        // kept neuron indices / kept heads, selection order
    std::vector<std::size_t> head_order;  // full pi_A (attention only)
    double predicted_err = 0.0;           // tail Frobenius proxy at the chosen keep count
    double measured_err = 0.0;            // calibration residual at the sublayer output
    double correction_max_abs = 0.0;      // largest |t_ij|; > 1e3 signals instability
    CorrectionMode mode = CorrectionMode::fold_qr;
};

struct PruneOptions {
    bool ffn_weighting = true;  // scale neuron selection by outgoing row norms
    bool sketch_enabled = true;
    SketchKind sketch_kind = SketchKind::countsketch;
    std::size_t sketch_rows = 0;       // 0: 4x columns
    std::size_t sketch_threshold = 262144;  // rows above this are sketched first
    std::size_t groups = 0;            // 0: ceil(cols/512)
    std::uint64_t seed = 0;
};

namespace detail {

// Reduce the selection matrix through a sketch when it is too tall. The
// sketch height never goes below the column count: a shorter sketch
// rank-exhausts the factorization and fakes zero error tails.
inline Matrix maybe_sketch(const Matrix& z, const PruneOptions& opt) {
    if (!opt.sketch_enabled || z.rows() <= opt.sketch_threshold) return z;
    std::size_t s = opt.sketch_rows > 0 ? opt.sketch_rows : default_sketch_rows(z.cols());
    s = std::max(s, z.cols());
    if (s >= z.rows()) return z;
    return sketch_matrix(opt.sketch_kind, s, opt.seed, z);
}

struct ColumnSelection {
    std::vector<std::size_t> kept;  // selection order
    double predicted_err = 0.0;     // ||R22||_F of the selection factorization
};

inline ColumnSelection select_columns(const Matrix& zsel, std::size_t k,
                                      const PruneOptions& opt) {
    const Matrix zred = maybe_sketch(zsel, opt);
    const std::size_t g = opt.groups > 0 ? opt.groups : default_groups(zred.cols());
    ColumnSelection out;
    if (g > 1) {
        const std::size_t kpg = default_keep_per_group(k, g);
        out.kept = grouped_select(zred, g, kpg, k);
        // Proxy error from the shortlisted pool at the final stop.
        const Matrix pool = zred.gather_cols(out.kept);
        const QrFactorization f =
            cpqr(pool, true, QrStop::at_rank(std::min({k, pool.rows(), pool.cols()})));
        out.predicted_err = f.tail_normf;
    } else {
        const QrFactorization f = cpqr(zred, true, QrStop::at_rank(k));
        out.kept.assign(f.perm.begin(), f.perm.begin() + static_cast<std::ptrdiff_t>(k));
        out.predicted_err = f.tail_normf;
    }
    return out;
}

// Columns of one head, blocked contiguously.
inline std::vector<std::size_t> head_block_columns(std::span<const std::size_t> heads,
                                                   std::size_t head_dim) {
    std::vector<std::size_t> cols;
    cols.reserve(heads.size() * head_dim);
    for (std::size_t h : heads)
        for (std::size_t d = 0; d < head_dim; ++d) cols.push_back(h * head_dim + d);
    return cols;
}

inline void gather_vector(std::vector<double>& v, std::span<const std::size_t> idx) {
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
    v = std::move(out);
}

}  // namespace detail

// Heads-level matrix Z': one column per head, built by flattening each
// head's (rows x d_h) slice position-major then feature. The pivot order of
// its CPQR ranks heads most-to-least important.
inline Matrix heads_level_matrix(const Matrix& h_concat, std::size_t num_heads) {
    if (num_heads == 0 || h_concat.cols() % num_heads != 0)
        throw DimError("heads_level_matrix: columns not divisible into " +
                       std::to_string(num_heads) + " heads");
    const std::size_t d = h_concat.cols() / num_heads;
    const std::size_t rows = h_concat.rows();
    Matrix z(rows * d, num_heads);
    for (std::size_t h = 0; h < num_heads; ++h)
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t r = 0; r < rows; ++r)
                z(c * rows + r, h) = h_concat(r, h * d + c);
    return z;
}

inline QrFactorization heads_factorization(const Matrix& h_concat, std::size_t num_heads,
                                           const PruneOptions& opt = {}) {
    const Matrix z = detail::maybe_sketch(heads_level_matrix(h_concat, num_heads), opt);
    return cpqr(z, true);
}

// Head importance order pi_A from a CPQR of Z'.
inline std::vector<std::size_t> select_heads(const Matrix& h_concat, std::size_t num_heads,
                                             std::size_t k, const PruneOptions& opt = {}) {
    if (k < 1 || k > num_heads)
        throw DimError("select_heads: k must be in [1, " + std::to_string(num_heads) + "]");
    return heads_factorization(h_concat, num_heads, opt).perm;
}

// Correction for pruning to the first k heads of head_order:
//  - fold_qr: unpivoted QR on the head-permuted concat, interpolation per the
//    standard identity, columns back in original order.
//  - block_diag (ablation): scalar per head pair from the heads-level CPQR,
//    lifted to a diagonal d_h x d_h block; kept blocks are the identity.
//  - refine_ls: dense least-squares map from kept-head columns onto target.
inline Matrix head_correction(const Matrix& h_concat, std::span<const std::size_t> head_order,
                              std::size_t k, std::size_t num_heads, CorrectionMode mode,
                              const Matrix* target = nullptr) {
    if (num_heads == 0 || h_concat.cols() % num_heads != 0)
        throw DimError("head_correction: bad head blocking");
    if (k < 1 || k > num_heads) throw DimError("head_correction: k out of range");
    if (head_order.size() != num_heads)
        throw DimError("head_correction: head_order must list every head");
    const std::size_t d = h_concat.cols() / num_heads;
    const auto kept_heads = head_order.subspan(0, k);
    const std::vector<std::size_t> kept_cols = detail::head_block_columns(kept_heads, d);

    switch (mode) {
        case CorrectionMode::fold_qr:
            return interpolation_for_columns(h_concat, kept_cols);
        case CorrectionMode::block_diag: {
            const Matrix z = heads_level_matrix(h_concat, num_heads);
            const Matrix t_heads = interpolation_for_columns(z, kept_heads);
            Matrix t(k * d, num_heads * d, 0.0);
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < num_heads; ++j)
                    for (std::size_t c = 0; c < d; ++c)
                        t(i * d + c, j * d + c) = t_heads(i, j);
            return t;
        }
        default: {
            if (target == nullptr)
                throw DimError("head_correction: refine_ls needs the original concat target");
            if (target->rows() != h_concat.rows() || target->cols() != num_heads * d)
                throw DimError("head_correction: target shape mismatch");
            return least_squares(h_concat.gather_cols(kept_cols), *target);
        }
    }
}

// Prune one attention block to k heads. Selection ranks heads by CPQR pivot
// order on Z'; the fused correction preserves the layer output width.
inline LayerPruneRecord prune_attention(TransformerModel& model, std::size_t layer,
                                        std::size_t k, const CaptureSet& captures,
                                        CorrectionMode mode, const PruneOptions& opt = {},
                                        const Matrix* refine_target = nullptr) {
    if (layer >= model.layers.size()) throw DimError("prune_attention: layer out of range");
    AttentionLayer& a = model.layers[layer].attn;
    if (k < 1 || k > a.heads) throw DimError("prune_attention: k out of range");
    const Matrix& concat = captures.at(capture_name(CapturePoint::attn_concat, layer));
    if (concat.cols() != a.proj_width())
        throw DimError("prune_attention: captured concat width mismatch");

    const QrFactorization zf = heads_factorization(concat, a.heads, opt);
    const std::vector<double> curve = error_curve(zf);

    LayerPruneRecord rec;
    rec.layer = layer;
    rec.block = BlockKind::attention;
    rec.mode = mode;
    rec.head_order = zf.perm;
    rec.predicted_err = curve[k];

    if (k == a.heads) {
        // Keeping every head is the identity; leave the tensors untouched.
        rec.kept.resize(a.heads);
        std::iota(rec.kept.begin(), rec.kept.end(), 0);
        return rec;
    }

    rec.kept.assign(zf.perm.begin(), zf.perm.begin() + static_cast<std::ptrdiff_t>(k));
    const Matrix t =
        head_correction(concat, zf.perm, k, a.heads, mode, refine_target);
    rec.correction_max_abs = max_abs(t);

    const std::vector<std::size_t> kept_cols =
        detail::head_block_columns(rec.kept, a.head_dim);
    const Matrix& reference = refine_target != nullptr ? *refine_target : concat;
    rec.measured_err = frobenius_norm(
        matmul(matmul(concat.gather_cols(kept_cols), t) - reference, a.wo));

    a.wq = a.wq.gather_cols(kept_cols);
    a.wk = a.wk.gather_cols(kept_cols);
    a.wv = a.wv.gather_cols(kept_cols);
    detail::gather_vector(a.bq, kept_cols);
    detail::gather_vector(a.bk, kept_cols);
    detail::gather_vector(a.bv, kept_cols);
    a.wo = matmul(t, a.wo);
    a.heads = k;
    return rec;
}

// Prune one FFN block to k neurons. Selection runs on the (optionally
// next-layer-weighted, optionally sketched) hidden activations; the
// correction always comes from unweighted data. In refine_ls mode the new
// second layer is solved directly against the original block output, which
// also absorbs upstream pruning error.
inline LayerPruneRecord prune_ffn(TransformerModel& model, std::size_t layer, std::size_t k,
                                  const CaptureSet& captures, CorrectionMode mode,
                                  const PruneOptions& opt = {}) {
    if (layer >= model.layers.size()) throw DimError("prune_ffn: layer out of range");
    FfnLayer& f = model.layers[layer].ffn;
    const std::size_t width = f.hidden_width();
    if (k < 1 || k > width) throw DimError("prune_ffn: k out of range");
    if (mode == CorrectionMode::block_diag)
        throw DimError("prune_ffn: block_diag applies to attention heads only");
    const Matrix& zh = captures.at(capture_name(CapturePoint::ffn_hidden, layer));
    if (zh.cols() != width) throw DimError("prune_ffn: captured hidden width mismatch");

    LayerPruneRecord rec;
    rec.layer = layer;
    rec.block = BlockKind::ffn;
    rec.mode = mode;

    if (k == width) {
        rec.kept.resize(width);
        std::iota(rec.kept.begin(), rec.kept.end(), 0);
        return rec;
    }

    const Matrix zsel = opt.ffn_weighting ? next_layer_weighting(zh, f.w2) : zh;
    detail::ColumnSelection sel = detail::select_columns(zsel, k, opt);
    rec.kept = sel.kept;
    rec.predicted_err = sel.predicted_err;

    const Matrix zk = zh.gather_cols(rec.kept);
    Matrix w2_new;
    if (mode == CorrectionMode::fold_qr) {
        const Matrix t = interpolation_for_columns(zh, rec.kept);
        rec.correction_max_abs = max_abs(t);
        w2_new = matmul(t, f.w2);
        rec.measured_err = frobenius_norm(matmul(zk, w2_new) - matmul(zh, f.w2));
    } else {
        const std::string target_name = capture_name(CapturePoint::layer_out, layer);
        if (!captures.has(target_name))
            throw DimError("prune_ffn: refine_ls needs the original " + target_name);
        Matrix y = captures.at(target_name);
        if (y.rows() != zh.rows() || y.cols() != model.width)
            throw DimError("prune_ffn: refine target shape mismatch");
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) -= f.b2[j];
        w2_new = least_squares(zk, y);
        rec.measured_err = frobenius_norm(matmul(zk, w2_new) - y);
    }

    f.w1 = f.w1.gather_cols(rec.kept);
    detail::gather_vector(f.b1, rec.kept);
    f.w2 = std::move(w2_new);
    return rec;
}

}  // namespace stprune
