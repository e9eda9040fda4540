#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "stprune/error.hpp"
#include "stprune/linalg.hpp"
#include "stprune/matrix.hpp"
#include "stprune/rng.hpp"

namespace stprune {

enum class SketchKind { countsketch, gaussian };

// Streaming row-dimension reduction of an activation matrix. The bucket,
// sign and Gaussian draws depend only on (seed, global row index), so the
// accumulated state is identical for any partitioning of the row stream.
class SketchAccumulator {
public:
    SketchAccumulator(SketchKind kind, std::size_t sketch_rows, std::size_t cols,
                      std::uint64_t seed)
        : kind_(kind), seed_(seed), state_(sketch_rows, cols) {
        if (sketch_rows == 0 || cols == 0)
            throw DimError("SketchAccumulator: sketch dimensions must be positive");
    }

    void absorb(const Matrix& block) {
        if (block.cols() != state_.cols())
            throw DimError("sketch absorb: block has " + std::to_string(block.cols()) +
                           " cols, accumulator expects " + std::to_string(state_.cols()));
        const std::size_t s = state_.rows();
        const std::size_t m = state_.cols();
        if (kind_ == SketchKind::countsketch) {
            for (std::size_t r = 0; r < block.rows(); ++r) {
                const std::uint64_t g = rows_seen_ + r;
                const std::size_t bucket = static_cast<std::size_t>(rng::below(seed_, 0xB0C5, g, s));
                const double sign = rng::sign(seed_, 0x51F5, g);
                double* dst = state_.data() + bucket * m;
                const double* src = block.data() + r * m;
                for (std::size_t j = 0; j < m; ++j) dst[j] += sign * src[j];
            }
        } else {
            const double scale = 1.0 / std::sqrt(static_cast<double>(s));
            for (std::size_t r = 0; r < block.rows(); ++r) {
                const std::uint64_t g = rows_seen_ + r;
                const double* src = block.data() + r * m;
                for (std::size_t i = 0; i < s; ++i) {
                    const double gij = scale * rng::normal(seed_, 0x6A05 + i, g);
                    double* dst = state_.data() + i * m;
                    for (std::size_t j = 0; j < m; ++j) dst[j] += gij * src[j];
                }
            }
        }
        rows_seen_ += block.rows();
    }

    const Matrix& state() const { return state_; }
    std::size_t rows_seen() const { return rows_seen_; }
    SketchKind kind() const { return kind_; }
    std::uint64_t seed() const { return seed_; }

private:
    SketchKind kind_;
    std::uint64_t seed_;
    Matrix state_;
    std::size_t rows_seen_ = 0;
};

// One-shot convenience: sketch a whole matrix down to s rows.
inline Matrix sketch_matrix(SketchKind kind, std::size_t sketch_rows, std::uint64_t seed,
                            const Matrix& z) {
    SketchAccumulator acc(kind, sketch_rows, z.cols(), seed);
    acc.absorb(z);
    return acc.state();
}

// Tournament-style selection for very wide matrices: split the columns into
// g contiguous groups, shortlist keep_per_group candidates per group with a
// small pivoted QR, then pick final_k winners from the shortlist with one
// more pivoted QR. Returns original indices in ascending order.
inline std::vector<std::size_t> grouped_select(const Matrix& z, std::size_t groups,
                                               std::size_t keep_per_group,
                                               std::size_t final_k) {
    if (z.empty()) throw DimError("grouped_select: empty matrix");
    const std::size_t m = z.cols();
    if (groups == 0) throw DimError("grouped_select: need at least one group");
    groups = std::min(groups, m);
    const std::size_t per = (m + groups - 1) / groups;  // last group may be smaller

    std::vector<std::size_t> candidates;
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t c0 = g * per;
        if (c0 >= m) break;
        const std::size_t nc = std::min(per, m - c0);
        std::vector<std::size_t> local(nc);
        std::iota(local.begin(), local.end(), c0);
        const Matrix sub = z.gather_cols(local);
        const std::size_t keep = std::min({keep_per_group, nc, sub.rows()});
        const QrFactorization f = cpqr(sub, true, QrStop::at_rank(keep));
        for (std::size_t j = 0; j < keep; ++j) candidates.push_back(c0 + f.perm[j]);
    }
    std::sort(candidates.begin(), candidates.end());
    if (final_k > candidates.size())
        throw DimError("grouped_select: final_k " + std::to_string(final_k) +
                       " exceeds the candidate count " + std::to_string(candidates.size()));

    const Matrix pool = z.gather_cols(candidates);
    const QrFactorization f = cpqr(pool, true, QrStop::at_rank(std::min(final_k, std::min(pool.rows(), pool.cols()))));
    if (f.rank_used < final_k)
        throw DimError("grouped_select: final_k exceeds min(rows, candidates)");
    std::vector<std::size_t> out(final_k);
    for (std::size_t j = 0; j < final_k; ++j) out[j] = candidates[f.perm[j]];
    std::sort(out.begin(), out.end());
    return out;
}

// Default sketch height: standard 4x-columns oversampling.
inline std::size_t default_sketch_rows(std::size_t cols) { return 4 * cols; }

// Default group count for grouped selection.
inline std::size_t default_groups(std::size_t cols) { return (cols + 511) / 512; }

inline std::size_t default_keep_per_group(std::size_t final_k, std::size_t groups) {
    return (2 * final_k + groups - 1) / groups;
}

}  // namespace stprune
