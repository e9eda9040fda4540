// Acceptance suite: one self-contained check per criterion, one printed
// PASS/FAIL line each, nonzero exit if any check fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <chrono>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "stprune/pipeline.hpp"
#include "test_support.hpp"

using namespace stprune;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%2d] %-34s %s  (%s)\n", number, name.c_str(), pass ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::vector<std::string> all_points(const TransformerModel& m) {
    std::vector<std::string> pts;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        pts.push_back(capture_name(CapturePoint::attn_concat, l));
        pts.push_back(capture_name(CapturePoint::ffn_hidden, l));
        pts.push_back(capture_name(CapturePoint::layer_out, l));
    }
    return pts;
}

double masked_rel_err(const TransformerModel& a, const TransformerModel& b,
                      const CalibrationSet& c) {
    return evaluate(a, b, c).rel_err;
}

// 1. Reported ||R22||_2 equals the measured spectral residual of the id.
void criterion_1() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix a = testsup::random_matrix(200, 64, 5000 + seed);
        for (std::size_t k : {4u, 16u, 48u}) {
            const IdResult id = interpolative_decomposition(a, QrStop::at_rank(k));
            const Matrix res = a - matmul(a.gather_cols(id.indices), id.t);
            const double measured = testsup::sigma_max_oracle(res);
            worst = std::max(worst, std::abs(id.err2 - measured) / measured);
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max rel deviation %.2e over 30 ids", worst);
    report(1, "id error identity", worst <= 1e-6, buf);
}

// 2. id spectral error within 10x of the best possible rank-k error.
void criterion_2() {
    double worst_factor = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Matrix a = testsup::random_matrix(256, 128, 7000 + seed);
        const auto sv = singular_values_oracle(a);
        for (std::size_t k : {8u, 16u, 32u, 64u}) {
            const IdResult id = interpolative_decomposition(a, QrStop::at_rank(k));
            const Matrix res = a - matmul(a.gather_cols(id.indices), id.t);
            worst_factor = std::max(worst_factor, testsup::sigma_max_oracle(res) / sv[k]);
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max error / sigma_{k+1} = %.2f", worst_factor);
    report(2, "near-optimality vs svd oracle", worst_factor <= 10.0, buf);
}

// 3. Planted redundancy is removed exactly.
void criterion_3() {
    bool pass = true;
    std::string detail;

    // Duplicate column.
    Matrix a = testsup::random_matrix(40, 12, 31);
    for (std::size_t i = 0; i < 40; ++i) a(i, 5) = a(i, 2);
    const IdResult id = interpolative_decomposition(a, QrStop::at_rank(11));
    const double col_res = frobenius_norm(a - matmul(a.gather_cols(id.indices), id.t));
    if (col_res > 1e-8) {
        pass = false;
        detail += "dup-column residual " + std::to_string(col_res) + "; ";
    }

    // Duplicate neuron.
    {
        ArchSpec s;
        s.width = 32; s.layers = 2; s.heads = 4; s.head_dim = 8; s.ffn_width = 64;
        s.examples = 24; s.seq_len = 8;
        TransformerModel m = gen_model(s, 32);
        auto& f = m.layers[1].ffn;
        for (std::size_t i = 0; i < s.width; ++i) f.w1(i, 7) = f.w1(i, 3);
        f.b1[7] = f.b1[3];
        const TransformerModel orig = m;
        const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 33);
        const auto caps = forward_with_capture(m, c, all_points(m)).captures;
        const auto rec = prune_ffn(m, 1, s.ffn_width - 1, caps, CorrectionMode::fold_qr);
        const double e2e = masked_rel_err(m, orig, c);
        if (rec.measured_err > 1e-8 || e2e > 1e-8) {
            pass = false;
            detail += "dup-neuron residual " + std::to_string(rec.measured_err) + "; ";
        }
    }

    // Duplicate heads.
    {
        ArchSpec s;
        s.width = 32; s.layers = 2; s.heads = 4; s.head_dim = 8; s.ffn_width = 64;
        s.examples = 24; s.seq_len = 8;
        s.planted = Planted::dup_heads;
        TransformerModel m = gen_model(s, 34);
        const TransformerModel orig = m;
        const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 35);
        const auto caps = forward_with_capture(m, c, all_points(m)).captures;
        const auto rec = prune_attention(m, 0, s.heads / 2, caps, CorrectionMode::fold_qr);
        const double e2e = masked_rel_err(m, orig, c);
        if (rec.measured_err > 1e-8 || e2e > 1e-8) {
            pass = false;
            detail += "dup-head residual " + std::to_string(rec.measured_err) + "; ";
        }
    }
    if (pass) detail = "dup column/neuron/head all <= 1e-8";
    report(3, "exactness on planted redundancy", pass, detail);
}

// 4. Dense head correction < block-diagonal < no correction, every instance.
void criterion_4() {
    int ok = 0;
    const int trials = 20;
    for (std::uint64_t seed = 0; seed < trials; ++seed) {
        ArchSpec s;
        s.width = 32; s.layers = 1; s.heads = 8; s.head_dim = 4; s.ffn_width = 64;
        s.examples = 24; s.seq_len = 8;
        const TransformerModel m = gen_model(s, 400 + seed);
        const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 500 + seed);
        const auto caps = forward_with_capture(m, c, {"attn_concat(0)"}).captures;
        const Matrix& concat = caps.at("attn_concat(0)");
        const std::size_t k = 4;
        const auto order = select_heads(concat, s.heads, k);
        const auto kept_cols = detail::head_block_columns(
            std::span<const std::size_t>(order.data(), k), s.head_dim);
        const Matrix kept = concat.gather_cols(kept_cols);

        const Matrix t_dense =
            head_correction(concat, order, k, s.heads, CorrectionMode::fold_qr);
        const Matrix t_block =
            head_correction(concat, order, k, s.heads, CorrectionMode::block_diag);
        Matrix t_none(k * s.head_dim, s.heads * s.head_dim, 0.0);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t d = 0; d < s.head_dim; ++d)
                t_none(i * s.head_dim + d, order[i] * s.head_dim + d) = 1.0;

        const double e_dense = frobenius_norm(matmul(kept, t_dense) - concat);
        const double e_block = frobenius_norm(matmul(kept, t_block) - concat);
        const double e_none = frobenius_norm(matmul(kept, t_none) - concat);
        if (e_dense < e_block && e_block < e_none) ++ok;
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "strict ordering held on %d/%d toys", ok, trials);
    report(4, "two-step heads ablation", ok == trials, buf);
}

// 5. fold_qr beats dropping on every layer; refine_ls <= fold_qr end to end.
void criterion_5() {
    bool pass = true;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 10 && pass; ++seed) {
        ArchSpec s;
        s.width = 32; s.layers = 1; s.heads = 4; s.head_dim = 8; s.ffn_width = 96;
        s.examples = 32; s.seq_len = 8;
        TransformerModel m = gen_model(s, 600 + seed);
        const Matrix w2_orig = m.layers[0].ffn.w2;
        const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 700 + seed);
        const auto caps = forward_with_capture(m, c, all_points(m)).captures;
        const Matrix& zh = caps.at("ffn_hidden(0)");
        const auto rec = prune_ffn(m, 0, s.ffn_width / 2, caps, CorrectionMode::fold_qr);
        // Drop-only on the same kept set, at the same sublayer-output metric.
        const Matrix zk = zh.gather_cols(rec.kept);
        const Matrix drop =
            matmul(zk, w2_orig.gather_rows(rec.kept)) - matmul(zh, w2_orig);
        if (rec.measured_err > frobenius_norm(drop) + 1e-9) {
            pass = false;
            detail = "fold worse than drop at seed " + std::to_string(seed);
        }
    }
    if (pass) {
        ArchSpec s;
        s.width = 32; s.layers = 4; s.heads = 4; s.head_dim = 8; s.ffn_width = 64;
        s.examples = 24; s.seq_len = 8;
        const TransformerModel m = gen_model(s, 800);
        const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 801);
        PipelineConfig fold_cfg;
        fold_cfg.target_ratio = 0.6;
        PipelineConfig refine_cfg = fold_cfg;
        refine_cfg.mode = CorrectionMode::refine_ls;
        const double fold_err = run_pipeline(m, c, fold_cfg).calib_metrics.rel_err;
        const double refine_err = run_pipeline(m, c, refine_cfg).calib_metrics.rel_err;
        char buf[96];
        std::snprintf(buf, sizeof buf, "refine %.4f <= fold %.4f; drop dominated 10/10",
                      refine_err, fold_err);
        report(5, "ffn correction dominance", refine_err <= fold_err, buf);
        return;
    }
    report(5, "ffn correction dominance", false, detail);
}

// 6. Weighted tail(k) overestimates the measured layer-block output error
//    for >= 95% of (layer, k) pairs.
void criterion_6() {
    int total = 0, over = 0;
    std::vector<std::string> failures;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ArchSpec s;
        s.width = 32; s.layers = 4; s.heads = 4; s.head_dim = 8; s.ffn_width = 64;
        s.examples = 24; s.seq_len = 8;
        s.norm_placement = NormPlacement::post;
        const TransformerModel m = gen_model(s, 900 + seed);
        const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 950 + seed);
        const auto caps = forward_with_capture(m, c, all_points(m)).captures;
        for (std::size_t l = 0; l < s.layers; ++l) {
            const Matrix& zh = caps.at(capture_name(CapturePoint::ffn_hidden, l));
            const Matrix zw = next_layer_weighting(zh, m.layers[l].ffn.w2);
            const auto curve = error_curve(cpqr(zw, true));

            TransformerModel trunc = m;  // block output = output of the truncated net
            trunc.layers.resize(l + 1);
            trunc.head.reset();
            const ForwardResult base = forward_with_capture(trunc, c);
            for (std::size_t k = 8; k < s.ffn_width; k += 8) {
                ++total;
                TransformerModel pruned = trunc;
                prune_ffn(pruned, l, k, caps, CorrectionMode::fold_qr);
                const ForwardResult got = forward_with_capture(pruned, c);
                double num = 0.0;
                for (std::size_t e = 0; e < c.examples(); ++e)
                    for (std::size_t p = 0; p < c.lengths[e]; ++p)
                        for (std::size_t j = 0; j < s.width; ++j) {
                            const double d = base.hidden(e * c.seq_len + p, j) -
                                             got.hidden(e * c.seq_len + p, j);
                            num += d * d;
                        }
                if (curve[k] >= std::sqrt(num)) {
                    ++over;
                } else if (failures.size() < 5) {
                    failures.push_back("seed " + std::to_string(seed) + " layer " +
                                       std::to_string(l) + " k " + std::to_string(k));
                }
            }
        }
    }
    const double rate = 100.0 * over / total;
    std::string detail = std::to_string(over) + "/" + std::to_string(total) +
                         " pairs overestimated (" + std::to_string(rate).substr(0, 5) + "%)";
    for (const auto& f : failures) detail += "; miss at " + f;
    report(6, "tail norm overestimates block error", rate >= 95.0, detail);
}

// 7. CountSketch selection stays within 2x of unsketched id error.
void criterion_7() {
    double worst_ratio = 0.0;
    const std::size_t k = 16;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix z = testsup::low_rank_plus_noise(4096, 256, 16, 1e-3, 1000 + seed);
        const Matrix s = sketch_matrix(SketchKind::countsketch, default_sketch_rows(256),
                                       2000 + seed, z);
        const QrFactorization fs = cpqr(s, true, QrStop::at_rank(k));
        const std::vector<std::size_t> kept_s(fs.perm.begin(), fs.perm.begin() + k);
        const Matrix ts = interpolation_for_columns(z, kept_s);
        const double err_s =
            spectral_norm(z - matmul(z.gather_cols(kept_s), ts), 400, 1);

        const QrFactorization fp = cpqr(z, true, QrStop::at_rank(k));
        const std::vector<std::size_t> kept_p(fp.perm.begin(), fp.perm.begin() + k);
        const Matrix tp = interpolation_for_columns(z, kept_p);
        const double err_p =
            spectral_norm(z - matmul(z.gather_cols(kept_p), tp), 400, 1);
        worst_ratio = std::max(worst_ratio, err_s / err_p);
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max sketched/unsketched error ratio %.3f", worst_ratio);
    report(7, "sketched selection quality", worst_ratio <= 2.0, buf);
}

// 8. Greedy allocation: within 5% of exhaustive optimum, budget never
//    exceeded, plans nested across decreasing targets.
void criterion_8() {
    auto exhaustive = [](const ErrorTables& t, double target, std::size_t b) {
        const std::uint64_t hc = count_block_flops_attention(t.width, t.head_dims[0], b);
        const std::uint64_t nc = count_block_flops_ffn(t.width, 1, b);
        std::uint64_t total = 0;
        for (std::size_t l = 0; l < t.layers.size(); ++l)
            total += hc * t.heads[l] + nc * t.ffn_widths[l];
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a0 = 1; a0 <= t.heads[0]; ++a0)
            for (std::size_t f0 = neuron_floor(t.ffn_widths[0]); f0 <= t.ffn_widths[0]; ++f0)
                for (std::size_t a1 = 1; a1 <= t.heads[1]; ++a1)
                    for (std::size_t f1 = neuron_floor(t.ffn_widths[1]);
                         f1 <= t.ffn_widths[1]; ++f1) {
                        const std::uint64_t cost = hc * (a0 + a1) + nc * (f0 + f1);
                        if (static_cast<double>(cost) > target * static_cast<double>(total))
                            continue;
                        best = std::min(
                            best,
                            depth_weight(WeightScheme::bert, 1) *
                                    (t.layers[0].attn[a0] + t.layers[0].ffn[f0]) +
                                depth_weight(WeightScheme::bert, 2) *
                                    (t.layers[1].attn[a1] + t.layers[1].ffn[f1]));
                    }
        return best;
    };

    double worst_gap = 0.0;
    bool budget_ok = true, nested_ok = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ArchSpec s;
        s.width = 32; s.layers = 2; s.heads = 8; s.head_dim = 4; s.ffn_width = 128;
        s.examples = 24; s.seq_len = 8;
        const TransformerModel m = gen_model(s, seed);
        const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 100 + seed);
        std::vector<std::string> pts;
        for (std::size_t l = 0; l < 2; ++l) {
            pts.push_back(capture_name(CapturePoint::attn_concat, l));
            pts.push_back(capture_name(CapturePoint::ffn_hidden, l));
        }
        const auto caps = forward_with_capture(m, c, pts).captures;
        const ErrorTables t = build_error_tables(m, caps, ErrorMode::absolute);

        const double target = 0.50 + 0.05 * static_cast<double>(seed % 5);
        const PruningPlan p = allocate_plan(t, WeightScheme::bert, target, s.seq_len);
        if (p.achieved_ratio > target + 1e-12) budget_ok = false;
        const double opt = exhaustive(t, target, s.seq_len);
        if (opt > 0.0) worst_gap = std::max(worst_gap, p.objective / opt - 1.0);

        PruningPlan prev = allocate_plan(t, WeightScheme::bert, 1.0, s.seq_len);
        for (double ladder : {0.9, 0.8, 0.7, 0.6, 0.5}) {
            const PruningPlan q = allocate_plan(t, WeightScheme::bert, ladder, s.seq_len);
            for (std::size_t l = 0; l < 2; ++l)
                if (q.keep_heads[l] > prev.keep_heads[l] ||
                    q.keep_neurons[l] > prev.keep_neurons[l])
                    nested_ok = false;
            prev = q;
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "worst gap %.3f%% vs optimum; budget %s; nesting %s",
                  100.0 * worst_gap, budget_ok ? "safe" : "VIOLATED",
                  nested_ok ? "held" : "VIOLATED");
    report(8, "allocator optimality gap", worst_gap <= 0.05 && budget_ok && nested_ok, buf);
}

// 9. Depth weighting formulas, exactly.
void criterion_9() {
    const bool pass = std::abs(depth_weight(WeightScheme::bert, 1) - (std::sqrt(2.0) + 1.0)) <
                          1e-12 &&
                      std::abs(depth_weight(WeightScheme::bert, 3) - 3.0) < 1e-12 &&
                      depth_weight(WeightScheme::llama, 1) == 51.0 &&
                      depth_weight(WeightScheme::none, 9) == 1.0;
    report(9, "depth weights match formulas", pass,
           "bert(1)=sqrt(2)+1, bert(3)=3, llama(1)=51");
}

// 10. Holdout error is nonincreasing in calibration size, within one pooled
//     standard deviation over seeds.
void criterion_10() {
    const std::vector<std::size_t> sizes{32, 64, 128, 256, 512};
    const std::size_t n_seeds = 5;
    std::vector<std::vector<double>> errs(sizes.size());
    ArchSpec s;
    s.width = 32; s.layers = 4; s.heads = 4; s.head_dim = 8; s.ffn_width = 64;
    s.examples = 32; s.seq_len = 8;
    for (std::uint64_t seed = 0; seed < n_seeds; ++seed) {
        const TransformerModel m = gen_model(s, 1200 + seed);
        const CalibrationSet holdout = gen_calib(64, s.seq_len, s.width, 1300 + seed, 0x0FF5E7);
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            const CalibrationSet c =
                gen_calib(sizes[i], s.seq_len, s.width, 1300 + seed, 0x10AD);
            PipelineConfig cfg;
            cfg.target_ratio = 0.5;
            const PipelineResult r = run_pipeline(m, c, cfg);
            errs[i].push_back(evaluate(r.model, m, holdout).rel_err);
        }
    }
    std::vector<double> mean(sizes.size(), 0.0);
    double ss_within = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        for (double e : errs[i]) mean[i] += e;
        mean[i] /= static_cast<double>(n_seeds);
        for (double e : errs[i]) ss_within += (e - mean[i]) * (e - mean[i]);
    }
    const double pooled_std =
        std::sqrt(ss_within / static_cast<double>(sizes.size() * n_seeds - sizes.size()));
    bool pass = true;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        if (mean[i + 1] > mean[i] + pooled_std) pass = false;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "means %.4f %.4f %.4f %.4f %.4f, pooled std %.4f", mean[0], mean[1],
                  mean[2], mean[3], mean[4], pooled_std);
    report(10, "data-usage trend", pass, buf);
}

// 11. Byte-level determinism and format validation.
void criterion_11() {
    bool pass = true;
    std::string detail = "repeat runs identical; round trips identical; corrupt rejected";

    ArchSpec s;
    s.width = 32; s.layers = 3; s.heads = 4; s.head_dim = 8; s.ffn_width = 64;
    s.examples = 24; s.seq_len = 8;
    const TransformerModel m = gen_model(s, 1400);
    const CalibrationSet c = gen_calib(s.examples, s.seq_len, s.width, 1401);
    PipelineConfig cfg;
    cfg.target_ratio = 0.7;
    const PipelineResult a = run_pipeline(m, c, cfg);
    const PipelineResult b = run_pipeline(m, c, cfg);
    if (model_to_bytes(a.model) != model_to_bytes(b.model)) {
        pass = false;
        detail = "repeated pipeline runs differ";
    }
    nlohmann::json ra = a.report, rb = b.report;
    ra.erase("timings");
    rb.erase("timings");
    if (ra != rb) {
        pass = false;
        detail = "reports differ beyond timings";
    }

    const std::string mbytes = model_to_bytes(m);
    if (model_to_bytes(model_from_bytes(mbytes)) != mbytes) {
        pass = false;
        detail = "model round trip not byte-identical";
    }
    const std::string cbytes = calib_to_bytes(c);
    if (calib_to_bytes(calib_from_bytes(cbytes)) != cbytes) {
        pass = false;
        detail = "calibration round trip not byte-identical";
    }

    try {
        std::string bad = mbytes;
        bad[0] = 'Q';
        model_from_bytes(bad);
        pass = false;
        detail = "bad magic accepted";
    } catch (const FormatError& e) {
        if (std::string(e.what()).find("QTM1") == std::string::npos) {
            pass = false;
            detail = "bad-magic error does not name the bytes";
        }
    }
    try {
        model_from_bytes(mbytes.substr(0, mbytes.size() - 16));
        pass = false;
        detail = "truncated payload accepted";
    } catch (const FormatError&) {
    }
    try {
        calib_from_bytes(cbytes.substr(0, cbytes.size() - 8));
        pass = false;
        detail = "truncated calibration accepted";
    } catch (const FormatError&) {
    }
    report(11, "determinism and format", pass, detail);
}

}  // namespace

int main() {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    criterion_11();
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    std::printf("%d/11 criteria passed in %.1f s\n", 11 - g_failures, secs);
    return g_failures == 0 ? 0 : 1;
}
