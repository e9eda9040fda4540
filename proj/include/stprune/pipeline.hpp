#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stprune/allocate.hpp"
#include "stprune/error.hpp"
#include "stprune/io.hpp"
#include "stprune/model.hpp"
#include "stprune/prune.hpp"
#include "stprune/synthetic.hpp"

namespace stprune {

struct PipelineConfig {
    double target_ratio = 0.7;
    CorrectionMode mode = CorrectionMode::fold_qr;
    std::optional<ErrorMode> error_mode;      // unset: absolute for post-norm, relative for pre
    std::optional<WeightScheme> weighting;    // unset: bert for post-norm, llama for pre
    bool flops_share_objective = false;
    PruneOptions prune;
};

struct EvalMetrics {
    double rel_err = 0.0;
    double mse = 0.0;
    std::optional<double> correlation;  // present when both models carry a classifier
};

struct PipelineResult {
    TransformerModel model;
    PruningPlan plan;
    std::vector<LayerPruneRecord> records;
    EvalMetrics calib_metrics;
    std::uint64_t flops_original = 0;
    std::uint64_t flops_pruned = 0;
    double achieved_ratio = 1.0;
    nlohmann::json report;
};

// Output agreement between two models on the valid positions of a data set.
inline EvalMetrics evaluate(const TransformerModel& a, const TransformerModel& b,
                            const CalibrationSet& data) {
    if (a.width != b.width)
        throw DimError("evaluate: model widths differ (" + std::to_string(a.width) + " vs " +
                       std::to_string(b.width) + ")");
    const ForwardResult ra = forward_with_capture(a, data);
    const ForwardResult rb = forward_with_capture(b, data);

    double num = 0.0, den = 0.0;
    std::size_t count = 0;
    for (std::size_t e = 0; e < data.examples(); ++e)
        for (std::size_t p = 0; p < data.lengths[e]; ++p)
            for (std::size_t j = 0; j < a.width; ++j) {
                const double va = ra.hidden(e * data.seq_len + p, j);
                const double vb = rb.hidden(e * data.seq_len + p, j);
                num += (va - vb) * (va - vb);
                den += vb * vb;
                ++count;
            }
    EvalMetrics m;
    m.rel_err = den > 0.0 ? std::sqrt(num) / std::sqrt(den) : std::sqrt(num);
    m.mse = count > 0 ? num / static_cast<double>(count) : 0.0;

    if (a.head && b.head && a.head->w.cols() == b.head->w.cols()) {
        std::size_t agree = 0;
        for (std::size_t e = 0; e < data.examples(); ++e) {
            std::size_t arga = 0, argb = 0;
            for (std::size_t c = 1; c < ra.logits.cols(); ++c) {
                if (ra.logits(e, c) > ra.logits(e, arga)) arga = c;
                if (rb.logits(e, c) > rb.logits(e, argb)) argb = c;
            }
            if (arga == argb) ++agree;
        }
        m.correlation = static_cast<double>(agree) / static_cast<double>(data.examples());
    }
    return m;
}

namespace detail {

inline std::vector<std::string> all_capture_points(const TransformerModel& m) {
    std::vector<std::string> pts;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        pts.push_back(capture_name(CapturePoint::attn_concat, l));
        pts.push_back(capture_name(CapturePoint::ffn_hidden, l));
        pts.push_back(capture_name(CapturePoint::layer_out, l));
    }
    return pts;
}

inline nlohmann::json record_json(const LayerPruneRecord& r) {
    nlohmann::json j;
    j["layer"] = r.layer;
    j["block"] = r.block == BlockKind::ffn ? "ffn" : "attention";
    j["kept"] = r.kept;
    if (r.block == BlockKind::attention) j["head_order"] = r.head_order;
    j["predicted_err"] = r.predicted_err;
    j["measured_err"] = r.measured_err;
    j["correction_max_abs"] = r.correction_max_abs;
    j["correction_unstable"] = r.correction_max_abs > 1e3;
    j["mode"] = to_string(r.mode);
    return j;
}

}  // namespace detail

// Full pruning pipeline: capture activations of the original model, build
// error tables, allocate per-layer keeps under the FLOPs target, prune
// attention then FFN per layer front-to-back, and assemble the report.
// Deterministic for a fixed seed and inputs.
inline PipelineResult run_pipeline(const TransformerModel& original,
                                   const CalibrationSet& calib, const PipelineConfig& config) {
    using clock = std::chrono::steady_clock;
    const auto since = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    validate_model(original);
    validate_calib(calib);
    if (!(config.target_ratio > 0.0) || config.target_ratio > 1.0)
        throw DimError("pipeline: target flops ratio must be in (0, 1]");

    const bool pre = original.norm_placement == NormPlacement::pre;
    const ErrorMode emode =
        config.error_mode.value_or(pre ? ErrorMode::relative : ErrorMode::absolute);
    const WeightScheme scheme =
        config.weighting.value_or(pre ? WeightScheme::llama : WeightScheme::bert);

    PipelineResult out;
    nlohmann::json timings;

    auto t0 = clock::now();
    const CaptureSet orig_caps =
        forward_with_capture(original, calib, detail::all_capture_points(original)).captures;
    timings["capture_s"] = since(t0);

    t0 = clock::now();
    const ErrorTables tables = build_error_tables(original, orig_caps, emode, config.prune);
    timings["tables_s"] = since(t0);

    t0 = clock::now();
    out.plan = allocate_plan(tables, scheme, config.target_ratio, calib.seq_len,
                             config.flops_share_objective);
    timings["allocate_s"] = since(t0);

    t0 = clock::now();
    out.model = original;
    for (std::size_t l = 0; l < out.model.layers.size(); ++l) {
        try {
            if (config.mode == CorrectionMode::refine_ls) {
                const std::string concat_name = capture_name(CapturePoint::attn_concat, l);
                const std::string hidden_name = capture_name(CapturePoint::ffn_hidden, l);
                const std::string target_name = capture_name(CapturePoint::layer_out, l);

                CaptureSet cur =
                    forward_with_capture(out.model, calib, {concat_name}).captures;
                out.records.push_back(prune_attention(out.model, l, out.plan.keep_heads[l],
                                                      cur, CorrectionMode::refine_ls,
                                                      config.prune,
                                                      &orig_caps.at(concat_name)));

                CaptureSet cur2 =
                    forward_with_capture(out.model, calib, {hidden_name}).captures;
                cur2.points.emplace(target_name, orig_caps.at(target_name));
                out.records.push_back(prune_ffn(out.model, l, out.plan.keep_neurons[l], cur2,
                                                CorrectionMode::refine_ls, config.prune));
            } else {
                out.records.push_back(prune_attention(out.model, l, out.plan.keep_heads[l],
                                                      orig_caps, config.mode, config.prune));
                out.records.push_back(prune_ffn(out.model, l, out.plan.keep_neurons[l],
                                                orig_caps, config.mode, config.prune));
            }
        } catch (const Error& e) {
            throw NumericError("pipeline: layer " + std::to_string(l) +
                               " prune phase failed: " + e.what());
        }
    }
    timings["prune_s"] = since(t0);

    t0 = clock::now();
    out.flops_original = count_flops(original, calib.seq_len);
    out.flops_pruned = count_flops(out.model, calib.seq_len);
    out.achieved_ratio = flops_ratio(out.model, original, calib.seq_len);
    out.calib_metrics = evaluate(out.model, original, calib);
    timings["evaluate_s"] = since(t0);

    nlohmann::json rep;
    rep["config"] = {{"target_ratio", config.target_ratio},
                     {"mode", to_string(config.mode)},
                     {"error_mode", to_string(emode)},
                     {"weighting", to_string(scheme)},
                     {"ffn_weighting", config.prune.ffn_weighting},
                     {"sketch_enabled", config.prune.sketch_enabled},
                     {"sketch_kind", config.prune.sketch_kind == SketchKind::gaussian
                                         ? "gaussian"
                                         : "countsketch"},
                     {"sketch_rows", config.prune.sketch_rows},
                     {"sketch_threshold", config.prune.sketch_threshold},
                     {"groups", config.prune.groups},
                     {"flops_share_objective", config.flops_share_objective},
                     {"seed", config.prune.seed}};
    rep["plan"] = {{"keep_heads", out.plan.keep_heads},
                   {"keep_neurons", out.plan.keep_neurons},
                   {"objective", out.plan.objective},
                   {"planned_ratio", out.plan.achieved_ratio}};
    rep["layers"] = nlohmann::json::array();
    for (const auto& r : out.records) rep["layers"].push_back(detail::record_json(r));
    rep["flops"] = {{"original", out.flops_original},
                    {"pruned", out.flops_pruned},
                    {"achieved_ratio", out.achieved_ratio}};
    rep["eval"] = {{"rel_err", out.calib_metrics.rel_err}, {"mse", out.calib_metrics.mse}};
    if (out.calib_metrics.correlation)
        rep["eval"]["correlation"] = *out.calib_metrics.correlation;
    rep["timings"] = timings;
    out.report = std::move(rep);
    return out;
}

// Plan-only variant: build tables and allocate, no pruning.
inline nlohmann::json plan_only(const TransformerModel& model, const CalibrationSet& calib,
                                const PipelineConfig& config) {
    validate_model(model);
    validate_calib(calib);
    const bool pre = model.norm_placement == NormPlacement::pre;
    const ErrorMode emode =
        config.error_mode.value_or(pre ? ErrorMode::relative : ErrorMode::absolute);
    const WeightScheme scheme =
        config.weighting.value_or(pre ? WeightScheme::llama : WeightScheme::bert);

    const CaptureSet caps =
        forward_with_capture(model, calib, detail::all_capture_points(model)).captures;
    const ErrorTables tables = build_error_tables(model, caps, emode, config.prune);
    const PruningPlan plan = allocate_plan(tables, scheme, config.target_ratio, calib.seq_len,
                                           config.flops_share_objective);
    nlohmann::json rep;
    rep["config"] = {{"target_ratio", config.target_ratio},
                     {"error_mode", to_string(emode)},
                     {"weighting", to_string(scheme)}};
    rep["plan"] = {{"keep_heads", plan.keep_heads},
                   {"keep_neurons", plan.keep_neurons},
                   {"objective", plan.objective},
                   {"planned_ratio", plan.achieved_ratio}};
    rep["flops"] = {{"original", count_flops(model, calib.seq_len)}};
    return rep;
}

}  // namespace stprune
