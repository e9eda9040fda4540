// Command-line driver: synthetic model generation, budgeted pruning,
// plan-only allocation, and model-agreement evaluation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "stprune/io.hpp"
#include "stprune/pipeline.hpp"
#include "stprune/synthetic.hpp"

namespace {

using namespace stprune;

struct GenArgs {
    ArchSpec arch;
    std::uint64_t seed = 0;
    std::string planted = "none";
    std::string norm = "post";
    std::string norm_kind = "layernorm";
    std::string activation = "gelu";
    std::string out_model = "model.stm";
    std::string out_calib = "calib.stc";
    std::string out_holdout;
};

struct PruneArgs {
    std::string model_path;
    std::string calib_path;
    double flops_ratio = 0.7;
    std::string mode = "fold-qr";
    std::string error = "auto";
    std::string weighting = "auto";
    std::string sketch = "countsketch";
    std::size_t sketch_rows = 0;
    std::size_t sketch_threshold = 262144;
    std::size_t groups = 0;
    bool no_ffn_weighting = false;
    bool flops_share_objective = false;
    std::uint64_t seed = 0;
    std::string out;
    std::string report;
};

PipelineConfig to_config(const PruneArgs& a) {
    PipelineConfig cfg;
    cfg.target_ratio = a.flops_ratio;
    if (a.mode == "fold-qr") cfg.mode = CorrectionMode::fold_qr;
    else if (a.mode == "refine-ls") cfg.mode = CorrectionMode::refine_ls;
    else throw DimError("unknown --mode " + a.mode);
    if (a.error == "abs") cfg.error_mode = ErrorMode::absolute;
    else if (a.error == "rel") cfg.error_mode = ErrorMode::relative;
    else if (a.error != "auto") throw DimError("unknown --error " + a.error);
    if (a.weighting == "bert") cfg.weighting = WeightScheme::bert;
    else if (a.weighting == "llama") cfg.weighting = WeightScheme::llama;
    else if (a.weighting == "none") cfg.weighting = WeightScheme::none;
    else if (a.weighting != "auto") throw DimError("unknown --weighting " + a.weighting);
    if (a.sketch == "off") cfg.prune.sketch_enabled = false;
    else if (a.sketch == "countsketch") cfg.prune.sketch_kind = SketchKind::countsketch;
    else if (a.sketch == "gaussian") cfg.prune.sketch_kind = SketchKind::gaussian;
    else throw DimError("unknown --sketch " + a.sketch);
    cfg.prune.sketch_rows = a.sketch_rows;
    cfg.prune.sketch_threshold = a.sketch_threshold;
    cfg.prune.groups = a.groups;
    cfg.prune.ffn_weighting = !a.no_ffn_weighting;
    cfg.prune.seed = a.seed;
    cfg.flops_share_objective = a.flops_share_objective;
    return cfg;
}

void write_report(const std::string& path, const nlohmann::json& j) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open report file: " + path);
    out << j.dump(2) << "\n";
}

int run_gen(const GenArgs& a) {
    ArchSpec spec = a.arch;
    if (a.planted == "dup-neurons") spec.planted = Planted::dup_neurons;
    else if (a.planted == "dup-heads") spec.planted = Planted::dup_heads;
    else if (a.planted != "none") throw DimError("unknown --planted " + a.planted);
    spec.norm_placement = a.norm == "pre" ? NormPlacement::pre : NormPlacement::post;
    if (a.norm != "pre" && a.norm != "post") throw DimError("unknown --norm " + a.norm);
    spec.norm_kind = a.norm_kind == "rmsnorm" ? NormKind::rmsnorm : NormKind::layernorm;
    if (a.norm_kind != "rmsnorm" && a.norm_kind != "layernorm")
        throw DimError("unknown --norm-kind " + a.norm_kind);
    spec.activation = a.activation == "relu" ? Activation::relu : Activation::gelu;
    if (a.activation != "relu" && a.activation != "gelu")
        throw DimError("unknown --activation " + a.activation);

    const TransformerModel model = gen_model(spec, a.seed);
    save_model(model, a.out_model);
    const CalibrationSet calib =
        gen_calib(spec.examples, spec.seq_len, spec.width, a.seed, 0x10AD);
    save_calib(calib, a.out_calib);
    std::cout << "wrote " << a.out_model << " (" << spec.layers << " layers, n=" << spec.width
              << ") and " << a.out_calib << " (m=" << spec.examples << ", b=" << spec.seq_len
              << ")\n";
    if (!a.out_holdout.empty()) {
        const CalibrationSet holdout = gen_calib(spec.holdout_examples, spec.seq_len,
                                                 spec.width, a.seed, 0x0FF5E7);
        save_calib(holdout, a.out_holdout);
        std::cout << "wrote " << a.out_holdout << " (m=" << spec.holdout_examples << ")\n";
    }
    return 0;
}

int run_prune(const PruneArgs& a) {
    const TransformerModel model = load_model(a.model_path);
    const CalibrationSet calib = load_calib(a.calib_path);
    const PipelineConfig cfg = to_config(a);
    const PipelineResult r = run_pipeline(model, calib, cfg);
    if (!a.out.empty()) save_model(r.model, a.out);
    write_report(a.report, r.report);
    std::cout << "flops ratio " << r.achieved_ratio << " (target " << a.flops_ratio
              << "), calibration rel err " << r.calib_metrics.rel_err << "\n";
    if (!a.out.empty()) std::cout << "wrote " << a.out << "\n";
    if (!a.report.empty()) std::cout << "wrote " << a.report << "\n";
    return 0;
}

int run_allocate(const PruneArgs& a) {
    const TransformerModel model = load_model(a.model_path);
    const CalibrationSet calib = load_calib(a.calib_path);
    const PipelineConfig cfg = to_config(a);
    const nlohmann::json rep = plan_only(model, calib, cfg);
    write_report(a.report, rep);
    std::cout << rep["plan"].dump(2) << "\n";
    if (!a.report.empty()) std::cout << "wrote " << a.report << "\n";
    return 0;
}

int run_eval(const std::string& a_path, const std::string& b_path, const std::string& data_path,
             const std::string& report_path) {
    const TransformerModel a = load_model(a_path);
    const TransformerModel b = load_model(b_path);
    const CalibrationSet data = load_calib(data_path);
    const EvalMetrics m = evaluate(a, b, data);
    nlohmann::json rep;
    rep["rel_err"] = m.rel_err;
    rep["mse"] = m.mse;
    if (m.correlation) rep["correlation"] = *m.correlation;
    write_report(report_path, rep);
    std::cout << rep.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structured transformer pruning via interpolative decompositions"};
    app.require_subcommand(1);

    GenArgs g;
    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic model and calibration data");
    gen->add_option("--n", g.arch.width, "hidden width");
    gen->add_option("--layers", g.arch.layers, "transformer blocks");
    gen->add_option("--heads", g.arch.heads, "attention heads per block");
    gen->add_option("--dh", g.arch.head_dim, "per-head width");
    gen->add_option("--f", g.arch.ffn_width, "ffn hidden width");
    gen->add_option("--m", g.arch.examples, "calibration examples");
    gen->add_option("--b", g.arch.seq_len, "sequence length");
    gen->add_option("--seed", g.seed, "generator seed");
    gen->add_option("--planted", g.planted, "none|dup-neurons|dup-heads");
    gen->add_option("--norm", g.norm, "post|pre");
    gen->add_option("--norm-kind", g.norm_kind, "layernorm|rmsnorm");
    gen->add_option("--activation", g.activation, "relu|gelu");
    gen->add_option("--classes", g.arch.classes, "classifier classes (0 = none)");
    gen->add_option("--holdout-m", g.arch.holdout_examples, "holdout examples");
    gen->add_option("--out-model", g.out_model, "output .stm path");
    gen->add_option("--out-calib", g.out_calib, "output .stc path");
    gen->add_option("--out-holdout", g.out_holdout, "optional holdout .stc path");

    PruneArgs p;
    CLI::App* prune = app.add_subcommand("prune", "prune a model to a FLOPs budget");
    prune->add_option("--model", p.model_path, "input .stm")->required();
    prune->add_option("--calib", p.calib_path, "calibration .stc")->required();
    prune->add_option("--flops-ratio", p.flops_ratio, "target flops ratio in (0,1]")->required();
    prune->add_option("--mode", p.mode, "fold-qr|refine-ls");
    prune->add_option("--error", p.error, "abs|rel|auto");
    prune->add_option("--weighting", p.weighting, "bert|llama|none|auto");
    prune->add_option("--sketch", p.sketch, "off|countsketch|gaussian");
    prune->add_option("--sketch-rows", p.sketch_rows, "sketch height (0 = 4x cols)");
    prune->add_option("--sketch-threshold", p.sketch_threshold,
                      "sketch activation matrices taller than this");
    prune->add_option("--groups", p.groups, "selection groups (0 = auto)");
    prune->add_flag("--no-ffn-weighting", p.no_ffn_weighting,
                    "select neurons on unweighted activations");
    prune->add_flag("--flops-share-objective", p.flops_share_objective,
                    "multiply objective terms by block flops share");
    prune->add_option("--seed", p.seed, "seed for sketching");
    prune->add_option("--out", p.out, "output pruned .stm");
    prune->add_option("--report", p.report, "output report .json");

    PruneArgs al;
    bool dry_run = true;
    CLI::App* alloc = app.add_subcommand("allocate", "compute a pruning plan only");
    alloc->add_option("--model", al.model_path, "input .stm")->required();
    alloc->add_option("--calib", al.calib_path, "calibration .stc")->required();
    alloc->add_option("--flops-ratio", al.flops_ratio, "target flops ratio")->required();
    alloc->add_option("--error", al.error, "abs|rel|auto");
    alloc->add_option("--weighting", al.weighting, "bert|llama|none|auto");
    alloc->add_flag("--dry-run", dry_run, "plan only (always on)");
    alloc->add_option("--seed", al.seed, "seed for sketching");
    alloc->add_option("--report", al.report, "output report .json");

    std::string ea, eb, edata, ereport;
    CLI::App* ev = app.add_subcommand("eval", "compare two models on a data set");
    ev->add_option("--a", ea, "model a .stm")->required();
    ev->add_option("--b", eb, "model b (reference) .stm")->required();
    ev->add_option("--data", edata, "evaluation .stc")->required();
    ev->add_option("--report", ereport, "output metrics .json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen(g);
        if (prune->parsed()) return run_prune(p);
        if (alloc->parsed()) return run_allocate(al);
        if (ev->parsed()) return run_eval(ea, eb, edata, ereport);
    } catch (const stprune::InfeasibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
