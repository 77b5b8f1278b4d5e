// Command-line front end: phantom, weightmap, train, infer, postprocess,
// evaluate, experiment.
//
// Exit codes: 0 ok, 2 usage/invalid input, 3 I/O or format, 4 numeric.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lobeseg/error.hpp"
#include "lobeseg/experiment.hpp"
#include "lobeseg/metaimage.hpp"
#include "lobeseg/metrics.hpp"
#include "lobeseg/phantom.hpp"
#include "lobeseg/postprocess.hpp"
#include "lobeseg/segnet.hpp"
#include "lobeseg/train.hpp"
#include "lobeseg/weighting.hpp"

#ifndef LOBESEG_GIT_DESCRIBE
#define LOBESEG_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using namespace lobeseg;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

struct Globals {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out;
};

/// Collects what a run read and wrote; saved next to the outputs.
struct Manifest {
    std::string command;
    std::vector<std::string> argv;
    json flags = json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const fs::path& path, const Globals& g, json extra = json::object()) const
    {
        json j;
        j["command"] = command;
        j["argv"] = argv;
        j["seed"] = g.seed;
        j["threads"] = g.threads;
        j["flags"] = flags;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["git_describe"] = LOBESEG_GIT_DESCRIBE;
        j["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (auto& [k, v] : extra.items()) j[k] = v;
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write manifest " + path.string());
        f << j.dump(2) << "\n";
        std::cout << j.dump(2) << "\n";
    }
};

fs::path require_out(const Globals& g, const char* what)
{
    if (g.out.empty()) throw CLI::ValidationError("--out", std::string("required: ") + what);
    return fs::path(g.out);
}

void ensure_parent(const fs::path& p)
{
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
    }
}

fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

std::string prob_channel_path(const std::string& prefix, int l) { return prefix + "_prob" + std::to_string(l) + ".mha"; }

Dims dims_from(const std::vector<std::size_t>& v)
{
    if (v.size() == 1) return Dims::cube(v[0]);
    if (v.size() == 3) return {v[0], v[1], v[2]};
    throw CLI::ValidationError("--dims", "expects 1 or 3 values");
}

TrainingCase load_case(const std::string& prefix, Manifest& m)
{
    TrainingCase c;
    const std::string img = prefix + "_img.mha", ref = prefix + "_ref.mha", lung = prefix + "_lung.mha";
    c.image = read_scalar(img);
    c.ref = read_labels(ref);
    c.lung = read_mask(lung);
    m.inputs.insert(m.inputs.end(), {img, ref, lung});
    return c;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Lobe segmentation with boundary-weighted Dice loss on synthetic lung phantoms"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads (experiment only)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--out", g.out, "Output path (file, prefix or directory depending on command)");

    Manifest manifest;
    manifest.argv.assign(argv, argv + argc);

    // phantom ---------------------------------------------------------------
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic lung phantom (5 MetaImage files)");
    std::string side_name = "left";
    std::vector<std::size_t> dims_arg{64};
    double spacing = 1.5, completeness = 0.6, noise = 20.0;
    std::string name = "phantom";
    phantom->add_option("--side", side_name)->check(CLI::IsMember({"left", "right"}))->capture_default_str();
    phantom->add_option("--dims", dims_arg, "Edge length, or three extents")->expected(1, 3)->capture_default_str();
    phantom->add_option("--spacing", spacing)->check(CLI::PositiveNumber)->capture_default_str();
    phantom->add_option("--completeness", completeness, "Visible fissure fraction")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    phantom->add_option("--noise", noise, "Gaussian noise sigma")->check(CLI::NonNegativeNumber)->capture_default_str();
    phantom->add_option("--name", name, "File name prefix inside the output directory")->capture_default_str();

    // weightmap -------------------------------------------------------------
    auto* weightmap = app.add_subcommand("weightmap", "Build the boundary weight map for a reference segmentation");
    std::string ref_path, lung_path;
    WeightParams wp;
    weightmap->add_option("--ref", ref_path)->required();
    weightmap->add_option("--lung", lung_path)->required();
    weightmap->add_option("--wmax", wp.w_max)->capture_default_str();
    weightmap->add_option("--radius", wp.radius_mm, "mm")->capture_default_str();
    weightmap->add_option("--wfar", wp.w_far)->capture_default_str();

    // train -----------------------------------------------------------------
    auto* trainc = app.add_subcommand("train", "Train the network on phantom cases");
    std::vector<std::string> case_prefixes;
    bool unweighted = false;
    NetConfig net;
    net.in_channels = 4;
    net.hidden_channels = 4;
    TrainConfig tc;
    trainc->add_option("--case", case_prefixes, "Case prefix P (reads P_img.mha, P_ref.mha, P_lung.mha)")->required();
    trainc->add_flag("--unweighted", unweighted, "Plain Dice loss instead of the weighted one");
    trainc->add_option("--iterations", tc.iterations)->check(CLI::NonNegativeNumber)->capture_default_str();
    trainc->add_option("--lr", tc.learning_rate)->check(CLI::NonNegativeNumber)->capture_default_str();
    trainc->add_option("--batch", tc.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    trainc->add_option("--core", tc.layout.core)->check(CLI::PositiveNumber)->capture_default_str();
    trainc->add_option("--margin", tc.layout.margin)->capture_default_str();
    trainc->add_option("--hidden", net.hidden_channels)->check(CLI::PositiveNumber)->capture_default_str();
    trainc->add_option("--in-channels", net.in_channels, "1 = intensity only, 4 = intensity + coordinates")
        ->check(CLI::IsMember({1, 2, 3, 4}))
        ->capture_default_str();
    trainc->add_option("--wmax", tc.weights.w_max)->capture_default_str();
    trainc->add_option("--radius", tc.weights.radius_mm)->capture_default_str();
    trainc->add_option("--wfar", tc.weights.w_far)->capture_default_str();

    // infer -----------------------------------------------------------------
    auto* inferc = app.add_subcommand("infer", "Run a trained network; writes one probability file per label");
    std::string params_path, image_path;
    PatchLayout infer_layout{32, 8};
    inferc->add_option("--params", params_path)->required();
    inferc->add_option("--image", image_path)->required();
    inferc->add_option("--core", infer_layout.core)->check(CLI::PositiveNumber)->capture_default_str();
    inferc->add_option("--margin", infer_layout.margin)->capture_default_str();

    // postprocess -----------------------------------------------------------
    auto* post = app.add_subcommand("postprocess", "Turn probabilities into a lobe segmentation covering the lung");
    std::string prob_prefix;
    post->add_option("--prob", prob_prefix, "Prefix used by infer (reads PREFIX_probL.mha)")->required();
    post->add_option("--lung", lung_path)->required();
    post->add_option("--side", side_name)->check(CLI::IsMember({"left", "right"}))->capture_default_str();

    // evaluate --------------------------------------------------------------
    auto* eval = app.add_subcommand("evaluate", "Dice and fissure distance; writes CSV plus JSON mirror");
    std::vector<std::string> pred_paths, methods;
    std::string fissure_path, case_name = "case";
    eval->add_option("--pred", pred_paths, "Predicted segmentation (repeatable)")->required();
    eval->add_option("--method", methods, "Method name per --pred (default: other)");
    eval->add_option("--ref", ref_path)->required();
    eval->add_option("--fissure", fissure_path, "Visible-fissure mask")->required();
    eval->add_option("--case-id", case_name)->capture_default_str();

    // experiment ------------------------------------------------------------
    auto* exper = app.add_subcommand("experiment", "Paired weighted vs unweighted experiment");
    std::string config_path;
    exper->add_option("--config", config_path, "key=value config with [arm.NAME] sections");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*phantom) {
            manifest.command = "phantom";
            const fs::path dir = require_out(g, "output directory");
            PhantomSpec spec;
            spec.dims = dims_from(dims_arg);
            spec.spacing = Spacing::isotropic(spacing);
            spec.side = detail::parse_side(side_name);
            spec.completeness = completeness;
            spec.noise_sigma = noise;
            spec.seed = g.seed;
            const PhantomCase c = generate(spec);
            fs::create_directories(dir);
            auto path = [&](const char* suffix) { return (dir / (name + suffix)).string(); };
            write_metaimage(c.image, path("_img.mha"));
            write_metaimage(c.ref, path("_ref.mha"));
            write_metaimage(c.lung, path("_lung.mha"));
            write_metaimage(c.fissure_full, path("_fisfull.mha"));
            write_metaimage(c.fissure_visible, path("_fisvis.mha"));
            manifest.outputs = {path("_img.mha"), path("_ref.mha"), path("_lung.mha"), path("_fisfull.mha"),
                                path("_fisvis.mha")};
            manifest.flags = {{"side", side_name}, {"dims", {spec.dims.x, spec.dims.y, spec.dims.z}},
                              {"spacing", spacing}, {"completeness", completeness}, {"noise", noise}};
            manifest.write(path("_manifest.json"), g);
        } else if (*weightmap) {
            manifest.command = "weightmap";
            const fs::path out = require_out(g, "weight map file");
            if (!wp.valid()) throw ShapeError("weight parameters need wmax >= wfar > 0 and radius > 0");
            const LabelVolume ref = read_labels(ref_path);
            const Mask lung = read_mask(lung_path);
            const WeightVolume w = build_weight_map(ref, lung, wp);
            ensure_parent(out);
            write_metaimage(w, out);
            manifest.inputs = {ref_path, lung_path};
            manifest.outputs = {out.string()};
            manifest.flags = {{"wmax", wp.w_max}, {"radius_mm", wp.radius_mm}, {"wfar", wp.w_far}};
            manifest.write(manifest_for_file(out), g);
        } else if (*trainc) {
            manifest.command = "train";
            const fs::path out = require_out(g, "parameter file");
            std::vector<TrainingCase> cases;
            for (const auto& p : case_prefixes) cases.push_back(load_case(p, manifest));
            net.num_labels = cases.front().ref.num_labels;
            net.seed = g.seed;
            tc.seed = g.seed;
            const TrainResult r = train(cases, net, tc, !unweighted, [&](int it, double loss) {
                if ((it + 1) % 100 == 0) std::fprintf(stderr, "iteration %d loss %.6f\n", it + 1, loss);
            });
            ensure_parent(out);
            save_params(r.params, out);
            const std::string loss_path = out.string() + ".loss.csv";
            {
                std::ofstream f(loss_path, std::ios::binary | std::ios::trunc);
                if (!f) throw IoError("cannot write " + loss_path);
                f << "iteration,loss\n";
                for (std::size_t i = 0; i < r.loss_history.size(); ++i)
                    f << i << "," << detail::csv_number(r.loss_history[i]) << "\n";
            }
            manifest.outputs = {out.string(), loss_path};
            manifest.flags = {{"weighted", !unweighted},   {"iterations", tc.iterations},
                              {"lr", tc.learning_rate},    {"batch", tc.batch_size},
                              {"core", tc.layout.core},    {"margin", tc.layout.margin},
                              {"hidden", net.hidden_channels}, {"in_channels", net.in_channels}};
            json extra;
            if (!r.loss_history.empty())
                extra = {{"initial_loss", r.loss_history.front()}, {"final_loss", r.loss_history.back()}};
            manifest.write(manifest_for_file(out), g, extra);
        } else if (*inferc) {
            manifest.command = "infer";
            const std::string prefix = require_out(g, "probability prefix").string();
            const NetParams p = load_params(params_path);
            const ScalarVolume image = read_scalar(image_path);
            const ProbVolume prob = infer(p, image, infer_layout);
            ensure_parent(prefix);
            for (int l = 0; l < prob.num_labels; ++l) {
                ScalarVolume ch(prob.dims, prob.spacing);
                for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = static_cast<float>(prob.at(l, i));
                write_metaimage(ch, prob_channel_path(prefix, l));
                manifest.outputs.push_back(prob_channel_path(prefix, l));
            }
            manifest.inputs = {params_path, image_path};
            manifest.flags = {{"core", infer_layout.core}, {"margin", infer_layout.margin}};
            manifest.write(fs::path(prefix + "_manifest.json"), g);
        } else if (*post) {
            manifest.command = "postprocess";
            const fs::path out = require_out(g, "segmentation file");
            const Side side = detail::parse_side(side_name);
            const Mask lung = read_mask(lung_path);
            std::vector<ScalarVolume> channels;
            for (int l = 0; l < num_labels_for(side); ++l) {
                channels.push_back(read_scalar(prob_channel_path(prob_prefix, l)));
                manifest.inputs.push_back(prob_channel_path(prob_prefix, l));
                if (!(channels.back().dims == lung.dims)) throw ShapeError("probability and lung dims differ");
            }
            ProbVolume prob(lung.dims, lung.spacing, num_labels_for(side));
            for (int l = 0; l < prob.num_labels; ++l)
                for (std::size_t i = 0; i < lung.size(); ++i) prob.at(l, i) = channels[static_cast<std::size_t>(l)][i];
            const CleanupResult r = postprocess(prob, lung, side);
            for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
            ensure_parent(out);
            write_metaimage(r.seg, out);
            manifest.inputs.push_back(lung_path);
            manifest.outputs = {out.string()};
            manifest.flags = {{"side", side_name}};
            manifest.write(manifest_for_file(out), g, {{"warnings", r.warnings}});
            if (!covers_lung_exactly(r.seg, lung)) {
                std::fprintf(stderr, "error: segmentation does not cover the lung exactly\n");
                return kNumeric;
            }
        } else if (*eval) {
            manifest.command = "evaluate";
            const fs::path out = require_out(g, "report CSV");
            if (!methods.empty() && methods.size() != pred_paths.size())
                throw CLI::ValidationError("--method", "give one --method per --pred");
            const LabelVolume ref = read_labels(ref_path);
            const Mask fissure = read_mask(fissure_path);
            std::vector<EvalReport> reports;
            for (std::size_t k = 0; k < pred_paths.size(); ++k) {
                const LabelVolume pred = read_labels(pred_paths[k], ref.num_labels);
                reports.push_back(evaluate_case(pred, ref, fissure, case_name, methods.empty() ? "other" : methods[k]));
                manifest.inputs.push_back(pred_paths[k]);
            }
            ensure_parent(out);
            emit_report(reports, out);
            fs::path json_out = out;
            json_out.replace_extension(".json");
            manifest.inputs.insert(manifest.inputs.end(), {ref_path, fissure_path});
            manifest.outputs = {out.string(), json_out.string()};
            manifest.flags = {{"case_id", case_name}, {"methods", methods}};
            manifest.write(manifest_for_file(out), g);
        } else if (*exper) {
            manifest.command = "experiment";
            const fs::path dir = require_out(g, "output directory");
            ExperimentConfig cfg = config_path.empty() ? default_experiment() : load_experiment_config(config_path);
            // --seed, when given, overrides the config seed.
            if (app.count("--seed") > 0) cfg.master_seed = g.seed;
            if (!config_path.empty()) manifest.inputs = {config_path};
            const ExperimentResult r = run_experiment(cfg, g.threads, [](const ArmRun& run) {
                std::fprintf(stderr, "%s replicate %d: %s\n", run.arm.c_str(), run.replicate,
                             run.ok ? "done" : run.error.c_str());
            });
            write_experiment(r, dir);
            for (const char* f : {"experiment.csv", "experiment.json", "summary.csv", "losses.csv"})
                if (fs::exists(dir / f)) manifest.outputs.push_back((dir / f).string());
            std::cout << summary_table(r.summary);
            json summary = json::array();
            for (const auto& s : r.summary)
                summary.push_back({{"arm", s.arm},
                                   {"cases", s.cases},
                                   {"invalid", s.invalid},
                                   {"median_lobe_dice", detail::json_number(s.median_lobe_dice)},
                                   {"median_mean_dist_mm", detail::json_number(s.median_mean_dist_mm)}});
            manifest.flags = {{"master_seed", cfg.master_seed}, {"replicates", cfg.replicates}};
            manifest.write(dir / "manifest.json", g, {{"summary", summary}, {"complete", r.complete()}});
            if (!r.complete()) {
                std::fprintf(stderr, "error: some runs failed; see %s\n", (dir / "FAILED").string().c_str());
                return kNumeric;
            }
        }
    } catch (const CLI::Error& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kUsage;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kIo;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kNumeric;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "invalid input: %s\n", e.what());
        return kUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kIo;
    }
    return kOk;
}
