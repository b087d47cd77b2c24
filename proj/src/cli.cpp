#include "passcam/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>

#include "passcam/dataset.hpp"
#include "passcam/error.hpp"
#include "passcam/explain.hpp"
#include "passcam/parallel.hpp"
#include "passcam/run_config.hpp"
#include "passcam/service.hpp"
#include "passcam/train.hpp"

namespace passcam {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string preset;
    std::string mode;
    std::size_t n = 0;
    int folds = 0;
    int fold = 0;
    int epochs = 0;
    int batch_size = 0;
    double lr = 0.0;
    std::string out;
    std::string dataset;
    bool image_only = false;
    int threads = 0;

    // Subcommand options.
    bool png = false;
    bool all_folds = false;
    bool explain = false;
    bool overlays = false;
    std::vector<std::string> checkpoints;
    std::optional<std::size_t> pass_id;
    std::string scene_file, stats_file, archetype;
    std::string target_class;
    int cols = SweepGrid{}.cols, rows = SweepGrid{}.rows;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string cors_origin = "http://localhost:5173";
    std::optional<double> target_rate;
    std::size_t calib_n = 200000;
    std::uint64_t calib_seed = 20240601;
};

struct Ctx {
    RunConfig rc;
    std::string hash;
    fs::path out_dir;
    std::ostream& out;
};

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// Timestamps live only here, so results files stay reproducible.
void log_line(const Ctx& ctx, const std::string& what) {
    fs::create_directories(ctx.out_dir);
    std::ofstream log(ctx.out_dir / "run.log", std::ios::app);
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    log << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << ' ' << what << " run_config_hash=" << ctx.hash
        << '\n';
}

// `out` is left out: it does not affect results (nor the hash).
json provenance(const Ctx& ctx) {
    json rc = run_config_to_json(ctx.rc);
    rc.erase("out");
    return {{"run_config", rc}, {"run_config_hash", ctx.hash}};
}

Dataset obtain_dataset(const RunConfig& rc) {
    if (!rc.dataset.empty()) return load_dataset(rc.dataset);
    return generate_dataset(rc.synth(), rc.n, rc.seed);
}

Checkpoint load_single_checkpoint(const Flags& f) {
    if (f.checkpoints.size() != 1) throw ConfigError("exactly one --checkpoint is required");
    return load_checkpoint(f.checkpoints.front());
}

struct PassInput {
    PitchScene scene;
    PasserStats stats;
    std::string tag;  // output filename stem suffix
    std::optional<std::size_t> pass_id;
};

PassInput resolve_pass(const Flags& f, const RunConfig& rc) {
    PassInput in;
    if (f.pass_id) {
        const Dataset ds = obtain_dataset(rc);
        const auto it = std::find_if(ds.passes.begin(), ds.passes.end(), [&](const PassRecord& p) { return p.id == *f.pass_id; });
        if (it == ds.passes.end()) throw InvalidInput("pass-id", "no pass with id " + std::to_string(*f.pass_id));
        in.scene = it->scene;
        in.stats = it->stats;
        in.tag = std::to_string(*f.pass_id);
        in.pass_id = *f.pass_id;
        return in;
    }
    if (f.scene_file.empty()) throw ConfigError("give --pass-id or --scene");
    in.scene = scene_from_json(read_json(f.scene_file));
    if (!f.stats_file.empty()) in.stats = stats_from_json(read_json(f.stats_file));
    else if (!f.archetype.empty()) in.stats = archetype_stats(f.archetype);
    else throw ConfigError("--scene needs --stats or --archetype");
    in.tag = "scene";
    return in;
}

std::vector<double> features_for(const Checkpoint& ckpt, const PasserStats& stats) {
    const FeatureVector fv = ckpt.standardizer.apply(build_feature_vector(stats));
    return {fv.v.begin(), fv.v.end()};
}

// ------------------------------------------------------------------ commands

int cmd_gen(const Ctx& ctx, const Flags& f) {
    const Dataset ds = generate_dataset(ctx.rc.synth(), ctx.rc.n, ctx.rc.seed);
    save_dataset(ds, ctx.out_dir, f.png);
    json manifest = read_json(ctx.out_dir / "manifest.json");
    manifest.update(provenance(ctx));
    write_json(ctx.out_dir / "manifest.json", manifest);
    log_line(ctx, "gen n=" + std::to_string(ds.size()));
    ctx.out << "wrote " << ds.size() << " passes to " << ctx.out_dir.string() << " (success rate "
            << success_rate(ds) << ", Bayes accuracy " << bayes_accuracy(ds) << ")\n";
    return kExitOk;
}

int cmd_render(const Ctx& ctx, const Flags& f) {
    PitchScene scene;
    std::string tag;
    if (f.pass_id) {
        const PassInput in = resolve_pass(f, ctx.rc);
        scene = in.scene;
        tag = in.tag;
    } else {
        if (f.scene_file.empty()) throw ConfigError("give --pass-id or --scene");
        scene = scene_from_json(read_json(f.scene_file));
        tag = "scene";
    }
    const RasterConfig raster = ctx.rc.raster();
    fs::create_directories(ctx.out_dir);
    const fs::path png = ctx.out_dir / ("render_" + tag + ".png");
    write_png(png, rasterize_scene(scene, raster));
    json side = provenance(ctx);
    side["v"] = kApiVersion;
    side["raster"] = raster_config_to_json(raster);
    side["scene"] = scene_to_json(scene);
    write_json(ctx.out_dir / ("render_" + tag + ".json"), side);
    log_line(ctx, "render " + tag);
    ctx.out << "wrote " << png.string() << '\n';
    return kExitOk;
}

int cmd_train(const Ctx& ctx, const Flags& f) {
    const Dataset ds = obtain_dataset(ctx.rc);
    if (!(ds.config.raster == ctx.rc.raster()))
        throw ConfigMismatch("dataset was rendered with different raster settings than preset '" + ctx.rc.preset + "'");
    const SplitPlan plan = make_folds(ds.size(), ctx.rc.seed, ctx.rc.folds);
    std::vector<int> folds;
    if (f.all_folds)
        for (int k = 0; k < ctx.rc.folds; ++k) folds.push_back(k);
    else
        folds.push_back(ctx.rc.fold);

    json meta = provenance(ctx);
    meta["dataset_size"] = ds.size();
    meta["dataset_seed"] = ds.seed;
    meta["synth_mode"] = synth_mode_name(ds.config.mode);
    json listing = json::array();
    for (int k : folds) {
        const TrainResult r = train_fold(ctx.rc.model(), ds, plan, k, ctx.rc.train(), meta);
        const fs::path dir = ctx.out_dir / ("fold_" + std::to_string(k));
        fs::create_directories(dir);
        save_checkpoint(r.best, dir / "checkpoint.bin");
        json hist = provenance(ctx);
        hist["v"] = kApiVersion;
        hist["fold"] = k;
        hist["best_epoch"] = r.best_epoch;
        hist["best_validation_accuracy"] = r.best_validation_accuracy;
        hist["aborted"] = r.aborted;
        if (r.aborted) hist["diagnostic"] = r.diagnostic;
        json epochs = json::array();
        for (const auto& e : r.history)
            epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_accuracy", e.validation_accuracy}});
        hist["epochs"] = epochs;
        hist["step_losses"] = r.step_losses;
        write_json(dir / "history.json", hist);
        listing.push_back({{"fold", k}, {"checkpoint", (dir / "checkpoint.bin").string()},
                           {"best_validation_accuracy", r.best_validation_accuracy}});
        log_line(ctx, "train fold " + std::to_string(k));
        ctx.out << "fold " << k << ": best validation accuracy " << r.best_validation_accuracy << " at epoch "
                << r.best_epoch << (r.aborted ? " (aborted: " + r.diagnostic + ")" : "") << '\n';
        if (r.aborted) return kExitData;
    }
    json summary = provenance(ctx);
    summary["v"] = kApiVersion;
    summary["split"] = split_plan_to_json(plan);
    summary["folds"] = listing;
    write_json(ctx.out_dir / "train.json", summary);
    return kExitOk;
}

int cmd_eval(const Ctx& ctx, const Flags& f) {
    if (f.checkpoints.empty()) throw ConfigError("at least one --checkpoint is required");
    const Dataset ds = obtain_dataset(ctx.rc);
    std::vector<Metrics> per_fold;
    json rows = json::array();
    std::ofstream csv;
    fs::create_directories(ctx.out_dir);
    csv.open(ctx.out_dir / "metrics.csv");
    csv << "# run_config_hash=" << ctx.hash << '\n' << metrics_csv_header() << '\n';
    std::ofstream jsonl;
    if (f.explain) jsonl.open(ctx.out_dir / "explanations.jsonl");

    for (const auto& path : f.checkpoints) {
        const Checkpoint ckpt = load_checkpoint(path);
        const json& m = ckpt.metadata;
        if (!m.contains("fold") || !m.contains("folds") || !m.contains("split_seed"))
            throw ConfigMismatch(path + " carries no fold metadata");
        if (m.value("dataset_size", ds.size()) != ds.size() || m.value("dataset_seed", ds.seed) != ds.seed)
            throw ConfigMismatch(path + " was trained on a different dataset");
        const int fold = m["fold"];
        const SplitPlan plan = make_folds(ds.size(), m["split_seed"].get<std::uint64_t>(), m["folds"].get<int>());
        const auto test = plan.test(fold);
        const EvalResult ev = evaluate(ckpt, ds, test, f.explain);
        per_fold.push_back(ev.metrics);
        rows.push_back({{"fold", fold},
                        {"checkpoint", path},
                        {"checkpoint_run_config_hash", m.value("run_config_hash", "")},
                        {"metrics", metrics_to_json(ev.metrics)}});
        csv << metrics_csv_row("fold_" + std::to_string(fold), ev.metrics) << '\n';
        for (std::size_t j = 0; j < ev.reports.size(); ++j) {
            json line = report_to_json(ev.reports[j]);
            line["pass_id"] = ds.passes[ev.indices[j]].id;
            line["fold"] = fold;
            line["label"] = outcome_name(ds.passes[ev.indices[j]].label);
            line["run_config_hash"] = ctx.hash;
            jsonl << line.dump() << '\n';
            if (f.overlays) {
                const fs::path dir = ctx.out_dir / "overlays";
                fs::create_directories(dir);
                write_png(dir / (std::to_string(ds.passes[ev.indices[j]].id) + ".png"),
                          overlay_heatmap(ds.images[ev.indices[j]], ev.reports[j].gradcam_upsampled));
            }
        }
        ctx.out << "fold " << fold << ": accuracy " << ev.metrics.accuracy << " on " << test.size() << " passes\n";
    }
    const MetricsSummary s = summarize(per_fold);
    json result = provenance(ctx);
    result["v"] = kApiVersion;
    result["per_fold"] = rows;
    result["summary"] = summary_to_json(s);
    write_json(ctx.out_dir / "metrics.json", result);
    log_line(ctx, "eval " + std::to_string(f.checkpoints.size()) + " checkpoint(s)");
    ctx.out << "mean accuracy " << s.mean_accuracy << " +/- " << s.std_accuracy << " over " << s.folds << " fold(s)\n";
    return kExitOk;
}

int cmd_explain(const Ctx& ctx, const Flags& f) {
    const Checkpoint ckpt = load_single_checkpoint(f);
    const PassInput in = resolve_pass(f, ctx.rc);
    std::optional<int> target;
    if (!f.target_class.empty()) target = static_cast<int>(outcome_from_name(f.target_class));
    const RasterImage img = rasterize_scene(in.scene, ckpt.raster);
    const ExplanationReport r = explain_pass(ckpt.params, img.float_view(), features_for(ckpt, in.stats), target);

    json report = report_to_json(r);
    report.update(provenance(ctx));
    report["checkpoint_run_config_hash"] = ckpt.metadata.value("run_config_hash", "");
    report["pass_id"] = in.pass_id ? json(*in.pass_id) : json(nullptr);
    const std::string stem = "explain_" + in.tag;
    write_json(ctx.out_dir / (stem + ".json"), report);
    json bars = feature_bars_json(r);
    bars["run_config_hash"] = ctx.hash;
    write_json(ctx.out_dir / (stem + "_features.json"), bars);
    write_png(ctx.out_dir / (stem + "_overlay.png"), overlay_heatmap(img, r.gradcam_upsampled));
    log_line(ctx, "explain " + in.tag);
    ctx.out << "predicted " << outcome_name(r.predicted) << " (p_success " << r.probabilities[0] << "), C_T "
            << r.ct_raw << ", C_S " << r.cs_raw << "; wrote " << (ctx.out_dir / (stem + ".json")).string() << '\n';
    return kExitOk;
}

int cmd_sweep(const Ctx& ctx, const Flags& f) {
    const Checkpoint ckpt = load_single_checkpoint(f);
    const PassInput in = resolve_pass(f, ctx.rc);
    if (f.cols < 1 || f.rows < 1) throw ConfigError("--cols and --rows must be positive");
    if (f.cols > kMaxSweepSide || f.rows > kMaxSweepSide)
        throw ConfigError("sweep grid larger than " + std::to_string(kMaxSweepSide) + " per side");
    const SweepGrid grid{f.cols, f.rows};
    json result = sweep_json(ckpt, in.scene, in.stats, grid);
    result.update(provenance(ctx));
    const std::string stem = "sweep_" + in.tag;
    write_json(ctx.out_dir / (stem + ".json"), result);

    // 8 px per cell; image row 0 is the highest y, as in the scene renders.
    constexpr int kCell = 8;
    RasterImage map(grid.rows * kCell, grid.cols * kCell);
    for (const auto& c : result["cells"]) {
        const double p = c["p_success"];
        const Rgb color{static_cast<std::uint8_t>(std::lround(255 * p)), 64, static_cast<std::uint8_t>(std::lround(255 * (1 - p)))};
        const int top = (grid.rows - 1 - c["row"].get<int>()) * kCell, left = c["col"].get<int>() * kCell;
        for (int r = 0; r < kCell; ++r)
            for (int q = 0; q < kCell; ++q) map.set(top + r, left + q, color);
    }
    write_png(ctx.out_dir / (stem + ".png"), map);
    log_line(ctx, "sweep " + in.tag);
    const json& best = result["argmax"];
    ctx.out << result["cells"].size() << " cells; best arrival point (" << best["x"] << ", " << best["y"]
            << ") with p_success " << best["p_success"] << '\n';
    return kExitOk;
}

int cmd_serve(const Ctx& ctx, const Flags& f) {
    InferenceService svc(f.cors_origin);
    if (!f.checkpoints.empty()) svc.load(load_single_checkpoint(f));
    HttpServer server(svc);
    ctx.out << "listening on http://" << f.host << ':' << f.port << std::endl;
    server.run(f.host, f.port);
    return kExitOk;
}

int cmd_tune_truth(const Ctx& ctx, const Flags& f) {
    const SynthConfig cfg = ctx.rc.synth();
    const double target = f.target_rate.value_or(ctx.rc.mode == SynthMode::mixed ? 3663.0 / 6349.0 : 0.5);
    const BiasCalibration cal = calibrate_bias(cfg, target, f.calib_n, f.calib_seed);
    json result = provenance(ctx);
    result["v"] = kApiVersion;
    result["mode"] = synth_mode_name(ctx.rc.mode);
    result["target_rate"] = target;
    result["n"] = f.calib_n;
    result["seed"] = f.calib_seed;
    result["bias"] = cal.bias;
    result["expected_success_rate"] = cal.expected_success_rate;
    result["bayes_accuracy"] = cal.bayes_accuracy;
    write_json(ctx.out_dir / "tune_truth.json", result);
    log_line(ctx, "tune-truth");
    ctx.out << "bias " << std::setprecision(6) << cal.bias << " (success rate " << cal.expected_success_rate
            << ", Bayes accuracy " << cal.bayes_accuracy << ")\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pass success classifier with two-stage explanations", "passcam"};
    app.fallthrough();
    app.require_subcommand(1);
    Flags f;

    auto* o_config = app.add_option("--config", f.config, "JSON run config file (flags override it)");
    auto* o_seed = app.add_option("--seed", f.seed, "Seed for data, splits and training");
    auto* o_preset = app.add_option("--preset", f.preset, "Model/raster preset")->check(CLI::IsMember({"desk", "paper"}));
    auto* o_mode = app.add_option("--mode", f.mode, "Synthetic ground truth")
                       ->check(CLI::IsMember({"mixed", "spatial_only", "stats_only"}));
    auto* o_n = app.add_option("--n", f.n, "Number of generated passes");
    auto* o_folds = app.add_option("--folds", f.folds, "Number of cross-validation folds");
    auto* o_fold = app.add_option("--fold", f.fold, "Fold to train");
    auto* o_epochs = app.add_option("--epochs", f.epochs, "Maximum epochs");
    auto* o_batch = app.add_option("--batch-size", f.batch_size, "Mini-batch size");
    auto* o_lr = app.add_option("--lr", f.lr, "Adam learning rate");
    auto* o_out = app.add_option("--out", f.out, "Output directory");
    auto* o_dataset = app.add_option("--dataset", f.dataset, "Dataset directory (default: generate in memory)");
    auto* o_image_only = app.add_flag("--image-only", f.image_only, "Drop the stats stream");
    app.add_option("--threads", f.threads, "Worker threads (0 = all cores)");

    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    gen->add_flag("--png", f.png, "Also write the renders");

    auto add_pass_options = [&](CLI::App* sub) {
        sub->add_option("--pass-id", f.pass_id, "Pass id in the dataset");
        sub->add_option("--scene", f.scene_file, "Scene JSON file");
    };
    auto* render = app.add_subcommand("render", "Render one scene to PNG");
    add_pass_options(render);

    auto* train = app.add_subcommand("train", "Train one fold (or all folds)");
    train->add_flag("--all-folds", f.all_folds, "Train every fold");

    auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on their test blocks");
    eval->add_option("--checkpoint", f.checkpoints, "Checkpoint file(s)")->required();
    eval->add_flag("--explain", f.explain, "Write an explanation per test pass");
    eval->add_flag("--overlays", f.overlays, "With --explain: Grad-CAM overlay PNGs");

    auto* explain = app.add_subcommand("explain", "Explain one pass");
    explain->add_option("--checkpoint", f.checkpoints, "Checkpoint file")->required();
    add_pass_options(explain);
    explain->add_option("--stats", f.stats_file, "Passer stats JSON file (with --scene)");
    explain->add_option("--archetype", f.archetype, "Passer archetype (with --scene)");
    explain->add_option("--class", f.target_class, "Class to explain (default: predicted)")
        ->check(CLI::IsMember({"success", "failure"}));

    auto* sweep = app.add_subcommand("sweep", "Success probability over alternative arrival points");
    sweep->add_option("--checkpoint", f.checkpoints, "Checkpoint file")->required();
    add_pass_options(sweep);
    sweep->add_option("--stats", f.stats_file, "Passer stats JSON file (with --scene)");
    sweep->add_option("--archetype", f.archetype, "Passer archetype (with --scene)");
    sweep->add_option("--cols", f.cols, "Grid columns along x");
    sweep->add_option("--rows", f.rows, "Grid rows along y");

    auto* serve = app.add_subcommand("serve", "Start the HTTP service");
    serve->add_option("--checkpoint", f.checkpoints, "Checkpoint to load");
    serve->add_option("--host", f.host, "Bind address");
    serve->add_option("--port", f.port, "Port");
    serve->add_option("--cors-origin", f.cors_origin, "Allowed browser origin");

    auto* tune = app.add_subcommand("tune-truth", "Calibrate the ground-truth bias for a mode");
    tune->add_option("--target-rate", f.target_rate, "Target success rate");
    tune->add_option("--calib-n", f.calib_n, "Passes used for calibration");
    tune->add_option("--calib-seed", f.calib_seed, "Calibration seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return kExitUsage;
    }

    RunConfig rc;
    try {
        if (o_config->count()) rc = load_run_config(f.config, rc);
        if (o_seed->count()) rc.seed = f.seed;
        if (o_preset->count()) rc.preset = f.preset;
        if (o_mode->count()) rc.mode = synth_mode_from_name(f.mode);
        if (o_n->count()) rc.n = f.n;
        if (o_folds->count()) rc.folds = f.folds;
        if (o_fold->count()) rc.fold = f.fold;
        if (o_epochs->count()) rc.epochs = f.epochs;
        if (o_batch->count()) rc.batch_size = f.batch_size;
        if (o_lr->count()) rc.lr = f.lr;
        if (o_out->count()) rc.out = f.out;
        if (o_dataset->count()) rc.dataset = f.dataset;
        if (o_image_only->count()) rc.image_only = f.image_only;
        rc.validate();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    set_num_threads(f.threads);

    const Ctx ctx{rc, run_config_hash(rc), fs::path(rc.out), out};
    try {
        if (*gen) return cmd_gen(ctx, f);
        if (*render) return cmd_render(ctx, f);
        if (*train) return cmd_train(ctx, f);
        if (*eval) return cmd_eval(ctx, f);
        if (*explain) return cmd_explain(ctx, f);
        if (*sweep) return cmd_sweep(ctx, f);
        if (*serve) return cmd_serve(ctx, f);
        if (*tune) return cmd_tune_truth(ctx, f);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace passcam
