#include "ssc/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>

#include "ssc/grad_suite.hpp"
#include "ssc/pipeline.hpp"

namespace ssc {

namespace {

namespace fs = std::filesystem;

// Config overrides shared by the data-facing commands; only values the user
// actually passed are applied on top of the loaded config.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> frames;
    std::optional<double> lr;
    std::optional<std::string> query_mode;
    std::optional<std::string> occupancy_source;
    std::vector<double> ranges;
    bool affinity_on = false, affinity_off = false;
    bool disable_cross = false, disable_self = false;
};

void add_override_options(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--frames", o.frames, "Temporal frames per scene");
    cmd->add_option("--lr", o.lr, "Adam learning rate");
    cmd->add_option("--query-mode", o.query_mode,
                    "Query selection: occupancy | dense | random:<fraction>");
    cmd->add_option("--occupancy-source", o.occupancy_source,
                    "Mask source in occupancy mode: net | oracle | raw_depth");
    cmd->add_option("--ranges", o.ranges, "Evaluation ranges in meters")->delimiter(',');
    cmd->add_flag("--affinity", o.affinity_on, "Train with the affinity losses");
    cmd->add_flag("--no-affinity", o.affinity_off, "Train without the affinity losses");
    cmd->add_flag("--disable-cross-attention", o.disable_cross,
                  "Skip image cross-attention (ablation)");
    cmd->add_flag("--disable-self-attention", o.disable_self,
                  "Skip volume self-attention (ablation)");
}

RunConfig resolve_config(const std::string& config_path, const std::string& data_dir,
                         const Overrides& o) {
    RunConfig cfg;
    if (!config_path.empty()) {
        cfg = load_config(config_path);
    } else if (!data_dir.empty() &&
               fs::exists(fs::path(data_dir) / "config.txt")) {
        cfg = load_config((fs::path(data_dir) / "config.txt").string());
    } else {
        cfg = RunConfig::desk_default();
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.frames) cfg.frames = *o.frames;
    if (o.lr) cfg.lr = *o.lr;
    if (o.query_mode) cfg.query_mode = parse_query_mode(*o.query_mode, &cfg.random_query_fraction);
    if (o.occupancy_source) cfg.occupancy_source = parse_occupancy_source(*o.occupancy_source);
    if (!o.ranges.empty()) cfg.eval_ranges = o.ranges;
    if (o.affinity_on && o.affinity_off)
        throw std::invalid_argument("--affinity and --no-affinity conflict");
    if (o.affinity_on) cfg.with_affinity = true;
    if (o.affinity_off) cfg.with_affinity = false;
    if (o.disable_cross) cfg.disable_cross_attention = true;
    if (o.disable_self) cfg.disable_self_attention = true;
    cfg.validate();
    return cfg;
}

std::vector<LoadedScene> load_dataset(const std::string& data_dir, const RunConfig& cfg) {
    const auto entries = load_manifest((fs::path(data_dir) / "manifest.txt").string());
    std::vector<LoadedScene> scenes;
    scenes.reserve(entries.size());
    for (const auto& e : entries) scenes.push_back(load_scene_sample(e, cfg));
    return scenes;
}

// Loads the first-stage model when a path was given; otherwise checks the
// config does not require one.
std::optional<Stage1Model> maybe_stage1(const RunConfig& cfg, const std::string& path) {
    if (path.empty()) {
        if (cfg.query_mode == QueryMode::occupancy && cfg.occupancy_source == OccupancySource::net)
            throw std::invalid_argument(
                "query selection from the net needs --stage1 <parameter file>");
        return std::nullopt;
    }
    Stage1Model model = Stage1Model::init(cfg);
    model.load(path);
    return model;
}

void print_eval(const EvalResult& result, std::ostream& out) {
    for (std::size_t i = 0; i < result.per_scene.size(); ++i)
        out << "scene " << i << "\n" << format_report(result.per_scene[i]);
    out << "aggregate (" << result.per_scene.size() << " scenes)\n"
        << format_report(result.aggregate);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stage sparse-voxel semantic scene completion on synthetic scenes"};
    app.require_subcommand(1);
    int rc = 0;

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a dataset of synthetic scenes");
    struct {
        std::string out_dir, config;
        int scenes = 10;
        std::optional<std::uint64_t> base_seed;
        Overrides o;
    } sy;
    synth->add_option("--out", sy.out_dir, "Dataset directory")->required();
    synth->add_option("--scenes", sy.scenes, "Number of scenes");
    synth->add_option("--base-seed", sy.base_seed, "Dataset seed (default: run seed)");
    synth->add_option("--config", sy.config, "Config file");
    add_override_options(synth, sy.o);
    synth->callback([&] {
        const RunConfig cfg = resolve_config(sy.config, "", sy.o);
        const auto entries =
            synthesize_dataset(cfg, sy.out_dir, sy.scenes, sy.base_seed.value_or(cfg.seed));
        save_config((fs::path(sy.out_dir) / "config.txt").string(), cfg);
        out << "wrote " << entries.size() << " scenes to " << sy.out_dir << '\n';
    });

    // train ------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train a stage on a dataset");
    struct {
        std::string data, config, out_path, stage1;
        int stage = 0;
        std::optional<int> steps;
        bool resume = false;
        Overrides o;
    } tr;
    train->add_option("--data", tr.data, "Dataset directory")->required();
    train->add_option("--stage", tr.stage, "1 = occupancy net, 2 = completion model")
        ->required()
        ->check(CLI::Range(1, 2));
    train->add_option("--out", tr.out_path, "Parameter file to write")->required();
    train->add_option("--steps", tr.steps, "Training steps (default from config)");
    train->add_option("--stage1", tr.stage1, "First-stage parameters (stage 2, net source)");
    train->add_flag("--resume", tr.resume, "Continue from --out, restoring optimizer state");
    train->add_option("--config", tr.config, "Config file (default: dataset config)");
    add_override_options(train, tr.o);
    train->callback([&] {
        const RunConfig cfg = resolve_config(tr.config, tr.data, tr.o);
        const auto scenes = load_dataset(tr.data, cfg);
        AdamOptimizer adam(cfg.lr);
        if (tr.stage == 1) {
            Stage1Model model = Stage1Model::init(cfg);
            if (tr.resume) model.load(tr.out_path, &adam);
            const auto losses =
                train_stage1(cfg, model, scenes, tr.steps.value_or(cfg.stage1_steps), adam, &out);
            model.save(tr.out_path, &adam);
            out << "final loss " << losses.back() << "\nsaved " << tr.out_path << '\n';
        } else {
            const auto stage1 = maybe_stage1(cfg, tr.stage1);
            Stage2Model model = Stage2Model::init(cfg);
            if (tr.resume) model.load(tr.out_path, &adam);
            const auto losses =
                train_stage2(cfg, model, stage1 ? &*stage1 : nullptr, scenes,
                             tr.steps.value_or(cfg.stage2_steps), adam, &out);
            model.save(tr.out_path, &adam);
            out << "final loss " << losses.back() << "\nsaved " << tr.out_path << '\n';
        }
    });

    // eval -------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a completion model on a dataset");
    struct {
        std::string data, config, model, stage1;
        Overrides o;
    } ev;
    eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
    eval_cmd->add_option("--model", ev.model, "Completion model parameters")->required();
    eval_cmd->add_option("--stage1", ev.stage1, "First-stage parameters");
    eval_cmd->add_option("--config", ev.config, "Config file (default: dataset config)");
    add_override_options(eval_cmd, ev.o);
    eval_cmd->callback([&] {
        const RunConfig cfg = resolve_config(ev.config, ev.data, ev.o);
        const auto scenes = load_dataset(ev.data, cfg);
        const auto stage1 = maybe_stage1(cfg, ev.stage1);
        Stage2Model model = Stage2Model::init(cfg);
        model.load(ev.model);
        const EvalResult result = evaluate_scenes(cfg, model, stage1 ? &*stage1 : nullptr, scenes);
        print_eval(result, out);
    });

    // infer ------------------------------------------------------------
    auto* infer = app.add_subcommand("infer", "Predict one scene and report its metrics");
    struct {
        std::string data, config, model, stage1, out_path;
        int scene = 0;
        Overrides o;
    } in;
    infer->add_option("--data", in.data, "Dataset directory")->required();
    infer->add_option("--scene", in.scene, "Scene index")->required();
    infer->add_option("--model", in.model, "Completion model parameters")->required();
    infer->add_option("--stage1", in.stage1, "First-stage parameters");
    infer->add_option("--out", in.out_path, "Write the predicted label grid here");
    infer->add_option("--config", in.config, "Config file (default: dataset config)");
    add_override_options(infer, in.o);
    infer->callback([&] {
        const RunConfig cfg = resolve_config(in.config, in.data, in.o);
        const auto entries = load_manifest((fs::path(in.data) / "manifest.txt").string());
        if (in.scene < 0 || static_cast<std::size_t>(in.scene) >= entries.size())
            throw std::invalid_argument("scene index outside the dataset");
        const LoadedScene scene = load_scene_sample(entries[in.scene], cfg);
        const auto stage1 = maybe_stage1(cfg, in.stage1);
        Stage2Model model = Stage2Model::init(cfg);
        model.load(in.model);
        const SemanticGrid pred = predict_scene(cfg, model, stage1 ? &*stage1 : nullptr, scene);
        if (!in.out_path.empty()) save_semantic_grid(in.out_path, pred, cfg.volume);
        out << format_report(evaluate(pred, scene.gt, cfg.volume, cfg.eval_ranges,
                                      cfg.class_count + 1));
    });

    // gradcheck ----------------------------------------------------------
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference sweep over every op");
    struct {
        std::uint64_t seed = 1;
        int seeds = 1;
        double tol = 1e-4;
    } gc;
    gradcheck->add_option("--seed", gc.seed, "First seed");
    gradcheck->add_option("--seeds", gc.seeds, "Number of consecutive seeds")
        ->check(CLI::PositiveNumber);
    gradcheck->add_option("--tol", gc.tol, "Relative error tolerance");
    gradcheck->callback([&] {
        int failures = 0;
        double worst = 0.0;
        for (int s = 0; s < gc.seeds; ++s) {
            const std::uint64_t seed = gc.seed + static_cast<std::uint64_t>(s);
            for (const auto& c : run_grad_suite(seed, gc.tol)) {
                worst = std::max(worst, c.report.max_rel_error);
                if (!c.report.passed) {
                    ++failures;
                    out << "FAIL " << c.op << " seed " << seed << " rel error "
                        << c.report.max_rel_error << '\n';
                }
            }
        }
        out << "gradcheck: " << gc.seeds << " seed(s), worst rel error " << worst << ", "
            << (failures == 0 ? "all ops passed" : std::to_string(failures) + " failures")
            << '\n';
        if (failures > 0) rc = 5;
    });

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("ssc");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    } catch (const CheckpointMismatch& e) {
        err << "error: " << e.what() << '\n';
        return 4;
    } catch (const NumericFailure& e) {
        err << "error: " << e.what() << '\n';
        return 5;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    }
    return rc;
}

}  // namespace ssc
