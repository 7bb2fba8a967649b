// Command-line front end: scenario execution, model training, gradient
// checking, grid inspection, and artifact export.
#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "geonav/experiment.hpp"
#include "geonav/field_model.hpp"
#include "geonav/scenario.hpp"
#include "geonav/talstm.hpp"

namespace fs = std::filesystem;
using namespace geonav;

namespace {

int cmd_train(const fs::path& config_path, const fs::path& out_dir, std::uint64_t seed) {
    const scenario::ScenarioConfig config = scenario::load_scenario(config_path);
    talstm::Dataset data = experiment::generate_training_data(config, seed);
    if (data.sequences.empty()) {
        std::cerr << "error: no training windows could be generated\n";
        return 1;
    }
    talstm::TaLstmModel model =
        talstm::make_model(config.training.window, config.training.hidden,
                           scenario::derive_seed(seed, 0x1417));
    talstm::TrainingOptions opts;
    opts.epochs = config.training.epochs;
    opts.learning_rate = config.training.learning_rate;
    opts.drop_factor = config.training.drop_factor;
    opts.drop_period = config.training.drop_period;
    opts.batch_windows = config.training.batch;
    opts.train_ratio = config.training.train_ratio;
    opts.validation_share = config.training.validation_share;
    opts.seed = scenario::derive_seed(seed, 0x7EAC);
    talstm::train(model, data, opts);

    fs::create_directories(out_dir);
    talstm::save_model(model, out_dir / "model.talstm");
    talstm::write_dataset_csv(data, out_dir / "training_data.csv");
    {
        std::ofstream os(out_dir / "training_report.csv");
        os << "epoch,train_loss,val_loss\n";
        for (std::size_t e = 0; e < model.meta.train_loss.size(); ++e) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,", e + 1, model.meta.train_loss[e]);
            os << buf;
            if (e < model.meta.val_loss.size() && !std::isnan(model.meta.val_loss[e])) {
                std::snprintf(buf, sizeof(buf), "%.17g", model.meta.val_loss[e]);
                os << buf;
            }
            os << '\n';
        }
    }
    std::cout << "trained " << config.training.epochs << " epochs over "
              << data.window_count() << " windows; final training loss "
              << (model.meta.train_loss.empty() ? 0.0 : model.meta.train_loss.back())
              << "\nmodel: " << (out_dir / "model.talstm").string() << '\n';
    return 0;
}

int cmd_run(const fs::path& config_path, const std::optional<fs::path>& model_path,
            const fs::path& out_dir, std::uint64_t seed, bool svg) {
    scenario::ScenarioConfig config = scenario::load_scenario(config_path);
    std::optional<talstm::TaLstmModel> model;
    if (config.policy != nav::PolicyKind::kAnalytic) {
        fs::path p;
        if (model_path) {
            p = *model_path;
        } else if (config.model_path) {
            p = *config.model_path;
            if (p.is_relative()) p = config.base_dir / p;
        } else {
            std::cerr << "error: policy requires a model (--model or policy.model)\n";
            return 1;
        }
        model = talstm::load_model(p);
    }
    nav::MissionResult result =
        experiment::run_scenario_mission(config, model ? &*model : nullptr, seed);
    if (result.outcome == nav::MissionOutcome::kAborted) {
        std::cerr << "error: mission aborted: " << result.diagnostic << '\n';
        return 1;
    }
    fs::create_directories(out_dir);
    experiment::export_trajectory_csv(result, out_dir / "trajectory.csv");
    experiment::export_convergence(
        result, out_dir / "convergence.csv",
        svg ? std::optional<fs::path>(out_dir / "convergence.svg") : std::nullopt);

    const nav::MetricSet& m = result.metrics;
    std::cout << "outcome: "
              << (result.outcome == nav::MissionOutcome::kSuccess ? "success"
                                                                  : "budget-exhausted")
              << "\nsteps: " << m.steps << "\ntravelled_km: " << m.travelled_km
              << "\ndeviation: " << m.deviation << "\nmean_eta: " << m.mean_eta
              << "\narrival: " << m.arrival.lat_deg << "N " << m.arrival.lon_deg << "E\n";
    return result.outcome == nav::MissionOutcome::kSuccess ? 0 : 2;
}

int cmd_suite(const fs::path& config_path, const fs::path& out_dir, std::uint64_t seed,
              std::optional<int> repetitions) {
    const scenario::ScenarioConfig config = scenario::load_scenario(config_path);
    const int reps = repetitions.value_or(config.suite.repetitions);
    experiment::SuiteReport report =
        experiment::run_scenario_suite(config, reps, seed, out_dir);
    std::cout << "runs: " << report.runs.size() << "\nfailures: " << report.failures
              << "\nmean steps: " << report.steps.mean
              << "\nmean travelled_km: " << report.travelled_km.mean
              << "\nmean deviation: " << report.deviation.mean
              << "\nmean eta: " << report.mean_eta.mean << '\n';
    return report.failures == 0 ? 0 : 2;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt) {
    // Small seeded model and forecast sequence; the tolerances match the
    // library's training-correctness gate.
    talstm::TaLstmModel model =
        talstm::make_model(6, 5, scenario::derive_seed(seed, 1), 4, 4.0);
    std::mt19937_64 rng(scenario::derive_seed(seed, 2));
    std::uniform_real_distribution<double> pos(-2000.0, 2000.0);
    std::uniform_real_distribution<double> ang(-40.0, 40.0);
    talstm::SequenceSeries seq;
    for (int w = 0; w < 3; ++w) {
        talstm::WindowSeries win;
        win.window_index = w + 1;
        win.inputs = talstm::MatrixXd(6, 4);
        win.targets_deg = talstm::VectorXd(6);
        for (int k = 0; k < 6; ++k) {
            win.inputs(k, 0) = pos(rng);
            win.inputs(k, 1) = pos(rng);
            win.inputs(k, 2) = ang(rng) / 10.0;
            win.inputs(k, 3) = ang(rng);
            win.targets_deg[k] = ang(rng);
        }
        seq.push_back(std::move(win));
    }
    talstm::Dataset data;
    data.sequences.push_back(std::move(seq));
    // match the normalization to the generator scales so the cells operate
    // in their responsive range, as they would after training
    model.norm.input_mean.setZero();
    model.norm.input_std << 1200.0, 1200.0, 2.5, 24.0;
    talstm::GradientCheckOptions opts;
    opts.corrupt_output_grad = corrupt;
    opts.seed = scenario::derive_seed(seed, 3);
    const double err = talstm::gradient_check(model, data, 1e-5, opts);
    std::printf("max relative gradient error: %.6e\n", err);
    return err <= 1e-4 ? 0 : 1;
}

int cmd_fieldinfo(const std::optional<fs::path>& config_path,
                  const std::optional<fs::path>& grid_path) {
    if (grid_path) {
        const field::FieldGrid grid = field::load_grid(*grid_path);
        std::cout << "grid: " << grid.nlat << " x " << grid.nlon << " samples\n"
                  << "lat: [" << grid.lat0_deg << ", " << grid.lat_max_deg()
                  << "] step " << grid.dlat_deg << "\nlon: [" << grid.lon0_deg << ", "
                  << grid.lon_max_deg() << "] step " << grid.dlon_deg << '\n';
        const field::MagneticVector& c = grid.at(grid.nlat / 2, grid.nlon / 2);
        std::cout << "center sample: F=" << c.f_nt << " nT, H=" << c.h_nt
                  << " nT, I=" << c.incl_deg << " deg, D=" << c.decl_deg << " deg\n";
        return 0;
    }
    if (!config_path) {
        std::cerr << "error: fieldinfo needs --config or --grid\n";
        return 1;
    }
    const scenario::ScenarioConfig config = scenario::load_scenario(*config_path);
    const field::FieldWorld world = scenario::build_world(config.world, config.base_dir);
    const field::LocalProjection proj(config.mission.origin_lat_deg,
                                      config.mission.origin_lon_deg);
    const auto origin =
        proj.from_latlon(config.mission.origin_lat_deg, config.mission.origin_lon_deg);
    const field::MagneticVector m = world.field_at(origin);
    std::cout << "base: " << (config.world.dipole ? "dipole" : "grid") << ", "
              << config.world.patches.size() << " anomaly patch(es)\n"
              << "field at mission origin (" << origin.lat_deg << "N, " << origin.lon_deg
              << "E):\n  BX=" << m.bx_nt << " BY=" << m.by_nt << " BZ=" << m.bz_nt
              << " F=" << m.f_nt << " H=" << m.h_nt << " I=" << m.incl_deg
              << " D=" << m.decl_deg << '\n';
    for (std::size_t i = 0; i < config.mission.destinations.size(); ++i) {
        const auto d = proj.from_latlon(config.mission.destinations[i][0],
                                        config.mission.destinations[i][1]);
        const field::MagneticVector md = world.field_at(d);
        std::cout << "destination " << i + 1 << " (" << d.lat_deg << "N, " << d.lon_deg
                  << "E): I=" << md.incl_deg << " D=" << md.decl_deg << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Geomagnetic dead-reckoning navigation simulator"};
    app.require_subcommand(1);

    std::string config_path, model_path, grid_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool svg = false;
    bool corrupt = false;
    int repetitions = -1;

    CLI::App* train = app.add_subcommand("train", "train a heading-forecast model");
    train->add_option("--config", config_path, "scenario config")->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--seed", seed, "random seed");

    CLI::App* run = app.add_subcommand("run", "run one mission");
    run->add_option("--config", config_path, "scenario config")->required();
    run->add_option("--model", model_path, "model file");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--seed", seed, "random seed");
    run->add_flag("--svg", svg, "also write an SVG convergence chart");

    CLI::App* suite = app.add_subcommand("suite", "repeated seeded runs with statistics");
    suite->add_option("--config", config_path, "scenario config")->required();
    suite->add_option("--out", out_dir, "output directory");
    suite->add_option("--seed", seed, "random seed");
    suite->add_option("--repetitions", repetitions, "override the config repetition count");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of the training gradients");
    gradcheck->add_option("--seed", seed, "random seed");
    gradcheck->add_flag("--corrupt-gradient", corrupt,
                        "test hook: corrupt one gradient tensor (must fail)");

    CLI::App* fieldinfo = app.add_subcommand("fieldinfo", "inspect a world or grid file");
    fieldinfo->add_option("--config", config_path, "scenario config");
    fieldinfo->add_option("--grid", grid_path, "field-grid file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            return cmd_train(config_path, out_dir, seed);
        }
        if (run->parsed()) {
            return cmd_run(config_path,
                           model_path.empty() ? std::nullopt
                                              : std::optional<fs::path>(model_path),
                           out_dir, seed, svg);
        }
        if (suite->parsed()) {
            return cmd_suite(config_path, out_dir, seed,
                             repetitions > 0 ? std::optional<int>(repetitions)
                                             : std::nullopt);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(seed, corrupt);
        }
        if (fieldinfo->parsed()) {
            return cmd_fieldinfo(config_path.empty()
                                     ? std::nullopt
                                     : std::optional<fs::path>(config_path),
                                 grid_path.empty() ? std::nullopt
                                                   : std::optional<fs::path>(grid_path));
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 1;
}
