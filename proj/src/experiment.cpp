#include "geonav/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <random>
#include <sstream>

#include "geonav/angles.hpp"

namespace geonav::experiment {

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return {};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot open output file: " + path.string());
    }
    return os;
}

const char* outcome_name(nav::MissionOutcome o) {
    switch (o) {
        case nav::MissionOutcome::kSuccess: return "success";
        case nav::MissionOutcome::kBudgetExhausted: return "budget-exhausted";
        case nav::MissionOutcome::kAborted: return "aborted";
    }
    return "unknown";
}

} // namespace

double heading_variance(std::span<const double> flown_deg,
                        std::span<const double> predicted_deg) {
    if (flown_deg.size() != predicted_deg.size()) {
        throw std::invalid_argument("heading series differ in length");
    }
    if (flown_deg.empty()) {
        throw std::invalid_argument("heading series are empty");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < flown_deg.size(); ++i) {
        sum += wrap_diff_deg(flown_deg[i], predicted_deg[i]);
    }
    return sum / static_cast<double>(flown_deg.size());
}

double unbiased_heading_variance(std::span<const double> flown_deg,
                                 std::span<const double> predicted_deg) {
    if (flown_deg.size() != predicted_deg.size()) {
        throw std::invalid_argument("heading series differ in length");
    }
    const std::size_t n = flown_deg.size();
    if (n < 2) return 0.0;
    std::vector<double> diffs(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diffs[i] = wrap_diff_deg(flown_deg[i], predicted_deg[i]);
        mean += diffs[i];
    }
    mean /= static_cast<double>(n);
    double acc = 0.0;
    for (double d : diffs) acc += (d - mean) * (d - mean);
    return acc / static_cast<double>(n - 1);
}

double navigation_deviation(const field::GeoPosition& origin,
                            const field::GeoPosition& destination,
                            const field::GeoPosition& arrival) {
    const double base = std::hypot(destination.x_m - origin.x_m,
                                   destination.y_m - origin.y_m);
    if (base == 0.0) {
        throw std::invalid_argument("origin and destination coincide");
    }
    return std::hypot(destination.x_m - arrival.x_m, destination.y_m - arrival.y_m) / base;
}

void compute_metrics(nav::MissionResult& result) {
    std::vector<double> flown, predicted;
    for (const nav::MissionStep& s : result.steps) {
        if (!std::isnan(s.theta_cmd) && !std::isnan(s.theta_predicted)) {
            flown.push_back(s.theta_cmd);
            predicted.push_back(s.theta_predicted);
        }
    }
    if (!flown.empty()) {
        result.metrics.heading_variance_signed = heading_variance(flown, predicted);
        result.metrics.heading_variance_unbiased = unbiased_heading_variance(flown, predicted);
    } else {
        result.metrics.heading_variance_signed = 0.0;
        result.metrics.heading_variance_unbiased = 0.0;
    }

    if (!result.steps.empty() && !result.leg_start_steps.empty() &&
        !result.spec.destinations.empty()) {
        const field::LocalProjection proj(result.spec.origin_lat_deg,
                                          result.spec.origin_lon_deg);
        const int last_leg_start = result.leg_start_steps.back();
        const field::GeoPosition leg_origin = result.steps[last_leg_start].position;
        const field::GeoPosition dest = proj.from_latlon(
            result.spec.destinations.back()[0], result.spec.destinations.back()[1]);
        result.metrics.deviation =
            navigation_deviation(leg_origin, dest, result.metrics.arrival);
    }
}

void export_trajectory_csv(const nav::MissionResult& result,
                           const std::filesystem::path& path) {
    std::ofstream os = open_out(path);
    os << "step,lat,lon,x_m,y_m,theta_cmd,theta_analytic,theta_predicted,eta,e_n,mu,"
          "sigma2,speed,F_total,F_bx,F_by,F_bz,F_d,F_i\n";
    for (const nav::MissionStep& s : result.steps) {
        os << s.step << ',' << fmt(s.position.lat_deg) << ',' << fmt(s.position.lon_deg)
           << ',' << fmt(s.position.x_m) << ',' << fmt(s.position.y_m) << ','
           << fmt(s.theta_cmd) << ',' << fmt(s.theta_analytic) << ','
           << fmt(s.theta_predicted) << ',' << fmt(s.eta) << ',' << fmt(s.e_n) << ','
           << fmt(s.mu) << ',' << fmt(s.sigma2) << ',' << fmt(s.speed_kmh) << ','
           << fmt(s.objective.total) << ',' << fmt(s.objective.elements[0]) << ','
           << fmt(s.objective.elements[1]) << ',' << fmt(s.objective.elements[2]) << ','
           << fmt(s.objective.elements[3]) << ',' << fmt(s.objective.elements[4]) << '\n';
    }
}

namespace {

void write_convergence_svg(const nav::MissionResult& result,
                           const std::filesystem::path& path) {
    static const char* kNames[5] = {"F_bx", "F_by", "F_bz", "F_d", "F_i"};
    static const char* kColors[5] = {"#c0392b", "#27ae60", "#2980b9", "#8e44ad", "#d68910"};
    const int width = 720, height = 420, margin = 48;
    const int n = static_cast<int>(result.steps.size());
    double fmax = 1.0;
    for (const nav::MissionStep& s : result.steps) {
        for (double v : s.objective.elements) fmax = std::max(fmax, v);
    }
    fmax = std::min(fmax, 10.0); // clip spikes so the converging curves stay readable

    std::ofstream os = open_out(path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
       << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
       << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
       << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    auto sx = [&](int i) {
        return margin + (width - 2.0 * margin) * (n > 1 ? double(i) / (n - 1) : 0.0);
    };
    auto sy = [&](double v) {
        const double c = std::clamp(v, 0.0, fmax);
        return height - margin - (height - 2.0 * margin) * (c / fmax);
    };
    for (int e = 0; e < 5; ++e) {
        os << "<polyline fill=\"none\" stroke=\"" << kColors[e] << "\" points=\"";
        for (int i = 0; i < n; ++i) {
            os << sx(i) << ',' << sy(result.steps[i].objective.elements[e]) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16 * e + 10
           << "\" fill=\"" << kColors[e] << "\" font-size=\"12\">" << kNames[e]
           << "</text>\n";
    }
    os << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
       << "\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
    os << "</svg>\n";
}

} // namespace

void export_convergence(const nav::MissionResult& result,
                        const std::filesystem::path& csv_path,
                        const std::optional<std::filesystem::path>& svg_path) {
    if (result.steps.empty()) {
        throw std::invalid_argument("mission result is empty");
    }
    std::ofstream os = open_out(csv_path);
    os << "step,F_bx,F_by,F_bz,F_d,F_i,F_total\n";
    for (const nav::MissionStep& s : result.steps) {
        os << s.step;
        for (double v : s.objective.elements) os << ',' << fmt(v);
        os << ',' << fmt(s.objective.total) << '\n';
    }
    if (svg_path) {
        write_convergence_svg(result, *svg_path);
    }
}

talstm::Dataset generate_training_data(const scenario::ScenarioConfig& config,
                                       std::uint64_t seed) {
    const field::FieldWorld world =
        scenario::build_world_without_patches(config.world, config.base_dir);
    std::mt19937_64 rng(scenario::derive_seed(seed, 0xDA7A));
    std::uniform_real_distribution<double> jitter(-config.training.origin_jitter_deg,
                                                  config.training.origin_jitter_deg);
    talstm::Dataset data;
    for (int t = 0; t < config.training.trajectories; ++t) {
        nav::MissionSpec spec = config.mission;
        spec.epsilon = config.mission.epsilon * config.training.epsilon_scale;
        if (t > 0 && config.training.origin_jitter_deg > 0.0) {
            spec.origin_lat_deg += jitter(rng);
            spec.origin_lon_deg += jitter(rng);
        }
        nav::MissionOptions options;
        options.policy = nav::PolicyKind::kAnalytic;
        options.schedule = config.schedule;
        options.schedule.window_len = config.training.window;
        nav::MissionResult run = nav::run_mission(world, spec, options);

        std::vector<nav::SamplePoint> track;
        std::vector<double> headings;
        for (const nav::MissionStep& s : run.steps) {
            if (std::isnan(s.theta_cmd)) continue;
            track.push_back(nav::SamplePoint{s.position.x_m, s.position.y_m,
                                             s.sample.decl_deg, s.sample.incl_deg});
            headings.push_back(s.theta_cmd);
        }
        talstm::SequenceSeries seq =
            talstm::slice_windows(track, headings, config.training.window);
        if (!seq.empty()) {
            data.sequences.push_back(std::move(seq));
        }
    }
    return data;
}

talstm::TaLstmModel train_from_scenario(const scenario::ScenarioConfig& config,
                                        std::uint64_t seed) {
    talstm::Dataset data = generate_training_data(config, seed);
    if (data.sequences.empty()) {
        throw std::runtime_error(
            "training data generation produced no usable windows; "
            "missions may be terminating before one full window");
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
    return model;
}

nav::MissionResult run_scenario_mission(const scenario::ScenarioConfig& config,
                                        const talstm::TaLstmModel* model,
                                        std::uint64_t seed) {
    (void)seed;
    const field::FieldWorld world = scenario::build_world(config.world, config.base_dir);
    nav::MissionOptions options;
    options.policy = config.policy;
    options.schedule = config.schedule;
    options.calibration = config.calibration;
    std::optional<talstm::TaLstmPredictor> predictor;
    if (config.policy != nav::PolicyKind::kAnalytic) {
        if (model == nullptr) {
            throw std::invalid_argument("policy requires a model");
        }
        predictor.emplace(*model);
        options.predictor = &*predictor;
    }
    nav::MissionResult result = nav::run_mission(world, config.mission, options);
    compute_metrics(result);
    return result;
}

namespace {

Aggregate aggregate_of(const std::vector<RunRecord>& runs,
                       double (*pick)(const RunRecord&)) {
    Aggregate a;
    if (runs.empty()) return a;
    for (const RunRecord& r : runs) a.mean += pick(r);
    a.mean /= static_cast<double>(runs.size());
    if (runs.size() > 1) {
        for (const RunRecord& r : runs) {
            const double d = pick(r) - a.mean;
            a.variance += d * d;
        }
        a.variance /= static_cast<double>(runs.size() - 1);
    }
    return a;
}

} // namespace

SuiteReport run_scenario_suite(const scenario::ScenarioConfig& config, int repetitions,
                               std::uint64_t seed,
                               const std::optional<std::filesystem::path>& out_dir) {
    if (repetitions < 1) {
        throw std::invalid_argument("repetitions must be >= 1");
    }
    std::optional<talstm::TaLstmModel> shared_model;
    if (config.policy != nav::PolicyKind::kAnalytic && config.model_path) {
        std::filesystem::path p = *config.model_path;
        if (p.is_relative()) p = config.base_dir / p;
        shared_model = talstm::load_model(p);
    }

    std::vector<nav::MissionResult> results(repetitions);
    std::vector<std::string> errors(repetitions);
    auto run_one = [&](int i) {
        try {
            scenario::ScenarioConfig run_cfg = config;
            const std::uint64_t run_seed = scenario::derive_seed(seed, i);
            if (config.suite.origin_jitter_deg > 0.0) {
                std::mt19937_64 rng(scenario::derive_seed(run_seed, 0x0123));
                std::uniform_real_distribution<double> jitter(
                    -config.suite.origin_jitter_deg, config.suite.origin_jitter_deg);
                run_cfg.mission.origin_lat_deg += jitter(rng);
                run_cfg.mission.origin_lon_deg += jitter(rng);
            }
            std::optional<talstm::TaLstmModel> local_model;
            const talstm::TaLstmModel* model = nullptr;
            if (config.policy != nav::PolicyKind::kAnalytic) {
                if (shared_model) {
                    model = &*shared_model;
                } else {
                    local_model = train_from_scenario(run_cfg, run_seed);
                    model = &*local_model;
                }
            }
            results[i] = run_scenario_mission(run_cfg, model, run_seed);
        } catch (const std::exception& ex) {
            errors[i] = ex.what();
            results[i].outcome = nav::MissionOutcome::kAborted;
            results[i].diagnostic = ex.what();
        }
    };

    {
        std::vector<std::future<void>> futures;
        futures.reserve(repetitions);
        for (int i = 0; i < repetitions; ++i) {
            futures.push_back(std::async(std::launch::async, run_one, i));
        }
        for (auto& f : futures) f.get();
    }

    SuiteReport report;
    for (int i = 0; i < repetitions; ++i) {
        RunRecord rec;
        rec.run_id = i;
        rec.outcome = results[i].outcome;
        rec.metrics = results[i].metrics;
        if (rec.outcome != nav::MissionOutcome::kSuccess) ++report.failures;
        report.runs.push_back(rec);
    }
    report.steps = aggregate_of(report.runs, [](const RunRecord& r) {
        return static_cast<double>(r.metrics.steps);
    });
    report.travelled_km =
        aggregate_of(report.runs, [](const RunRecord& r) { return r.metrics.travelled_km; });
    report.heading_variance_signed = aggregate_of(
        report.runs, [](const RunRecord& r) { return r.metrics.heading_variance_signed; });
    report.heading_variance_unbiased = aggregate_of(
        report.runs, [](const RunRecord& r) { return r.metrics.heading_variance_unbiased; });
    report.deviation =
        aggregate_of(report.runs, [](const RunRecord& r) { return r.metrics.deviation; });
    report.mean_eta =
        aggregate_of(report.runs, [](const RunRecord& r) { return r.metrics.mean_eta; });

    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        {
            std::ofstream os = open_out(*out_dir / "suite_runs.csv");
            os << "run_id,outcome,steps,travelled_km,heading_variance_signed,"
                  "heading_variance_unbiased,deviation,mean_eta\n";
            for (const RunRecord& r : report.runs) {
                os << r.run_id << ',' << outcome_name(r.outcome) << ',' << r.metrics.steps
                   << ',' << fmt(r.metrics.travelled_km) << ','
                   << fmt(r.metrics.heading_variance_signed) << ','
                   << fmt(r.metrics.heading_variance_unbiased) << ','
                   << fmt(r.metrics.deviation) << ',' << fmt(r.metrics.mean_eta) << '\n';
            }
        }
        {
            std::ofstream os = open_out(*out_dir / "suite_aggregate.csv");
            os << "metric,mean,variance\n";
            auto row = [&os](const char* name, const Aggregate& a) {
                os << name << ',' << fmt(a.mean) << ',' << fmt(a.variance) << '\n';
            };
            row("steps", report.steps);
            row("travelled_km", report.travelled_km);
            row("heading_variance_signed", report.heading_variance_signed);
            row("heading_variance_unbiased", report.heading_variance_unbiased);
            row("deviation", report.deviation);
            row("mean_eta", report.mean_eta);
            os << "failures," << report.failures << ",0\n";
        }
        for (int i = 0; i < repetitions; ++i) {
            if (!results[i].steps.empty()) {
                export_convergence(results[i],
                                   *out_dir / ("run_" + std::to_string(i) + "_convergence.csv"));
            }
        }
    }
    return report;
}

} // namespace geonav::experiment
