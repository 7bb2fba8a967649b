// Scenario studies: mission metrics, statistical suites over repeated runs,
// and convergence/trajectory export.
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geonav/nav_core.hpp"
#include "geonav/scenario.hpp"
#include "geonav/talstm.hpp"

namespace geonav::experiment {

/// Signed mean wrapped difference between flown and predicted headings,
/// sum (theta - theta_pred) / K_t. Throws std::invalid_argument when the
/// series are empty or of different lengths. Note this is a signed mean:
/// opposite offsets cancel. See unbiased_heading_variance for the spread.
double heading_variance(std::span<const double> flown_deg,
                        std::span<const double> predicted_deg);

/// Unbiased sample variance of the wrapped heading differences; zero for
/// fewer than two pairs.
double unbiased_heading_variance(std::span<const double> flown_deg,
                                 std::span<const double> predicted_deg);

/// ||dest - arrival|| / ||dest - origin|| in projected meters. Throws
/// std::invalid_argument when origin and destination coincide.
double navigation_deviation(const field::GeoPosition& origin,
                            const field::GeoPosition& destination,
                            const field::GeoPosition& arrival);

/// Fills the heading-variance and deviation metrics of a finished mission.
/// Deviation is measured on the final leg (its start point vs its
/// destination), which handles round trips whose overall origin and final
/// destination coincide.
void compute_metrics(nav::MissionResult& result);

/// Trajectory CSV, one row per recorded state:
///   step, lat, lon, x_m, y_m, theta_cmd, theta_analytic, theta_predicted,
///   eta, e_n, mu, sigma2, speed, F_total, F_bx, F_by, F_bz, F_d, F_i
/// NaN fields are written empty.
void export_trajectory_csv(const nav::MissionResult& result,
                           const std::filesystem::path& path);

/// Convergence CSV (step, F_bx, F_by, F_bz, F_d, F_i, F_total) plus an
/// optional self-contained SVG chart of the five element curves.
void export_convergence(const nav::MissionResult& result,
                        const std::filesystem::path& csv_path,
                        const std::optional<std::filesystem::path>& svg_path = {});

/// Anomaly-free trajectories flown by the analytic policy over the scenario
/// mission, sliced into training windows. Origins are jittered per
/// trajectory by the training block's jitter radius.
talstm::Dataset generate_training_data(const scenario::ScenarioConfig& config,
                                       std::uint64_t seed);

/// Trains a model per the scenario's training block on freshly generated
/// anomaly-free trajectories.
talstm::TaLstmModel train_from_scenario(const scenario::ScenarioConfig& config,
                                        std::uint64_t seed);

struct RunRecord {
    int run_id = 0;
    nav::MissionOutcome outcome = nav::MissionOutcome::kAborted;
    nav::MetricSet metrics{};
};

struct Aggregate {
    double mean = 0.0;
    double variance = 0.0; // unbiased over runs
};

struct SuiteReport {
    std::vector<RunRecord> runs;
    Aggregate steps, travelled_km, heading_variance_signed, heading_variance_unbiased,
        deviation, mean_eta;
    int failures = 0;
};

/// Runs the scenario `repetitions` times with seeded variation: per-run
/// model seeds (the model is retrained per run unless the scenario names a
/// model file) and, when configured, jittered origins. Runs execute in
/// parallel; aggregation is ordered by run index. Writes `suite_runs.csv`,
/// `suite_aggregate.csv`, and `run_<id>_convergence.csv` under out_dir when
/// given.
SuiteReport run_scenario_suite(const scenario::ScenarioConfig& config, int repetitions,
                               std::uint64_t seed,
                               const std::optional<std::filesystem::path>& out_dir = {});

/// Executes one mission per the scenario config. When the policy needs a
/// model, `model` must be supplied. Metrics are filled.
nav::MissionResult run_scenario_mission(const scenario::ScenarioConfig& config,
                                        const talstm::TaLstmModel* model,
                                        std::uint64_t seed);

} // namespace geonav::experiment
