// Scenario configuration: JSON tree with world, mission, policy, schedule,
// training, calibration, and suite blocks.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geonav/field_model.hpp"
#include "geonav/nav_core.hpp"

namespace geonav::scenario {

struct WorldConfig {
    std::optional<field::DipoleParams> dipole;
    std::optional<std::string> grid_path; // relative paths resolve against the config file
    std::vector<field::AnomalyPatch> patches;
};

struct TrainingConfig {
    int epochs = 50;
    int hidden = 20;
    int window = 20;
    int batch = 20;
    double learning_rate = 0.005;
    double drop_factor = 0.9;
    int drop_period = 10;
    double train_ratio = 0.7;
    double validation_share = 0.2;
    int trajectories = 6;
    double origin_jitter_deg = 0.1;
    // Training missions fly to a tighter threshold than deployment so the
    // terminal-approach windows appear in the dataset.
    double epsilon_scale = 0.25;
};

struct SuiteConfig {
    int repetitions = 10;
    double origin_jitter_deg = 0.0;
};

struct ScenarioConfig {
    WorldConfig world;
    nav::MissionSpec mission;
    nav::PolicyKind policy = nav::PolicyKind::kAnalytic;
    std::optional<std::string> model_path;
    nav::SpeedSchedule schedule;
    nav::CalibrationOptions calibration;
    TrainingConfig training;
    SuiteConfig suite;
    std::filesystem::path base_dir; // directory of the config file
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Parses and validates a scenario file. Throws ConfigError with a
/// field-qualified message on any invalid or missing entry.
ScenarioConfig load_scenario(const std::filesystem::path& path);
ScenarioConfig parse_scenario(const std::string& json_text,
                              const std::filesystem::path& base_dir);

/// Instantiates the immutable world from the config (dipole or grid base
/// plus patches).
field::FieldWorld build_world(const WorldConfig& world,
                              const std::filesystem::path& base_dir);

/// World with the anomaly patches stripped, as used for training data.
field::FieldWorld build_world_without_patches(const WorldConfig& world,
                                              const std::filesystem::path& base_dir);

/// Deterministic per-purpose seed derivation from one top-level seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace geonav::scenario
