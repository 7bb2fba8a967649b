#include "geonav/scenario.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace geonav::scenario {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
}

double number_or(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    return j[key].get<double>();
}

int int_or(const json& j, const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    return j[key].get<int>();
}

field::AnomalyPatch parse_patch(const json& j, const std::string& where) {
    field::AnomalyPatch p;
    if (!j.contains("lat_range") || !j["lat_range"].is_array() ||
        j["lat_range"].size() != 2 || !j.contains("lon_range") ||
        !j["lon_range"].is_array() || j["lon_range"].size() != 2) {
        fail(where, "patch needs lat_range and lon_range as [min, max]");
    }
    p.lat_min_deg = j["lat_range"][0].get<double>();
    p.lat_max_deg = j["lat_range"][1].get<double>();
    p.lon_min_deg = j["lon_range"][0].get<double>();
    p.lon_max_deg = j["lon_range"][1].get<double>();
    if (!(p.lat_max_deg > p.lat_min_deg) || !(p.lon_max_deg > p.lon_min_deg)) {
        fail(where, "patch bounding box is degenerate");
    }
    if (j.contains("scales")) {
        if (!j["scales"].is_array() || j["scales"].size() != 3) {
            fail(where + ".scales", "expected [scale_x, scale_y, scale_z]");
        }
        p.scale_x = j["scales"][0].get<double>();
        p.scale_y = j["scales"][1].get<double>();
        p.scale_z = j["scales"][2].get<double>();
    }
    if (!std::isfinite(p.scale_x) || !std::isfinite(p.scale_y) || !std::isfinite(p.scale_z)) {
        fail(where + ".scales", "scales must be finite");
    }
    return p;
}

void check_latlon(double lat, double lon, const std::string& where) {
    if (lat < -90.0 || lat > 90.0) fail(where, "latitude out of [-90, 90]");
    if (lon < -180.0 || lon > 180.0) fail(where, "longitude out of [-180, 180]");
}

} // namespace

ScenarioConfig parse_scenario(const std::string& json_text,
                              const std::filesystem::path& base_dir) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& ex) {
        throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
    }
    ScenarioConfig cfg;
    cfg.base_dir = base_dir;

    if (!root.contains("world") || !root["world"].is_object()) {
        fail("world", "missing block");
    }
    const json& world = root["world"];
    if (world.contains("dipole")) {
        const json& d = world["dipole"];
        field::DipoleParams params;
        params.equator_strength_nt = number_or(d, "strength_nt", params.equator_strength_nt);
        params.tilt_deg = number_or(d, "tilt_deg", params.tilt_deg);
        params.pole_lon_deg = number_or(d, "pole_lon_deg", params.pole_lon_deg);
        params.reference_radius_m = number_or(d, "reference_radius_m", params.reference_radius_m);
        if (!(params.equator_strength_nt > 0.0)) {
            fail("world.dipole.strength_nt", "must be positive");
        }
        cfg.world.dipole = params;
    }
    if (world.contains("grid")) {
        cfg.world.grid_path = world["grid"].get<std::string>();
    }
    if (!cfg.world.dipole && !cfg.world.grid_path) {
        fail("world", "needs a dipole block or a grid path");
    }
    if (cfg.world.dipole && cfg.world.grid_path) {
        fail("world", "dipole and grid bases are mutually exclusive");
    }
    if (world.contains("anomalies")) {
        if (!world["anomalies"].is_array()) fail("world.anomalies", "expected an array");
        int i = 0;
        for (const json& patch : world["anomalies"]) {
            cfg.world.patches.push_back(
                parse_patch(patch, "world.anomalies[" + std::to_string(i) + "]"));
            ++i;
        }
    }

    if (!root.contains("mission") || !root["mission"].is_object()) {
        fail("mission", "missing block");
    }
    const json& mission = root["mission"];
    if (!mission.contains("origin") || !mission["origin"].is_array() ||
        mission["origin"].size() != 2) {
        fail("mission.origin", "expected [lat, lon]");
    }
    cfg.mission.origin_lat_deg = mission["origin"][0].get<double>();
    cfg.mission.origin_lon_deg = mission["origin"][1].get<double>();
    check_latlon(cfg.mission.origin_lat_deg, cfg.mission.origin_lon_deg, "mission.origin");
    if (!mission.contains("destinations") || !mission["destinations"].is_array() ||
        mission["destinations"].empty()) {
        fail("mission.destinations", "expected a non-empty array of [lat, lon]");
    }
    for (const json& d : mission["destinations"]) {
        if (!d.is_array() || d.size() != 2) {
            fail("mission.destinations", "expected entries of [lat, lon]");
        }
        const double lat = d[0].get<double>();
        const double lon = d[1].get<double>();
        check_latlon(lat, lon, "mission.destinations");
        cfg.mission.destinations.push_back({lat, lon});
    }
    cfg.mission.epsilon = number_or(mission, "epsilon", 0.02);
    cfg.mission.max_steps_per_leg = int_or(mission, "max_steps", 300);
    if (!(cfg.mission.epsilon > 0.0)) fail("mission.epsilon", "must be positive");
    if (cfg.mission.max_steps_per_leg < 1) fail("mission.max_steps", "must be positive");

    if (!root.contains("policy") || !root["policy"].is_object()) {
        fail("policy", "missing block");
    }
    const json& policy = root["policy"];
    const std::string kind = policy.value("kind", "");
    if (kind == "analytic") {
        cfg.policy = nav::PolicyKind::kAnalytic;
    } else if (kind == "talstm") {
        cfg.policy = nav::PolicyKind::kTaLstm;
    } else if (kind == "calibrated") {
        cfg.policy = nav::PolicyKind::kCalibrated;
    } else {
        fail("policy.kind", "expected analytic | talstm | calibrated");
    }
    if (policy.contains("model")) {
        cfg.model_path = policy["model"].get<std::string>();
    }

    if (root.contains("schedule")) {
        const json& s = root["schedule"];
        cfg.schedule.v0_kmh = number_or(s, "v0_kmh", cfg.schedule.v0_kmh);
        cfg.schedule.decay_rate = number_or(s, "decay_rate", cfg.schedule.decay_rate);
        cfg.schedule.decay_interval = int_or(s, "decay_interval", cfg.schedule.decay_interval);
        cfg.schedule.proximity_deg = number_or(s, "proximity_deg", cfg.schedule.proximity_deg);
        cfg.schedule.dt_hours = number_or(s, "dt_hours", cfg.schedule.dt_hours);
        if (!(cfg.schedule.v0_kmh > 0.0)) fail("schedule.v0_kmh", "must be positive");
        if (!(cfg.schedule.decay_rate > 0.0 && cfg.schedule.decay_rate <= 1.0)) {
            fail("schedule.decay_rate", "must lie in (0, 1]");
        }
        if (cfg.schedule.decay_interval < 1) fail("schedule.decay_interval", "must be >= 1");
        if (!(cfg.schedule.dt_hours > 0.0)) fail("schedule.dt_hours", "must be positive");
    }

    if (root.contains("calibration")) {
        const json& c = root["calibration"];
        cfg.calibration.reference_windows = int_or(c, "reference_windows", 3);
        cfg.calibration.sigma2_floor = number_or(c, "sigma2_floor", 1.0);
        cfg.calibration.eta_min = number_or(c, "eta_min", 1e-3);
        cfg.calibration.ingest_eta_min = number_or(c, "ingest_eta_min", 0.5);
        if (cfg.calibration.reference_windows < 1) {
            fail("calibration.reference_windows", "must be >= 1");
        }
        if (!(cfg.calibration.sigma2_floor > 0.0)) {
            fail("calibration.sigma2_floor", "must be positive");
        }
        if (!(cfg.calibration.eta_min > 0.0 && cfg.calibration.eta_min <= 1.0)) {
            fail("calibration.eta_min", "must lie in (0, 1]");
        }
    }

    if (root.contains("training")) {
        const json& t = root["training"];
        cfg.training.epochs = int_or(t, "epochs", 50);
        cfg.training.hidden = int_or(t, "hidden", 20);
        cfg.training.window = int_or(t, "window", 20);
        cfg.training.batch = int_or(t, "batch", 20);
        cfg.training.learning_rate = number_or(t, "learning_rate", 0.005);
        cfg.training.drop_factor = number_or(t, "drop_factor", 0.9);
        cfg.training.drop_period = int_or(t, "drop_period", 10);
        cfg.training.train_ratio = number_or(t, "train_ratio", 0.7);
        cfg.training.validation_share = number_or(t, "validation_share", 0.2);
        cfg.training.trajectories = int_or(t, "trajectories", 6);
        cfg.training.origin_jitter_deg = number_or(t, "origin_jitter_deg", 0.1);
        cfg.training.epsilon_scale = number_or(t, "epsilon_scale", 0.25);
        if (cfg.training.window < 1) fail("training.window", "must be positive");
        if (!(cfg.training.epsilon_scale > 0.0 && cfg.training.epsilon_scale <= 1.0)) {
            fail("training.epsilon_scale", "must lie in (0, 1]");
        }
        if (cfg.training.hidden < 1) fail("training.hidden", "must be positive");
        if (cfg.training.trajectories < 1) fail("training.trajectories", "must be positive");
    }
    cfg.schedule.window_len = cfg.training.window;

    if (root.contains("suite")) {
        const json& s = root["suite"];
        cfg.suite.repetitions = int_or(s, "repetitions", 10);
        cfg.suite.origin_jitter_deg = number_or(s, "origin_jitter_deg", 0.0);
        if (cfg.suite.repetitions < 1) fail("suite.repetitions", "must be >= 1");
    }

    return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_scenario(buffer.str(), path.parent_path());
}

field::FieldWorld build_world(const WorldConfig& world,
                              const std::filesystem::path& base_dir) {
    field::FieldWorld w;
    if (world.dipole) {
        w.base = std::make_shared<field::DipoleSource>(*world.dipole);
    } else if (world.grid_path) {
        std::filesystem::path p = *world.grid_path;
        if (p.is_relative()) p = base_dir / p;
        w.base = std::make_shared<field::GridSource>(field::load_grid(p));
    } else {
        throw ConfigError("world has neither a dipole nor a grid base");
    }
    w.patches = world.patches;
    return w;
}

field::FieldWorld build_world_without_patches(const WorldConfig& world,
                                              const std::filesystem::path& base_dir) {
    WorldConfig stripped = world;
    stripped.patches.clear();
    return build_world(stripped, base_dir);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace geonav::scenario
