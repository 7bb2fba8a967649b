// Closed-loop navigation engine: carrier kinematics, on-trajectory gradient
// estimation, analytic heading, normalized convergence objective, speed
// decay, and the mission loop.
#pragma once

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geonav/field_model.hpp"

namespace geonav::nav {

/// One trajectory record used for gradient estimation and window assembly.
struct SamplePoint {
    double x_m = 0.0;       // projected north coordinate
    double y_m = 0.0;       // projected east coordinate
    double decl_deg = 0.0;
    double incl_deg = 0.0;
};

/// Declination/inclination gradients in degrees per meter along the
/// north (x) and east (y) axes.
struct GradientEstimate {
    double g_dx = 0.0;
    double g_dy = 0.0;
    double g_ix = 0.0;
    double g_iy = 0.0;
};

struct GradientOptions {
    double eps_den_m = 1e-6;        // minimum segment displacement
    double collinearity_tol = 1e-3; // |det| floor relative to segment norms
};

/// Two-segment finite-difference estimate from the last three records.
/// Solves the pair of displacement equations
///   dD = g_dx dx + g_dy dy,  dI = g_ix dx + g_iy dy
/// over consecutive segments; exact for fields linear in position. With the
/// bootstrap north/east segments this reduces to plain per-axis backward
/// differences. Returns nullopt when a segment is shorter than eps_den_m or
/// the segments are too close to collinear to separate the axes; callers
/// keep the previous valid estimate in that case.
std::optional<GradientEstimate> estimate_gradients(std::span<const SamplePoint> history,
                                                   const GradientOptions& opts = {});

/// Heading toward the destination signature, from current and destination
/// (D, I) and the local gradients:
///   theta = atan2((I-I_d) g_dx - (D-D_d) g_ix, (D-D_d) g_iy - (I-I_d) g_dy)
/// Quadrant-aware and normalized to (-180, 180]. Returns nullopt at the
/// destination degeneracy (both arguments below 1e-15); callers hold the
/// previous heading.
std::optional<double> analytic_heading(double decl_deg, double incl_deg,
                                       double dest_decl_deg, double dest_incl_deg,
                                       const GradientEstimate& g);

/// Normalized per-element convergence measure over (BX, BY, BZ, D, I).
struct ObjectiveVector {
    std::array<double, 5> elements{};   // F_i, zero when degenerate
    std::array<bool, 5> degenerate{};   // |M0_i - Md_i| below the floor
    double total = 0.0;                 // mean over non-degenerate elements
};

inline constexpr double kObjectiveDenominatorFloor = 1e-12;

ObjectiveVector objective(const field::MagneticVector& current,
                          const field::MagneticVector& destination,
                          const field::MagneticVector& start,
                          double eps_obj = kObjectiveDenominatorFloor);

enum class Termination { kContinue, kConverged, kBudgetExhausted };

Termination should_terminate(const ObjectiveVector& obj, double eps, int step,
                             int max_steps);

/// Speed decay near the destination. Outside a proximity box the carrier
/// holds v0; inside, v0 * d * e^int((T-k)/sd) capped at v0, with k the
/// within-window index in [1, T].
struct SpeedSchedule {
    double v0_kmh = 50.0;
    double decay_rate = 0.9;     // d in (0, 1]
    int decay_interval = 5;      // sd >= 1
    double proximity_deg = 0.5;  // half-size of the arrival box
    double dt_hours = 0.09;      // simulated duration of one iteration
    int window_len = 20;         // within-window cycle of the decay exponent
};

double speed_update(const SpeedSchedule& sched, const field::GeoPosition& pos,
                    const field::GeoPosition& dest, int k_in_window, int window_len);

/// Dead-reckoning position update in the local projection; the x axis is
/// geographic north, y geographic east.
field::GeoPosition step_kinematics(const field::LocalProjection& proj,
                                   const field::GeoPosition& pos,
                                   double heading_deg, double speed_kmh,
                                   double dt_hours);

/// Per-window heading prediction source used by the model-driven policies.
/// Implementations receive the inputs of the window just completed plus the
/// headings actually flown and return the heading forecast for the next
/// window, in degrees.
class WindowPredictor {
  public:
    virtual ~WindowPredictor() = default;

    virtual std::vector<double> predict_next(const std::vector<SamplePoint>& window_inputs,
                                             const std::vector<double>& flown_headings_deg) = 0;

    /// Window length the predictor was built for.
    virtual int window_len() const = 0;

    /// Per-step absolute heading discrepancies observed under anomaly-free
    /// conditions, used to seed the anomaly reference. May be empty.
    virtual std::span<const double> reference_discrepancies() const = 0;
};

enum class PolicyKind { kAnalytic, kTaLstm, kCalibrated };

struct CalibrationOptions {
    int reference_windows = 3;   // rolling reference capacity, in windows
    double sigma2_floor = 1.0;   // deg^2
    double eta_min = 1e-3;
    double ingest_eta_min = 0.5; // only windows at least this normal refresh the reference
};

struct MissionSpec {
    double origin_lat_deg = 0.0;
    double origin_lon_deg = 0.0;
    std::vector<std::array<double, 2>> destinations; // lat, lon per leg
    double epsilon = 0.02;
    int max_steps_per_leg = 300;
};

struct MissionOptions {
    PolicyKind policy = PolicyKind::kAnalytic;
    SpeedSchedule schedule{};
    CalibrationOptions calibration{};
    WindowPredictor* predictor = nullptr; // required for model-driven policies
};

enum class MissionOutcome { kSuccess, kBudgetExhausted, kAborted };

/// One trajectory row. The command fields of the final row are NaN; the
/// mission ends on a state, not an action.
struct MissionStep {
    int step = 0;
    int leg = 0;
    field::GeoPosition position{};
    field::MagneticVector sample{};
    ObjectiveVector objective{};
    double theta_cmd = std::numeric_limits<double>::quiet_NaN();
    double theta_analytic = std::numeric_limits<double>::quiet_NaN();
    double theta_predicted = std::numeric_limits<double>::quiet_NaN();
    double eta = 1.0;
    double e_n = std::numeric_limits<double>::quiet_NaN();
    double mu = std::numeric_limits<double>::quiet_NaN();
    double sigma2 = std::numeric_limits<double>::quiet_NaN();
    double speed_kmh = std::numeric_limits<double>::quiet_NaN();
};

struct MetricSet {
    double travelled_km = 0.0;
    int steps = 0;
    double heading_variance_signed = 0.0;
    double heading_variance_unbiased = 0.0;
    double deviation = 0.0;
    double mean_eta = 1.0;
    field::GeoPosition arrival{};
};

struct MissionResult {
    MissionSpec spec{};
    PolicyKind policy = PolicyKind::kAnalytic;
    MissionOutcome outcome = MissionOutcome::kAborted;
    std::string diagnostic;             // set when aborted
    std::vector<MissionStep> steps;     // trajectory states, steps taken + 1
    std::vector<int> leg_start_steps;   // step index where each leg begins
    MetricSet metrics{};
};

/// Runs the closed navigation loop over one or more destinations with
/// bootstrap headings 0 and 90 degrees, chaining legs with full state
/// carry-over and resetting the objective normalization per leg. Throws
/// std::invalid_argument on an unusable specification; policy failures
/// surface as an aborted result with a diagnostic.
MissionResult run_mission(const field::FieldWorld& world, const MissionSpec& spec,
                          const MissionOptions& options);

} // namespace geonav::nav
