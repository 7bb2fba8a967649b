#include "geonav/nav_core.hpp"

#include <cmath>
#include <vector>
#include <stdexcept>

#include "geonav/angles.hpp"
#include "geonav/anomaly_calib.hpp"

namespace geonav::nav {

std::optional<GradientEstimate> estimate_gradients(std::span<const SamplePoint> history,
                                                   const GradientOptions& opts) {
    if (history.size() < 3) {
        return std::nullopt;
    }
    const SamplePoint& p0 = history[history.size() - 3];
    const SamplePoint& p1 = history[history.size() - 2];
    const SamplePoint& p2 = history[history.size() - 1];

    const double dx1 = p1.x_m - p0.x_m, dy1 = p1.y_m - p0.y_m;
    const double dx2 = p2.x_m - p1.x_m, dy2 = p2.y_m - p1.y_m;
    const double n1 = std::hypot(dx1, dy1);
    const double n2 = std::hypot(dx2, dy2);
    if (n1 < opts.eps_den_m || n2 < opts.eps_den_m) {
        return std::nullopt;
    }
    const double det = dx1 * dy2 - dy1 * dx2;
    if (std::abs(det) < opts.collinearity_tol * n1 * n2) {
        return std::nullopt;
    }
    const double dD1 = wrap_diff_deg(p1.decl_deg, p0.decl_deg);
    const double dD2 = wrap_diff_deg(p2.decl_deg, p1.decl_deg);
    const double dI1 = p1.incl_deg - p0.incl_deg;
    const double dI2 = p2.incl_deg - p1.incl_deg;

    GradientEstimate g;
    g.g_dx = (dy2 * dD1 - dy1 * dD2) / det;
    g.g_dy = (dx1 * dD2 - dx2 * dD1) / det;
    g.g_ix = (dy2 * dI1 - dy1 * dI2) / det;
    g.g_iy = (dx1 * dI2 - dx2 * dI1) / det;
    if (!std::isfinite(g.g_dx) || !std::isfinite(g.g_dy) ||
        !std::isfinite(g.g_ix) || !std::isfinite(g.g_iy)) {
        return std::nullopt;
    }
    return g;
}

std::optional<double> analytic_heading(double decl_deg, double incl_deg,
                                       double dest_decl_deg, double dest_incl_deg,
                                       const GradientEstimate& g) {
    const double dd = wrap_diff_deg(decl_deg, dest_decl_deg);
    const double di = incl_deg - dest_incl_deg;
    const double num = di * g.g_dx - dd * g.g_ix;
    const double den = dd * g.g_iy - di * g.g_dy;
    if (std::abs(num) < 1e-15 && std::abs(den) < 1e-15) {
        return std::nullopt;
    }
    return wrap_deg(rad2deg(std::atan2(num, den)));
}

ObjectiveVector objective(const field::MagneticVector& current,
                          const field::MagneticVector& destination,
                          const field::MagneticVector& start, double eps_obj) {
    const std::array<double, 5> mk = {current.bx_nt, current.by_nt, current.bz_nt,
                                      current.decl_deg, current.incl_deg};
    const std::array<double, 5> md = {destination.bx_nt, destination.by_nt,
                                      destination.bz_nt, destination.decl_deg,
                                      destination.incl_deg};
    const std::array<double, 5> m0 = {start.bx_nt, start.by_nt, start.bz_nt,
                                      start.decl_deg, start.incl_deg};
    ObjectiveVector out;
    int used = 0;
    double sum = 0.0;
    for (int i = 0; i < 5; ++i) {
        const double den = m0[i] - md[i];
        if (std::abs(den) < eps_obj) {
            out.degenerate[i] = true;
            out.elements[i] = 0.0;
            continue;
        }
        const double num = mk[i] - md[i];
        out.elements[i] = (num * num) / (den * den);
        sum += out.elements[i];
        ++used;
    }
    out.total = used > 0 ? sum / used : 0.0;
    return out;
}

Termination should_terminate(const ObjectiveVector& obj, double eps, int step,
                             int max_steps) {
    if (obj.total <= eps) {
        return Termination::kConverged;
    }
    if (step >= max_steps) {
        return Termination::kBudgetExhausted;
    }
    return Termination::kContinue;
}

double speed_update(const SpeedSchedule& sched, const field::GeoPosition& pos,
                    const field::GeoPosition& dest, int k_in_window, int window_len) {
    if (sched.decay_interval < 1) {
        throw std::invalid_argument("speed decay interval must be at least 1");
    }
    const bool inside = std::abs(pos.lat_deg - dest.lat_deg) <= sched.proximity_deg &&
                        std::abs(pos.lon_deg - dest.lon_deg) <= sched.proximity_deg;
    if (!inside) {
        return sched.v0_kmh;
    }
    const int exponent = (window_len - k_in_window) / sched.decay_interval;
    const double decayed = sched.v0_kmh * sched.decay_rate * std::exp(exponent);
    return std::min(sched.v0_kmh, decayed);
}

field::GeoPosition step_kinematics(const field::LocalProjection& proj,
                                   const field::GeoPosition& pos,
                                   double heading_deg, double speed_kmh,
                                   double dt_hours) {
    const double dist_m = speed_kmh * 1000.0 * dt_hours;
    const double theta = deg2rad(heading_deg);
    return proj.from_local(pos.x_m + std::cos(theta) * dist_m,
                           pos.y_m + std::sin(theta) * dist_m);
}

namespace {

// Rolling anomaly reference: seeded from the predictor's anomaly-free
// discrepancies, refreshed only by windows currently classified normal so
// an anomaly cannot teach itself into the reference.
class AnomalyReference {
  public:
    AnomalyReference(const CalibrationOptions& opts, int window_len,
                     std::span<const double> seed)
        : opts_(opts), capacity_(static_cast<std::size_t>(opts.reference_windows) *
                                 static_cast<std::size_t>(window_len)) {
        for (double v : seed) push(v);
    }

    // Weight for the next window given the discrepancy of the completed one.
    double update(double e_n, std::span<const double> step_discrepancies,
                  double* mu_out, double* sigma2_out) {
        const auto stats = calib::fit_reference(buffer_, opts_.sigma2_floor);
        double eta = 1.0;
        if (stats) {
            eta = calib::anomaly_weight(e_n, *stats, opts_.eta_min);
            if (mu_out) *mu_out = stats->mu;
            if (sigma2_out) *sigma2_out = stats->sigma2;
        }
        if (!stats || eta >= opts_.ingest_eta_min) {
            for (double v : step_discrepancies) push(v);
        }
        return eta;
    }

  private:
    void push(double v) {
        buffer_.push_back(v);
        if (buffer_.size() > capacity_) {
            buffer_.erase(buffer_.begin(),
                          buffer_.begin() + (buffer_.size() - capacity_));
        }
    }

    CalibrationOptions opts_;
    std::size_t capacity_;
    std::vector<double> buffer_;
};

} // namespace

MissionResult run_mission(const field::FieldWorld& world, const MissionSpec& spec,
                          const MissionOptions& options) {
    if (spec.destinations.empty()) {
        throw std::invalid_argument("mission has no destinations");
    }
    if (spec.max_steps_per_leg < 1) {
        throw std::invalid_argument("step budget must be positive");
    }
    MissionResult result;
    result.spec = spec;
    result.policy = options.policy;

    const bool model_driven = options.policy != PolicyKind::kAnalytic;
    if (model_driven && options.predictor == nullptr) {
        result.outcome = MissionOutcome::kAborted;
        result.diagnostic = "policy requires a heading predictor but none was supplied";
        return result;
    }
    const int window_len = model_driven ? options.predictor->window_len() : 0;
    if (model_driven && window_len < 1) {
        result.outcome = MissionOutcome::kAborted;
        result.diagnostic = "predictor reports a non-positive window length";
        return result;
    }

    const field::LocalProjection proj(spec.origin_lat_deg, spec.origin_lon_deg);
    field::GeoPosition pos = proj.from_latlon(spec.origin_lat_deg, spec.origin_lon_deg);

    std::optional<AnomalyReference> reference;
    if (options.policy == PolicyKind::kCalibrated) {
        reference.emplace(options.calibration, window_len,
                          options.predictor->reference_discrepancies());
    }

    std::vector<SamplePoint> history;          // full trajectory records
    std::vector<double> window_cmd;            // headings flown in the open window
    std::vector<double> window_analytic;       // analytic headings of the open window
    std::vector<double> predicted_window;      // forecast for the current window
    int predicted_base_step = -1;              // global step where the forecast begins

    std::optional<GradientEstimate> last_gradient;
    double prev_heading = 0.0;
    double eta = 1.0;
    double last_e_n = std::numeric_limits<double>::quiet_NaN();
    double last_mu = std::numeric_limits<double>::quiet_NaN();
    double last_sigma2 = std::numeric_limits<double>::quiet_NaN();

    int global_step = 0;
    double travelled_m = 0.0;
    double eta_sum = 0.0;
    int eta_count = 0;

    result.outcome = MissionOutcome::kSuccess;
    for (std::size_t leg = 0; leg < spec.destinations.size(); ++leg) {
        const field::GeoPosition dest =
            proj.from_latlon(spec.destinations[leg][0], spec.destinations[leg][1]);
        const field::MagneticVector dest_sample = world.field_at(dest);
        const field::MagneticVector leg_start_sample = world.field_at(pos);
        result.leg_start_steps.push_back(global_step);

        int leg_step = 0;
        while (true) {
            const field::MagneticVector sample = world.field_at(pos);
            const ObjectiveVector obj = objective(sample, dest_sample, leg_start_sample);

            MissionStep row;
            row.step = global_step;
            row.leg = static_cast<int>(leg);
            row.position = pos;
            row.sample = sample;
            row.objective = obj;
            row.eta = eta;
            row.e_n = last_e_n;
            row.mu = last_mu;
            row.sigma2 = last_sigma2;

            const Termination term =
                should_terminate(obj, spec.epsilon, leg_step, spec.max_steps_per_leg);
            if (term == Termination::kConverged) {
                // Intermediate legs hand the state over to the next leg, which
                // re-emits this position under its own normalization.
                if (leg + 1 == spec.destinations.size()) {
                    result.steps.push_back(row);
                }
                break;
            }
            if (term == Termination::kBudgetExhausted) {
                result.steps.push_back(row);
                result.outcome = MissionOutcome::kBudgetExhausted;
                result.diagnostic = "step budget exhausted on leg " + std::to_string(leg);
                break;
            }

            history.push_back(SamplePoint{pos.x_m, pos.y_m, sample.decl_deg, sample.incl_deg});

            // Analytic heading with the bootstrap north/east start.
            double theta_analytic;
            if (global_step == 0) {
                theta_analytic = 0.0;
            } else if (global_step == 1) {
                theta_analytic = 90.0;
            } else {
                if (auto g = estimate_gradients(history)) {
                    last_gradient = g;
                }
                if (last_gradient) {
                    theta_analytic =
                        analytic_heading(sample.decl_deg, sample.incl_deg,
                                         dest_sample.decl_deg, dest_sample.incl_deg,
                                         *last_gradient)
                            .value_or(prev_heading);
                } else {
                    theta_analytic = prev_heading;
                }
            }

            // Model forecast for this step, when one is active.
            double theta_predicted = std::numeric_limits<double>::quiet_NaN();
            if (model_driven && predicted_base_step >= 0) {
                const int offset = global_step - predicted_base_step;
                if (offset >= 0 && offset < static_cast<int>(predicted_window.size())) {
                    theta_predicted = predicted_window[offset];
                }
            }

            double theta_cmd = theta_analytic;
            if (!std::isnan(theta_predicted)) {
                switch (options.policy) {
                    case PolicyKind::kAnalytic:
                        break;
                    case PolicyKind::kTaLstm:
                        theta_cmd = theta_predicted;
                        break;
                    case PolicyKind::kCalibrated:
                        theta_cmd = calib::blend_heading(eta, theta_analytic, theta_predicted);
                        break;
                }
            }

            const int cycle = model_driven ? window_len : options.schedule.window_len;
            const int k_in_window = model_driven
                                        ? static_cast<int>(window_cmd.size()) + 1
                                        : (global_step % cycle) + 1;
            const double speed = speed_update(options.schedule, pos, dest, k_in_window, cycle);

            row.theta_cmd = theta_cmd;
            row.theta_analytic = theta_analytic;
            row.theta_predicted = theta_predicted;
            row.speed_kmh = speed;
            result.steps.push_back(row);

            const field::GeoPosition next =
                step_kinematics(proj, pos, theta_cmd, speed, options.schedule.dt_hours);
            travelled_m += std::hypot(next.x_m - pos.x_m, next.y_m - pos.y_m);
            pos = next;
            prev_heading = theta_cmd;
            eta_sum += eta;
            ++eta_count;

            // Window bookkeeping and next-window forecast at the boundary.
            if (model_driven) {
                window_cmd.push_back(theta_cmd);
                window_analytic.push_back(theta_analytic);
                if (static_cast<int>(window_cmd.size()) == window_len) {
                    const int window_first_step = global_step - window_len + 1;
                    const bool had_prediction =
                        predicted_base_step >= 0 && predicted_base_step == window_first_step;
                    if (options.policy == PolicyKind::kCalibrated && had_prediction) {
                        std::vector<double> discrepancies(window_len);
                        for (int i = 0; i < window_len; ++i) {
                            discrepancies[i] = std::abs(
                                wrap_diff_deg(window_analytic[i], predicted_window[i]));
                        }
                        last_e_n = calib::heading_discrepancy(window_analytic, predicted_window);
                        eta = reference->update(last_e_n, discrepancies, &last_mu, &last_sigma2);
                    }
                    std::vector<SamplePoint> inputs(history.end() - window_len, history.end());
                    try {
                        predicted_window = options.predictor->predict_next(inputs, window_cmd);
                    } catch (const std::exception& ex) {
                        result.outcome = MissionOutcome::kAborted;
                        result.diagnostic = std::string("predictor failed: ") + ex.what();
                        result.metrics.travelled_km = travelled_m / 1000.0;
                        return result;
                    }
                    if (static_cast<int>(predicted_window.size()) != window_len) {
                        result.outcome = MissionOutcome::kAborted;
                        result.diagnostic = "predictor returned a window of the wrong length";
                        return result;
                    }
                    predicted_base_step = global_step + 1;
                    window_cmd.clear();
                    window_analytic.clear();
                }
            }

            ++global_step;
            ++leg_step;
        }
        if (result.outcome != MissionOutcome::kSuccess) {
            break;
        }
    }

    result.metrics.travelled_km = travelled_m / 1000.0;
    result.metrics.steps = global_step;
    result.metrics.mean_eta = eta_count > 0 ? eta_sum / eta_count : 1.0;
    result.metrics.arrival = result.steps.empty() ? pos : result.steps.back().position;
    return result;
}

} // namespace geonav::nav
