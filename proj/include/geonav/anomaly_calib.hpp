// Anomaly detection and heading calibration: discrepancy between analytic
// and predicted headings, Gaussian reference statistics, anomaly weight,
// and the blended command heading.
#pragma once

#include <optional>
#include <span>

namespace geonav::calib {

/// Mean absolute wrapped difference between two equal-length heading
/// sequences, in degrees. Throws std::invalid_argument on length mismatch
/// or empty input.
double heading_discrepancy(std::span<const double> analytic_deg,
                           std::span<const double> predicted_deg);

/// Gaussian reference for the no-anomaly discrepancy distribution.
struct AnomalyStats {
    double mu = 0.0;     // degrees
    double sigma2 = 1.0; // degrees^2, floored
    int count = 0;       // samples behind the estimate
};

/// Maximum-likelihood fit (sample mean, biased variance) over a reference
/// window, with the variance floored to keep the weight well defined.
/// Returns nullopt for windows shorter than 2; callers fall back to a unit
/// anomaly weight, i.e. the pure analytic heading.
std::optional<AnomalyStats> fit_reference(std::span<const double> window,
                                          double sigma2_floor = 1.0);

/// Anomaly weight eta = exp(-(e_n - mu)^2 / sigma^2), clamped to
/// [eta_min, 1]. Decreases strictly in |e_n - mu| before clamping.
double anomaly_weight(double e_n, const AnomalyStats& stats, double eta_min = 1e-3);

/// Command heading eta * analytic + (1 - eta) * predicted, blended on the
/// unit circle so the result stays on the shorter arc across the +-180 seam.
double blend_heading(double eta, double analytic_deg, double predicted_deg);

} // namespace geonav::calib
