#include "geonav/anomaly_calib.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geonav/angles.hpp"

namespace geonav::calib {

double heading_discrepancy(std::span<const double> analytic_deg,
                           std::span<const double> predicted_deg) {
    if (analytic_deg.size() != predicted_deg.size()) {
        throw std::invalid_argument("heading sequences differ in length");
    }
    if (analytic_deg.empty()) {
        throw std::invalid_argument("heading sequences are empty");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < analytic_deg.size(); ++i) {
        sum += std::abs(wrap_diff_deg(analytic_deg[i], predicted_deg[i]));
    }
    return sum / static_cast<double>(analytic_deg.size());
}

std::optional<AnomalyStats> fit_reference(std::span<const double> window,
                                          double sigma2_floor) {
    if (window.size() < 2) {
        return std::nullopt;
    }
    double mean = 0.0;
    for (double v : window) mean += v;
    mean /= static_cast<double>(window.size());
    double var = 0.0;
    for (double v : window) var += (v - mean) * (v - mean);
    var /= static_cast<double>(window.size()); // biased MLE divisor
    AnomalyStats stats;
    stats.mu = mean;
    stats.sigma2 = std::max(var, sigma2_floor);
    stats.count = static_cast<int>(window.size());
    return stats;
}

double anomaly_weight(double e_n, const AnomalyStats& stats, double eta_min) {
    const double z = e_n - stats.mu;
    const double eta = std::exp(-(z * z) / stats.sigma2);
    return std::clamp(eta, eta_min, 1.0);
}

double blend_heading(double eta, double analytic_deg, double predicted_deg) {
    if (eta >= 1.0) {
        return wrap_deg(analytic_deg);
    }
    const double a = deg2rad(analytic_deg);
    const double p = deg2rad(predicted_deg);
    const double s = eta * std::sin(a) + (1.0 - eta) * std::sin(p);
    const double c = eta * std::cos(a) + (1.0 - eta) * std::cos(p);
    if (s == 0.0 && c == 0.0) {
        // Antipodal pair at exactly half weight; fall back to the analytic side.
        return wrap_deg(analytic_deg);
    }
    return wrap_deg(rad2deg(std::atan2(s, c)));
}

} // namespace geonav::calib
