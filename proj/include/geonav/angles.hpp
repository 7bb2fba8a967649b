// Angle utilities shared across the navigation stack.
#pragma once

#include <cmath>

namespace geonav {

inline constexpr double kPi = 3.14159265358979323846;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Normalizes an angle in degrees to (-180, 180]. Values already in range
/// pass through unchanged.
inline double wrap_deg(double angle_deg) {
    if (angle_deg > -180.0 && angle_deg <= 180.0) return angle_deg;
    double r = std::fmod(angle_deg + 180.0, 360.0);
    if (r < 0.0) r += 360.0;
    r -= 180.0;
    return r == -180.0 ? 180.0 : r;
}

/// Smallest signed angular difference a - b, in (-180, 180].
inline double wrap_diff_deg(double a_deg, double b_deg) {
    return wrap_deg(a_deg - b_deg);
}

} // namespace geonav
