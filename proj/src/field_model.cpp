#include "geonav/field_model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "geonav/angles.hpp"

namespace geonav::field {

LocalProjection::LocalProjection(double origin_lat_deg, double origin_lon_deg,
                                 double earth_radius_m)
    : origin_lat_(origin_lat_deg),
      origin_lon_(origin_lon_deg),
      radius_(earth_radius_m),
      east_scale_(earth_radius_m * std::cos(deg2rad(origin_lat_deg))) {
    if (!(std::abs(origin_lat_deg) < 89.9)) {
        throw std::invalid_argument("projection origin too close to a geographic pole");
    }
}

GeoPosition LocalProjection::from_latlon(double lat_deg, double lon_deg) const {
    GeoPosition p;
    p.lat_deg = lat_deg;
    p.lon_deg = lon_deg;
    p.x_m = radius_ * deg2rad(lat_deg - origin_lat_);
    p.y_m = east_scale_ * deg2rad(lon_deg - origin_lon_);
    return p;
}

GeoPosition LocalProjection::from_local(double x_m, double y_m) const {
    GeoPosition p;
    p.x_m = x_m;
    p.y_m = y_m;
    p.lat_deg = origin_lat_ + rad2deg(x_m / radius_);
    p.lon_deg = origin_lon_ + rad2deg(y_m / east_scale_);
    return p;
}

MagneticVector derive_elements(double bx_nt, double by_nt, double bz_nt) {
    MagneticVector m;
    m.bx_nt = bx_nt;
    m.by_nt = by_nt;
    m.bz_nt = bz_nt;
    m.f_nt = std::sqrt(bx_nt * bx_nt + by_nt * by_nt + bz_nt * bz_nt);
    m.h_nt = std::hypot(bx_nt, by_nt);
    if (m.f_nt == 0.0) {
        m.incl_defined = false;
        m.decl_defined = false;
        m.incl_deg = 0.0;
        m.decl_deg = 0.0;
        return m;
    }
    m.incl_deg = rad2deg(std::atan2(bz_nt, m.h_nt));
    if (m.h_nt == 0.0) {
        m.decl_defined = false;
        m.decl_deg = 0.0;
    } else {
        m.decl_deg = rad2deg(std::atan2(by_nt, bx_nt));
    }
    return m;
}

MagneticVector dipole_field(const GeoPosition& pos, const DipoleParams& params) {
    if (!(params.equator_strength_nt > 0.0) || !std::isfinite(params.equator_strength_nt) ||
        !std::isfinite(params.tilt_deg) || !std::isfinite(params.pole_lon_deg) ||
        !(params.reference_radius_m > 0.0)) {
        throw std::invalid_argument("dipole parameters must be finite with positive strength");
    }
    const double lam = deg2rad(pos.lat_deg);
    const double phi = deg2rad(pos.lon_deg);
    const double clam = std::cos(lam);
    const double slam = std::sin(lam);
    const double cphi = std::cos(phi);
    const double sphi = std::sin(phi);

    const double rhat[3] = {clam * cphi, clam * sphi, slam};

    const double tilt = deg2rad(params.tilt_deg);
    const double plon = deg2rad(params.pole_lon_deg);
    const double mhat[3] = {std::sin(tilt) * std::cos(plon),
                            std::sin(tilt) * std::sin(plon), std::cos(tilt)};

    // Unit-moment dipole, oriented so inclination is positive on the
    // magnetic-north side: B = -B0 (3 (m.r) r - m) on the reference sphere.
    const double mr = mhat[0] * rhat[0] + mhat[1] * rhat[1] + mhat[2] * rhat[2];
    double b[3];
    for (int i = 0; i < 3; ++i) {
        b[i] = -params.equator_strength_nt * (3.0 * mr * rhat[i] - mhat[i]);
    }

    const double north[3] = {-slam * cphi, -slam * sphi, clam};
    const double east[3] = {-sphi, cphi, 0.0};

    double bn = b[0] * north[0] + b[1] * north[1] + b[2] * north[2];
    double be = b[0] * east[0] + b[1] * east[1] + b[2] * east[2];
    const double bd = -(b[0] * rhat[0] + b[1] * rhat[1] + b[2] * rhat[2]);
    // At the model's magnetic poles the horizontal projection is rounding
    // noise; snap it so the undefined-declination flag propagates.
    if (std::hypot(bn, be) < 1e-6) {
        bn = 0.0;
        be = 0.0;
    }
    return derive_elements(bn, be, bd);
}

double peaks_anomaly(double u, double v) {
    const double a = 3.0 * (1.0 - u) * (1.0 - u) * std::exp(-u * u - (v + 1.0) * (v + 1.0));
    const double b = -10.0 * (u / 5.0 - u * u * u - std::pow(v, 5)) * std::exp(-u * u - v * v);
    const double c = -(1.0 / 3.0) * std::exp(-(u + 1.0) * (u + 1.0) - v * v);
    return a + b + c;
}

bool AnomalyPatch::contains(double lat_deg, double lon_deg) const {
    return lat_deg >= lat_min_deg && lat_deg <= lat_max_deg &&
           lon_deg >= lon_min_deg && lon_deg <= lon_max_deg;
}

namespace {

// Cosine taper over the outer `edge` fraction of [0, 1]; zero outside.
double edge_taper(double t, double edge = 0.05) {
    if (t < 0.0 || t > 1.0) return 0.0;
    if (t < edge) return 0.5 * (1.0 - std::cos(kPi * t / edge));
    if (t > 1.0 - edge) return 0.5 * (1.0 - std::cos(kPi * (1.0 - t) / edge));
    return 1.0;
}

} // namespace

std::array<double, 3> patch_contribution(const AnomalyPatch& patch,
                                         double lat_deg, double lon_deg) {
    const double dlat = patch.lat_max_deg - patch.lat_min_deg;
    const double dlon = patch.lon_max_deg - patch.lon_min_deg;
    if (!(dlat > 0.0) || !(dlon > 0.0)) {
        throw std::invalid_argument("anomaly patch bounding box is degenerate");
    }
    const double tu = (lat_deg - patch.lat_min_deg) / dlat;
    const double tv = (lon_deg - patch.lon_min_deg) / dlon;
    if (tu < 0.0 || tu > 1.0 || tv < 0.0 || tv > 1.0) {
        return {0.0, 0.0, 0.0};
    }
    const double u = -3.0 + 6.0 * tu;
    const double v = -3.0 + 6.0 * tv;
    const double w = edge_taper(tu) * edge_taper(tv);
    const double value = peaks_anomaly(u, v) * w;
    return {patch.scale_x * value, patch.scale_y * value, patch.scale_z * value};
}

MagneticVector DipoleSource::sample(const GeoPosition& pos) const {
    return dipole_field(pos, params_);
}

const MagneticVector& FieldGrid::at(int ilat, int ilon) const {
    return samples[static_cast<std::size_t>(ilat) * nlon + ilon];
}

std::array<double, 3> FieldGrid::interpolate(double lat_deg, double lon_deg) const {
    const double u = (lat_deg - lat0_deg) / dlat_deg;
    const double v = (lon_deg - lon0_deg) / dlon_deg;
    if (u < 0.0 || u > nlat - 1) {
        std::ostringstream os;
        os << "latitude " << lat_deg << " outside grid [" << lat0_deg << ", "
           << lat_max_deg() << "]";
        throw OutOfDomainError(os.str());
    }
    if (v < 0.0 || v > nlon - 1) {
        std::ostringstream os;
        os << "longitude " << lon_deg << " outside grid [" << lon0_deg << ", "
           << lon_max_deg() << "]";
        throw OutOfDomainError(os.str());
    }
    int i = static_cast<int>(u);
    int j = static_cast<int>(v);
    if (i >= nlat - 1) i = nlat - 2;
    if (j >= nlon - 1) j = nlon - 2;
    const double fu = u - i;
    const double fv = v - j;

    const MagneticVector& s00 = at(i, j);
    const MagneticVector& s01 = at(i, j + 1);
    const MagneticVector& s10 = at(i + 1, j);
    const MagneticVector& s11 = at(i + 1, j + 1);

    auto lerp2 = [&](double a00, double a01, double a10, double a11) {
        return a00 * (1 - fu) * (1 - fv) + a01 * (1 - fu) * fv +
               a10 * fu * (1 - fv) + a11 * fu * fv;
    };
    return {lerp2(s00.bx_nt, s01.bx_nt, s10.bx_nt, s11.bx_nt),
            lerp2(s00.by_nt, s01.by_nt, s10.by_nt, s11.by_nt),
            lerp2(s00.bz_nt, s01.bz_nt, s10.bz_nt, s11.bz_nt)};
}

GridParseError::GridParseError(int line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

FieldGrid load_grid(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
        throw GridParseError(1, "empty field-grid file");
    }
    std::istringstream hs(header);
    std::string magic, version;
    FieldGrid grid;
    hs >> magic >> version >> grid.nlat >> grid.nlon >> grid.lat0_deg >>
        grid.lon0_deg >> grid.dlat_deg >> grid.dlon_deg;
    if (!hs || magic != "MAGGRID" || version != "v1") {
        throw GridParseError(1, "malformed header, expected 'MAGGRID v1 <nlat> <nlon> <lat0> <lon0> <dlat> <dlon>'");
    }
    if (grid.nlat < 2 || grid.nlon < 2) {
        throw GridParseError(1, "grid must be at least 2x2");
    }
    if (!(grid.dlat_deg > 0.0) || !(grid.dlon_deg > 0.0)) {
        throw GridParseError(1, "grid spacing must be positive");
    }
    grid.samples.reserve(static_cast<std::size_t>(grid.nlat) * grid.nlon);
    std::string line;
    int line_no = 1;
    for (int i = 0; i < grid.nlat; ++i) {
        for (int j = 0; j < grid.nlon; ++j) {
            if (!std::getline(in, line)) {
                throw GridParseError(line_no + 1, "unexpected end of file, grid is not rectangular");
            }
            ++line_no;
            // strtod-style parsing so non-finite tokens reach the validation
            // below instead of failing extraction.
            double bx, by, bz;
            int consumed = 0;
            const int got =
                std::sscanf(line.c_str(), "%lf %lf %lf %n", &bx, &by, &bz, &consumed);
            if (got < 3) {
                throw GridParseError(line_no, "expected 'bx by bz'");
            }
            if (line.find_first_not_of(" \t\r", consumed) != std::string::npos) {
                throw GridParseError(line_no, "trailing data after 'bx by bz'");
            }
            if (!std::isfinite(bx) || !std::isfinite(by) || !std::isfinite(bz)) {
                std::ostringstream os;
                os << "non-finite sample at row " << i << ", column " << j;
                throw GridParseError(line_no, os.str());
            }
            grid.samples.push_back(derive_elements(bx, by, bz));
        }
    }
    return grid;
}

FieldGrid load_grid(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open field-grid file: " + path.string());
    }
    return load_grid(in);
}

MagneticVector GridSource::sample(const GeoPosition& pos) const {
    const auto b = grid_.interpolate(pos.lat_deg, pos.lon_deg);
    return derive_elements(b[0], b[1], b[2]);
}

MagneticVector FieldWorld::field_at(const GeoPosition& pos) const {
    if (!base) {
        throw std::logic_error("field world has no base source");
    }
    MagneticVector m = base->sample(pos);
    if (patches.empty()) {
        return m;
    }
    double bx = m.bx_nt, by = m.by_nt, bz = m.bz_nt;
    for (const AnomalyPatch& patch : patches) {
        const auto c = patch_contribution(patch, pos.lat_deg, pos.lon_deg);
        bx += c[0];
        by += c[1];
        bz += c[2];
    }
    return derive_elements(bx, by, bz);
}

} // namespace geonav::field
