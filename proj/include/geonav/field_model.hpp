// Geomagnetic field model: element relations, tilted-dipole base field,
// multimodal anomaly patches, and sampled-grid ingestion.
#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace geonav::field {

inline constexpr double kEarthRadiusM = 6371000.0;

/// A location carried in both geodetic and local projected coordinates.
/// x_m runs along geographic north, y_m along geographic east.
struct GeoPosition {
    double lat_deg = 0.0;
    double lon_deg = 0.0;
    double x_m = 0.0;
    double y_m = 0.0;
};

/// Equirectangular projection about a fixed origin. Exactly invertible,
/// sub-meter round-trip at the mission scales this library targets.
class LocalProjection {
  public:
    LocalProjection(double origin_lat_deg, double origin_lon_deg,
                    double earth_radius_m = kEarthRadiusM);

    GeoPosition from_latlon(double lat_deg, double lon_deg) const;
    GeoPosition from_local(double x_m, double y_m) const;

    double origin_lat_deg() const { return origin_lat_; }
    double origin_lon_deg() const { return origin_lon_; }

  private:
    double origin_lat_;
    double origin_lon_;
    double radius_;
    double east_scale_; // radius * cos(origin latitude)
};

/// The seven geomagnetic elements at one location. Components are in
/// nanotesla, angles in degrees. Declination is undefined where the
/// horizontal intensity vanishes; both angles are undefined for a null
/// field. Consumers must check the flags before trusting the angles.
struct MagneticVector {
    double bx_nt = 0.0;  // north component
    double by_nt = 0.0;  // east component
    double bz_nt = 0.0;  // down component
    double f_nt = 0.0;   // total intensity
    double h_nt = 0.0;   // horizontal intensity
    double incl_deg = 0.0;
    double decl_deg = 0.0;
    bool incl_defined = true;
    bool decl_defined = true;
};

/// Derives (F, H, I, D) from the three field components.
MagneticVector derive_elements(double bx_nt, double by_nt, double bz_nt);

/// Centered dipole tilted away from the rotation axis. `equator_strength_nt`
/// is the surface field intensity on the dipole equator; the pole intensity
/// is exactly twice that at equal radius.
struct DipoleParams {
    double equator_strength_nt = 31000.0;
    double tilt_deg = 20.0;
    double pole_lon_deg = -54.5;
    double reference_radius_m = kEarthRadiusM;
};

/// Field of the tilted dipole at a position, in local north/east/down
/// components with derived elements. Throws std::invalid_argument on
/// non-finite or non-positive strength parameters.
MagneticVector dipole_field(const GeoPosition& pos, const DipoleParams& params);

/// The dimensionless multimodal surface used to synthesize anomalies:
///   3(1-u)^2 e^(-u^2-(v+1)^2) - 10(u/5 - u^3 - v^5) e^(-u^2-v^2)
///   - (1/3) e^(-(u+1)^2-v^2)
double peaks_anomaly(double u, double v);

/// Rectangular anomaly region. The bounding box maps affinely onto
/// [-3,3]^2 (latitude -> u, longitude -> v) and the per-component scales
/// multiply the surface value. Contributions fade to zero over the outer
/// 5% of the box through a cosine taper so field gradients stay continuous
/// across the boundary.
struct AnomalyPatch {
    double lat_min_deg = 0.0;
    double lat_max_deg = 0.0;
    double lon_min_deg = 0.0;
    double lon_max_deg = 0.0;
    double scale_x = 600.0;
    double scale_y = 400.0;
    double scale_z = 200.0;

    bool contains(double lat_deg, double lon_deg) const;
};

/// Additive (bx, by, bz) contribution of one patch at a location.
std::array<double, 3> patch_contribution(const AnomalyPatch& patch,
                                         double lat_deg, double lon_deg);

/// Base field abstraction so worlds can be backed by the analytic dipole,
/// a sampled grid, or synthetic fields in tests.
class FieldSource {
  public:
    virtual ~FieldSource() = default;
    virtual MagneticVector sample(const GeoPosition& pos) const = 0;
};

class DipoleSource final : public FieldSource {
  public:
    explicit DipoleSource(DipoleParams params) : params_(params) {}
    MagneticVector sample(const GeoPosition& pos) const override;
    const DipoleParams& params() const { return params_; }

  private:
    DipoleParams params_;
};

/// Regular lat/lon grid of field samples, bilinearly interpolated on the
/// raw components. Row-major from the origin corner, latitude varying
/// slowest. Derived elements are recomputed after interpolation.
struct FieldGrid {
    double lat0_deg = 0.0;
    double lon0_deg = 0.0;
    double dlat_deg = 0.0;
    double dlon_deg = 0.0;
    int nlat = 0;
    int nlon = 0;
    std::vector<MagneticVector> samples; // nlat * nlon entries

    const MagneticVector& at(int ilat, int ilon) const;
    double lat_max_deg() const { return lat0_deg + dlat_deg * (nlat - 1); }
    double lon_max_deg() const { return lon0_deg + dlon_deg * (nlon - 1); }

    /// Interpolated components at a position. Throws OutOfDomainError when
    /// the query leaves the grid, naming the offending coordinate.
    std::array<double, 3> interpolate(double lat_deg, double lon_deg) const;
};

class GridParseError : public std::runtime_error {
  public:
    GridParseError(int line, const std::string& what);
    int line() const { return line_; }

  private:
    int line_;
};

class OutOfDomainError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Parses the MAGGRID v1 text format:
///   MAGGRID v1 <nlat> <nlon> <lat0> <lon0> <dlat> <dlon>
/// followed by nlat*nlon lines of `bx by bz` in nanotesla.
FieldGrid load_grid(std::istream& in);
FieldGrid load_grid(const std::filesystem::path& path);

class GridSource final : public FieldSource {
  public:
    explicit GridSource(FieldGrid grid) : grid_(std::move(grid)) {}
    MagneticVector sample(const GeoPosition& pos) const override;
    const FieldGrid& grid() const { return grid_; }

  private:
    FieldGrid grid_;
};

/// Immutable world description: one base field plus zero or more anomaly
/// patches. Safe for concurrent queries.
struct FieldWorld {
    std::shared_ptr<const FieldSource> base;
    std::vector<AnomalyPatch> patches;

    MagneticVector field_at(const GeoPosition& pos) const;
};

} // namespace geonav::field
