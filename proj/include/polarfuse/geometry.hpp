#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "polarfuse/image.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse::geom {

struct Mat3 {
    std::array<double, 9> m{};  // row-major

    static Mat3 identity();
    double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }

    Mat3 operator*(const Mat3& o) const;
    std::array<double, 3> operator*(const std::array<double, 3>& v) const;
    double det() const;
    Mat3 inverse() const;  // throws on a singular matrix
};

// Pinhole camera over a flat ground plane. Vehicle frame: X forward, Y left,
// Z up; the camera sits at (0, 0, height) looking along +X, pitched toward
// the ground by pitch_deg. Pixel u grows rightward, v downward.
struct CameraModel {
    Mat3 intrinsics;
    double height = 0.0;
    double pitch_deg = 0.0;
    Mat3 ground_to_image;  // maps (x, y, 1) on the ground to homogeneous pixels
    Mat3 image_to_ground;
};

CameraModel build_camera_model(const Mat3& intrinsics, double height, double pitch_deg);

// Full 3-D projection of a vehicle-frame point; false if behind the camera.
bool project_point(const CameraModel& cam, double X, double Y, double Z, double& u, double& v);

// Ground footprint and raster size of the Cartesian bird's-eye view. Row 0 is
// the far edge (xmax), the last row the near edge; columns run from ymin to
// ymax so the vehicle origin sits at the bottom center.
struct BevGridSpec {
    double xmin = 5.0, xmax = 50.0;
    double ymin = -22.0, ymax = 22.0;
    std::size_t nrows = 216, ncols = 250;

    void validate() const;
    void pixel_to_ground(double row, double col, double& x, double& y) const;
    void ground_to_pixel(double x, double y, double& row, double& col) const;
    bool contains(double x, double y) const;
};

// Range/azimuth raster. Row 0 holds the far range bin (near range at the
// bottom); azimuth grows with the column index, with bin centers at
// (j + 0.5 - center_offset) * azimuth_res degrees.
struct PolarGridSpec {
    std::size_t n_range = 512;
    std::size_t n_azimuth = 256;
    double range_res = 50.0 / 512;     // m per bin
    double azimuth_res = 180.0 / 256;  // deg per bin
    double center_offset = 128.0;      // bins

    void validate() const;
    double max_range() const { return n_range * range_res; }
    double range_of_row(double row) const;     // raster row (0 = far) -> meters
    double azimuth_of_col(double col) const;   // raster col -> degrees
    double row_of_range(double r) const;
    double col_of_azimuth(double theta_deg) const;
    double range_of_bin(double bin) const;     // tensor row (0 = near) -> meters
    double bin_of_range(double r) const;
};

// Inverse perspective warp onto the ground window, bilinear sampling.
RgbImage image_to_bev_cartesian(const RgbImage& img, const CameraModel& cam, const BevGridSpec& grid);

// (theta in degrees within (-180, 180], r in meters); throws on the origin.
std::pair<double, double> cartesian_to_polar_indices(double x, double y);

// (theta, r) -> (r*sin(theta), r*cos(theta)) = (y, x)
std::pair<double, double> polar_to_pixel(double theta_deg, double r);

// Resamples the Cartesian view onto the polar raster, default cubic spline.
RgbImage bev_cartesian_to_polar(const RgbImage& bev, const BevGridSpec& grid,
                                const PolarGridSpec& polar, int order = 3);

// Samples a 2-D grid at fractional (row, col) points. order 1 = bilinear,
// order 3 = cubic B-spline with prefiltering; out-of-bounds points get fill.
template <typename T>
std::vector<T> spline_sample(const TensorT<T>& grid, const std::vector<std::pair<double, double>>& pts,
                             int order, T fill = T(0));

// In-place cubic B-spline coefficient transform (mirror boundary), exposed so
// tests can compare against a direct solver.
template <typename T>
TensorT<T> spline_prefilter(const TensorT<T>& grid);

// Plain-text calibration: intrinsics row-major, height, pitch, window, size.
struct Calibration {
    Mat3 intrinsics;
    double height = 1.5;
    double pitch_deg = 10.0;
    BevGridSpec grid;
};

Calibration load_calibration(const std::string& path);
void save_calibration(const Calibration& c, const std::string& path);

}  // namespace polarfuse::geom
