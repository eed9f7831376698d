#include "polarfuse/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "polarfuse/kvfile.hpp"

namespace polarfuse::geom {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;
}  // namespace

Mat3 Mat3::identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
            r(i, j) = s;
        }
    return r;
}

std::array<double, 3> Mat3::operator*(const std::array<double, 3>& v) const {
    std::array<double, 3> r{};
    for (std::size_t i = 0; i < 3; ++i)
        r[i] = (*this)(i, 0) * v[0] + (*this)(i, 1) * v[1] + (*this)(i, 2) * v[2];
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 Mat3::inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-12) throw std::invalid_argument("matrix is singular");
    Mat3 r;
    r.m = {(m[4] * m[8] - m[5] * m[7]), (m[2] * m[7] - m[1] * m[8]), (m[1] * m[5] - m[2] * m[4]),
           (m[5] * m[6] - m[3] * m[8]), (m[0] * m[8] - m[2] * m[6]), (m[2] * m[3] - m[0] * m[5]),
           (m[3] * m[7] - m[4] * m[6]), (m[1] * m[6] - m[0] * m[7]), (m[0] * m[4] - m[1] * m[3])};
    for (double& v : r.m) v /= d;
    return r;
}

namespace {

// vehicle -> camera rotation: base swap (X fwd -> z optical, Y left -> -x,
// Z up -> -y) followed by a pitch about the camera's horizontal axis.
Mat3 vehicle_to_camera_rotation(double pitch_deg) {
    Mat3 base;
    base.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
    const double a = pitch_deg * kDeg;
    Mat3 pitch;
    pitch.m = {1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a)};
    return pitch * base;
}

}  // namespace

CameraModel build_camera_model(const Mat3& intrinsics, double height, double pitch_deg) {
    if (height <= 0.0) throw std::invalid_argument("camera height must be positive");
    if (intrinsics(0, 0) <= 0.0 || intrinsics(1, 1) <= 0.0)
        throw std::invalid_argument("focal lengths must be positive");
    if (std::abs(intrinsics.det()) < 1e-12) throw std::invalid_argument("intrinsics are singular");

    CameraModel cam;
    cam.intrinsics = intrinsics;
    cam.height = height;
    cam.pitch_deg = pitch_deg;

    const Mat3 R = vehicle_to_camera_rotation(pitch_deg);
    // ground point (x, y, 0) relative to the camera at (0, 0, h):
    // cam = R * (x, y, -h) = x*R[:,0] + y*R[:,1] - h*R[:,2]
    Mat3 g;
    for (std::size_t i = 0; i < 3; ++i) {
        g(i, 0) = R(i, 0);
        g(i, 1) = R(i, 1);
        g(i, 2) = -height * R(i, 2);
    }
    cam.ground_to_image = intrinsics * g;
    if (std::abs(cam.ground_to_image.det()) < 1e-12)
        throw std::invalid_argument("degenerate ground homography");
    cam.image_to_ground = cam.ground_to_image.inverse();
    return cam;
}

bool project_point(const CameraModel& cam, double X, double Y, double Z, double& u, double& v) {
    const Mat3 R = vehicle_to_camera_rotation(cam.pitch_deg);
    const std::array<double, 3> p = R * std::array<double, 3>{X, Y, Z - cam.height};
    if (p[2] <= 1e-12) return false;
    const std::array<double, 3> q = cam.intrinsics * std::array<double, 3>{p[0] / p[2], p[1] / p[2], 1.0};
    u = q[0];
    v = q[1];
    return true;
}

void BevGridSpec::validate() const {
    if (!(xmax > xmin) || xmin < 0.0) throw std::invalid_argument("bev window: need xmax > xmin >= 0");
    if (!(ymax > ymin)) throw std::invalid_argument("bev window: need ymax > ymin");
    if (nrows < 2 || ncols < 2) throw std::invalid_argument("bev raster: need at least 2x2 pixels");
}

void BevGridSpec::pixel_to_ground(double row, double col, double& x, double& y) const {
    x = xmax - (row + 0.5) * (xmax - xmin) / static_cast<double>(nrows);
    y = ymin + (col + 0.5) * (ymax - ymin) / static_cast<double>(ncols);
}

void BevGridSpec::ground_to_pixel(double x, double y, double& row, double& col) const {
    row = (xmax - x) / (xmax - xmin) * static_cast<double>(nrows) - 0.5;
    col = (y - ymin) / (ymax - ymin) * static_cast<double>(ncols) - 0.5;
}

bool BevGridSpec::contains(double x, double y) const {
    return x >= xmin && x <= xmax && y >= ymin && y <= ymax;
}

void PolarGridSpec::validate() const {
    if (n_range < 2 || n_azimuth < 2) throw std::invalid_argument("polar raster: need at least 2x2 bins");
    if (range_res <= 0.0 || azimuth_res <= 0.0)
        throw std::invalid_argument("polar raster: resolutions must be positive");
}

double PolarGridSpec::range_of_row(double row) const {
    return (static_cast<double>(n_range) - row - 0.5) * range_res;
}

double PolarGridSpec::azimuth_of_col(double col) const {
    return (col + 0.5 - center_offset) * azimuth_res;
}

double PolarGridSpec::row_of_range(double r) const {
    return static_cast<double>(n_range) - 0.5 - r / range_res;
}

double PolarGridSpec::col_of_azimuth(double theta_deg) const {
    return theta_deg / azimuth_res + center_offset - 0.5;
}

double PolarGridSpec::range_of_bin(double bin) const { return (bin + 0.5) * range_res; }

double PolarGridSpec::bin_of_range(double r) const { return r / range_res - 0.5; }

namespace {

float bilinear_sample(const RgbImage& img, std::size_t c, double v, double u) {
    // (v, u) = (row, col); caller guarantees in-bounds
    const std::size_t H = img.height, W = img.width;
    std::size_t i0 = static_cast<std::size_t>(std::clamp(std::floor(v), 0.0, double(H - 2)));
    std::size_t j0 = static_cast<std::size_t>(std::clamp(std::floor(u), 0.0, double(W - 2)));
    const double fv = v - static_cast<double>(i0);
    const double fu = u - static_cast<double>(j0);
    const double a = img.at(c, i0, j0), b = img.at(c, i0, j0 + 1);
    const double d = img.at(c, i0 + 1, j0), e = img.at(c, i0 + 1, j0 + 1);
    return static_cast<float>((a * (1 - fu) + b * fu) * (1 - fv) + (d * (1 - fu) + e * fu) * fv);
}

}  // namespace

RgbImage image_to_bev_cartesian(const RgbImage& img, const CameraModel& cam, const BevGridSpec& grid) {
    grid.validate();
    if (img.height < 2 || img.width < 2) throw std::invalid_argument("source image too small");

    const double cx[4] = {grid.xmin, grid.xmin, grid.xmax, grid.xmax};
    const double cy[4] = {grid.ymin, grid.ymax, grid.ymin, grid.ymax};
    for (int k = 0; k < 4; ++k) {
        const auto q = cam.ground_to_image * std::array<double, 3>{cx[k], cy[k], 1.0};
        if (q[2] <= 1e-9)
            throw std::invalid_argument("ground window extends behind the camera");
    }

    RgbImage out(grid.nrows, grid.ncols);
    for (std::size_t i = 0; i < grid.nrows; ++i) {
        for (std::size_t j = 0; j < grid.ncols; ++j) {
            double x, y;
            grid.pixel_to_ground(static_cast<double>(i), static_cast<double>(j), x, y);
            const auto q = cam.ground_to_image * std::array<double, 3>{x, y, 1.0};
            if (q[2] <= 1e-9) {
                out.mask_at(i, j) = 0;
                continue;
            }
            const double u = q[0] / q[2], v = q[1] / q[2];
            if (u < 0.0 || u > static_cast<double>(img.width - 1) || v < 0.0 ||
                v > static_cast<double>(img.height - 1)) {
                out.mask_at(i, j) = 0;
                continue;
            }
            const std::size_t su = static_cast<std::size_t>(std::lround(u));
            const std::size_t sv = static_cast<std::size_t>(std::lround(v));
            if (!img.mask_at(std::min(sv, img.height - 1), std::min(su, img.width - 1))) {
                out.mask_at(i, j) = 0;
                continue;
            }
            for (std::size_t c = 0; c < 3; ++c) out.at(c, i, j) = bilinear_sample(img, c, v, u);
        }
    }
    return out;
}

std::pair<double, double> cartesian_to_polar_indices(double x, double y) {
    if (x == 0.0 && y == 0.0)
        throw std::domain_error("polar angle undefined at the origin");
    return {std::atan2(y, x) / kDeg, std::hypot(x, y)};
}

std::pair<double, double> polar_to_pixel(double theta_deg, double r) {
    const double a = theta_deg * kDeg;
    return {r * std::sin(a), r * std::cos(a)};
}

namespace {

constexpr double kPole = -0.26794919243112270647;  // sqrt(3) - 2

double initial_causal(const double* c, std::size_t n, std::size_t stride) {
    const std::size_t horizon = 30;
    if (horizon < n) {
        double zk = kPole, sum = c[0];
        for (std::size_t k = 1; k < horizon; ++k) {
            sum += zk * c[k * stride];
            zk *= kPole;
        }
        return sum;
    }
    // full mirror sum for short lines
    double zk = kPole;
    const double iz = 1.0 / kPole;
    double z2 = std::pow(kPole, 2.0 * static_cast<double>(n) - 2.0) * iz;
    double sum = c[0] + std::pow(kPole, static_cast<double>(n) - 1.0) * c[(n - 1) * stride];
    for (std::size_t k = 1; k + 1 < n; ++k) {
        sum += (zk + z2) * c[k * stride];
        zk *= kPole;
        z2 *= iz;
    }
    return sum / (1.0 - std::pow(kPole, 2.0 * static_cast<double>(n) - 2.0));
}

void filter_line(double* c, std::size_t n, std::size_t stride) {
    if (n == 1) return;
    const double gain = 6.0;
    for (std::size_t k = 0; k < n; ++k) c[k * stride] *= gain;
    c[0] = initial_causal(c, n, stride);
    for (std::size_t k = 1; k < n; ++k) c[k * stride] += kPole * c[(k - 1) * stride];
    c[(n - 1) * stride] =
        (kPole / (kPole * kPole - 1.0)) * (kPole * c[(n - 2) * stride] + c[(n - 1) * stride]);
    for (std::size_t k = n - 1; k-- > 0;) c[k * stride] = kPole * (c[(k + 1) * stride] - c[k * stride]);
}

double bspline3(double s) {
    s = std::abs(s);
    if (s < 1.0) return 2.0 / 3.0 - s * s + 0.5 * s * s * s;
    if (s < 2.0) {
        const double t = 2.0 - s;
        return t * t * t / 6.0;
    }
    return 0.0;
}

std::size_t mirror_index(long long i, std::size_t n) {
    if (n == 1) return 0;
    const long long period = 2 * (static_cast<long long>(n) - 1);
    long long k = i % period;
    if (k < 0) k += period;
    if (k >= static_cast<long long>(n)) k = period - k;
    return static_cast<std::size_t>(k);
}

}  // namespace

template <typename T>
TensorT<T> spline_prefilter(const TensorT<T>& grid) {
    if (grid.ndim() != 2) throw std::invalid_argument("spline_prefilter: expected a 2-D grid");
    const std::size_t H = grid.shape[0], W = grid.shape[1];
    std::vector<double> c(grid.data.begin(), grid.data.end());
    for (std::size_t i = 0; i < H; ++i) filter_line(c.data() + i * W, W, 1);
    for (std::size_t j = 0; j < W; ++j) filter_line(c.data() + j, H, W);
    TensorT<T> out(grid.shape);
    for (std::size_t i = 0; i < c.size(); ++i) out.data[i] = static_cast<T>(c[i]);
    return out;
}

template <typename T>
std::vector<T> spline_sample(const TensorT<T>& grid, const std::vector<std::pair<double, double>>& pts,
                             int order, T fill) {
    if (grid.ndim() != 2) throw std::invalid_argument("spline_sample: expected a 2-D grid");
    if (order != 1 && order != 3) throw std::invalid_argument("spline_sample: order must be 1 or 3");
    const std::size_t H = grid.shape[0], W = grid.shape[1];
    std::vector<T> out(pts.size(), fill);

    if (order == 1) {
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const double r = pts[k].first, cc = pts[k].second;
            if (r < 0.0 || r > double(H - 1) || cc < 0.0 || cc > double(W - 1)) continue;
            const std::size_t i0 = static_cast<std::size_t>(std::clamp(std::floor(r), 0.0, double(H - 2)));
            const std::size_t j0 = static_cast<std::size_t>(std::clamp(std::floor(cc), 0.0, double(W - 2)));
            const double fr = r - double(i0), fc = cc - double(j0);
            const double a = grid.at(i0, j0), b = grid.at(i0, j0 + 1);
            const double d = grid.at(i0 + 1, j0), e = grid.at(i0 + 1, j0 + 1);
            out[k] = static_cast<T>((a * (1 - fc) + b * fc) * (1 - fr) + (d * (1 - fc) + e * fc) * fr);
        }
        return out;
    }

    const TensorT<T> coef = spline_prefilter(grid);
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const double r = pts[k].first, cc = pts[k].second;
        if (r < 0.0 || r > double(H - 1) || cc < 0.0 || cc > double(W - 1)) continue;
        const long long bi = static_cast<long long>(std::floor(r));
        const long long bj = static_cast<long long>(std::floor(cc));
        double acc = 0.0;
        for (long long di = -1; di <= 2; ++di) {
            const double wr = bspline3(r - double(bi + di));
            if (wr == 0.0) continue;
            const std::size_t ii = mirror_index(bi + di, H);
            for (long long dj = -1; dj <= 2; ++dj) {
                const double wc = bspline3(cc - double(bj + dj));
                if (wc == 0.0) continue;
                acc += wr * wc * static_cast<double>(coef.at(ii, mirror_index(bj + dj, W)));
            }
        }
        out[k] = static_cast<T>(acc);
    }
    return out;
}

RgbImage bev_cartesian_to_polar(const RgbImage& bev, const BevGridSpec& grid,
                                const PolarGridSpec& polar, int order) {
    grid.validate();
    polar.validate();
    if (bev.height != grid.nrows || bev.width != grid.ncols)
        throw std::invalid_argument("bev raster does not match its grid spec");

    const std::size_t n = polar.n_range * polar.n_azimuth;
    std::vector<std::pair<double, double>> pts(n, {-1.0, -1.0});
    std::vector<std::uint8_t> covered(n, 0);
    std::size_t n_covered = 0;
    for (std::size_t i = 0; i < polar.n_range; ++i) {
        const double r = polar.range_of_row(static_cast<double>(i));
        for (std::size_t j = 0; j < polar.n_azimuth; ++j) {
            const double theta = polar.azimuth_of_col(static_cast<double>(j)) * kDeg;
            const double x = r * std::cos(theta), y = r * std::sin(theta);
            if (!grid.contains(x, y)) continue;
            double row, col;
            grid.ground_to_pixel(x, y, row, col);
            row = std::clamp(row, 0.0, static_cast<double>(grid.nrows - 1));
            col = std::clamp(col, 0.0, static_cast<double>(grid.ncols - 1));
            const std::size_t idx = i * polar.n_azimuth + j;
            pts[idx] = {row, col};
            covered[idx] = 1;
            ++n_covered;
        }
    }
    if (n_covered == 0) throw std::invalid_argument("polar raster does not overlap the bev window");

    RgbImage out(polar.n_range, polar.n_azimuth);
    for (std::size_t c = 0; c < 3; ++c) {
        const Tensor chan = bev.channel_tensor(c);
        const std::vector<float> vals = spline_sample(chan, pts, order, 0.0f);
        std::copy(vals.begin(), vals.end(), out.data.begin() + c * n);
    }
    for (std::size_t idx = 0; idx < n; ++idx) {
        if (!covered[idx]) {
            out.mask[idx] = 0;
            for (std::size_t c = 0; c < 3; ++c) out.data[c * n + idx] = 0.0f;
            continue;
        }
        const std::size_t si = static_cast<std::size_t>(std::lround(pts[idx].first));
        const std::size_t sj = static_cast<std::size_t>(std::lround(pts[idx].second));
        out.mask[idx] = bev.mask_at(std::min(si, bev.height - 1), std::min(sj, bev.width - 1));
        if (!out.mask[idx])
            for (std::size_t c = 0; c < 3; ++c) out.data[c * n + idx] = 0.0f;
    }
    return out;
}

Calibration load_calibration(const std::string& path) {
    const io::KeyValueFile kv = io::KeyValueFile::load(path);
    Calibration c;
    const auto pi = kv.get_doubles("intrinsics", 9);
    std::copy(pi.begin(), pi.end(), c.intrinsics.m.begin());
    c.height = kv.get_double("height");
    c.pitch_deg = kv.get_double("pitch_deg");
    const auto eta = kv.get_doubles("window", 4);
    c.grid.xmin = eta[0];
    c.grid.xmax = eta[1];
    c.grid.ymin = eta[2];
    c.grid.ymax = eta[3];
    const auto os = kv.get_doubles("output_size", 2);
    c.grid.nrows = static_cast<std::size_t>(os[0]);
    c.grid.ncols = static_cast<std::size_t>(os[1]);
    c.grid.validate();
    build_camera_model(c.intrinsics, c.height, c.pitch_deg);  // validates the camera block
    return c;
}

void save_calibration(const Calibration& c, const std::string& path) {
    io::KeyValueFile kv;
    kv.set_doubles("intrinsics", std::vector<double>(c.intrinsics.m.begin(), c.intrinsics.m.end()));
    kv.set_double("height", c.height);
    kv.set_double("pitch_deg", c.pitch_deg);
    kv.set_doubles("window", {c.grid.xmin, c.grid.xmax, c.grid.ymin, c.grid.ymax});
    kv.set_doubles("output_size", {static_cast<double>(c.grid.nrows), static_cast<double>(c.grid.ncols)});
    kv.save(path);
}

template std::vector<float> spline_sample(const TensorT<float>&,
                                          const std::vector<std::pair<double, double>>&, int, float);
template std::vector<double> spline_sample(const TensorT<double>&,
                                           const std::vector<std::pair<double, double>>&, int, double);
template TensorT<float> spline_prefilter(const TensorT<float>&);
template TensorT<double> spline_prefilter(const TensorT<double>&);

}  // namespace polarfuse::geom
