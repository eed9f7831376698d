#include "polarfuse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace polarfuse::pipeline {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string frame_name(const char* stem, std::size_t f, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu.%s", stem, f, ext);
    return buf;
}

Tensor flip_rows(const Tensor& t) {
    const std::size_t C = t.shape[0], H = t.shape[1], W = t.shape[2];
    Tensor out(t.shape);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
            std::copy_n(&t.data[(c * H + i) * W], W, &out.data[(c * H + (H - 1 - i)) * W]);
    return out;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

double near(double a, double b) { return std::abs(a - b); }

}  // namespace

geom::CameraModel CameraSetup::model() const {
    geom::Mat3 k = geom::Mat3::identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return geom::build_camera_model(k, height_m, pitch_deg);
}

void CameraSetup::validate() const {
    require(fx > 0 && fy > 0, "camera: focal lengths must be positive");
    require(image_h >= 16 && image_w >= 16, "camera: image must be at least 16x16");
    require(height_m > 0, "camera: height must be positive");
    require(pitch_deg > 0 && pitch_deg < 90, "camera: pitch must lie in (0, 90) degrees");
}

void SyntheticSceneSpec::validate() const {
    require(min_vehicles <= max_vehicles, "scene: min_vehicles must not exceed max_vehicles");
    require(range_min_m > 0 && range_min_m <= range_max_m, "scene: bad range bounds");
    require(azimuth_min_deg <= azimuth_max_deg, "scene: bad azimuth bounds");
    require(marker_half_m > 0, "scene: marker size must be positive");
    require(amp_min > 0 && amp_min <= amp_max, "scene: bad amplitude bounds");
    require(noise_sigma >= 0, "scene: noise sigma must be nonnegative");
}

double OptimConfig::lr_at(std::size_t epoch) const {
    return lr0 * std::pow(decay, static_cast<double>(epoch / decay_every));
}

void OptimConfig::validate() const {
    require(lr0 > 0, "optim: lr0 must be positive");
    require(decay > 0 && decay <= 1, "optim: decay must lie in (0, 1]");
    require(decay_every > 0, "optim: decay_every must be positive");
    require(batch > 0, "optim: batch must be positive");
    require(epochs > 0, "optim: epochs must be positive");
}

void SplitConfig::validate() const {
    require(train >= 0 && val >= 0 && test >= 0, "split: fractions must be nonnegative");
    require(near(train + val + test, 1.0) <= 1e-9, "split: fractions must sum to 1");
}

std::string PipelineConfig::validate() const {
    network.validate();
    loss.validate();
    const std::string mimo_warning = mimo.validate();
    camera.validate();
    bev.validate();
    cam_polar.validate();
    grid.validate();
    scene.validate();
    optim.validate();
    split.validate();

    if (camera_input == CameraInput::polar) {
        require(cam_polar.n_range == network.cam_h && cam_polar.n_azimuth == network.cam_w,
                "config: polar camera raster must match the network camera input");
    } else {
        require(bev.nrows == network.cam_h && bev.ncols == network.cam_w,
                "config: bev raster must match the network camera input");
    }
    require(mimo.d_max == network.radar_d, "config: mimo d_max must match the radar cube");
    require(network.radar_channels % (2 * mimo.n_tx) == 0,
            "config: radar channels must be 2 * n_rx * n_tx");
    require(grid.n_range == network.grid_r && grid.n_azimuth == network.grid_a,
            "config: detection grid must match the network output grid");
    require(near(grid.max_range(), cam_polar.max_range()) <= 1e-9,
            "config: detection grid and camera raster must cover the same range");
    require(near(grid.n_azimuth * grid.azimuth_res,
                 cam_polar.n_azimuth * cam_polar.azimuth_res) <= 1e-9,
            "config: detection grid and camera raster must cover the same azimuth span");
    require(near(2 * grid.center_offset, static_cast<double>(grid.n_azimuth)) <= 1e-9,
            "config: detection grid must be centered on zero azimuth");
    require(scene.range_max_m <= grid.max_range(), "config: scene ranges exceed the grid");
    require(scene.azimuth_min_deg >= grid.azimuth_of_col(-0.5) &&
                scene.azimuth_max_deg <= grid.azimuth_of_col(grid.n_azimuth - 0.5),
            "config: scene azimuths exceed the grid");
    require(decode_threshold > 0 && decode_threshold < 1,
            "config: decode threshold must lie in (0, 1)");
    require(iou_threshold > 0 && iou_threshold <= 1, "config: IoU threshold must lie in (0, 1]");
    box.validate();
    require(eval_split == "train" || eval_split == "val" || eval_split == "test" ||
                eval_split == "all",
            "config: eval_split must be train, val, test, or all");
    return mimo_warning;
}

io::KeyValueFile PipelineConfig::to_kv() const {
    io::KeyValueFile kv;
    if (!dataset_dir.empty()) kv.set("paths.dataset_dir", dataset_dir);
    if (!checkpoint.empty()) kv.set("paths.checkpoint", checkpoint);
    if (!out_dir.empty()) kv.set("paths.out_dir", out_dir);
    kv.set("pipeline.camera_input", camera_input == CameraInput::polar ? "polar" : "cartesian");
    kv.set("pipeline.eval_split", eval_split);
    kv.set_double("pipeline.decode_threshold", decode_threshold);
    kv.set_int("pipeline.n_frames", static_cast<long long>(n_frames));
    kv.set_int("pipeline.seed", static_cast<long long>(seed));
    network.to_kv(kv);
    kv.set_double("loss.gamma", loss.gamma);
    kv.set_double("loss.alpha_f", loss.alpha_f);
    kv.set_double("loss.alpha", loss.alpha);
    kv.set_double("loss.eps_p", loss.eps_p);
    kv.set_int("mimo.n_tx", static_cast<long long>(mimo.n_tx));
    kv.set_int("mimo.delta", static_cast<long long>(mimo.delta));
    kv.set_int("mimo.d_max", static_cast<long long>(mimo.d_max));
    kv.set_double("camera.fx", camera.fx);
    kv.set_double("camera.fy", camera.fy);
    kv.set_double("camera.cx", camera.cx);
    kv.set_double("camera.cy", camera.cy);
    kv.set_int("camera.image_h", static_cast<long long>(camera.image_h));
    kv.set_int("camera.image_w", static_cast<long long>(camera.image_w));
    kv.set_double("camera.height_m", camera.height_m);
    kv.set_double("camera.pitch_deg", camera.pitch_deg);
    kv.set_double("bev.xmin", bev.xmin);
    kv.set_double("bev.xmax", bev.xmax);
    kv.set_double("bev.ymin", bev.ymin);
    kv.set_double("bev.ymax", bev.ymax);
    kv.set_int("bev.nrows", static_cast<long long>(bev.nrows));
    kv.set_int("bev.ncols", static_cast<long long>(bev.ncols));
    const auto polar_kv = [&kv](const char* sec, const geom::PolarGridSpec& g) {
        const std::string s(sec);
        kv.set_int(s + ".n_range", static_cast<long long>(g.n_range));
        kv.set_int(s + ".n_azimuth", static_cast<long long>(g.n_azimuth));
        kv.set_double(s + ".range_res", g.range_res);
        kv.set_double(s + ".azimuth_res", g.azimuth_res);
        kv.set_double(s + ".center_offset", g.center_offset);
    };
    polar_kv("cam_polar", cam_polar);
    polar_kv("grid", grid);
    kv.set_int("scene.min_vehicles", static_cast<long long>(scene.min_vehicles));
    kv.set_int("scene.max_vehicles", static_cast<long long>(scene.max_vehicles));
    kv.set_double("scene.range_min_m", scene.range_min_m);
    kv.set_double("scene.range_max_m", scene.range_max_m);
    kv.set_double("scene.azimuth_min_deg", scene.azimuth_min_deg);
    kv.set_double("scene.azimuth_max_deg", scene.azimuth_max_deg);
    kv.set_double("scene.marker_half_m", scene.marker_half_m);
    kv.set_double("scene.amp_min", scene.amp_min);
    kv.set_double("scene.amp_max", scene.amp_max);
    kv.set_double("scene.noise_sigma", scene.noise_sigma);
    kv.set_double("optim.lr0", optim.lr0);
    kv.set_double("optim.decay", optim.decay);
    kv.set_int("optim.decay_every", static_cast<long long>(optim.decay_every));
    kv.set_int("optim.batch", static_cast<long long>(optim.batch));
    kv.set_int("optim.epochs", static_cast<long long>(optim.epochs));
    if (optim.freeze_bn_after != SIZE_MAX)
        kv.set_int("optim.freeze_bn_after", static_cast<long long>(optim.freeze_bn_after));
    kv.set_double("split.train", split.train);
    kv.set_double("split.val", split.val);
    kv.set_double("split.test", split.test);
    kv.set_double("eval.box_length_m", box.length_m);
    kv.set_double("eval.box_width_m", box.width_m);
    kv.set_double("eval.iou_threshold", iou_threshold);
    return kv;
}

PipelineConfig PipelineConfig::from_kv(const io::KeyValueFile& kv) {
    PipelineConfig c;
    c.dataset_dir = kv.get_string("paths.dataset_dir", c.dataset_dir);
    c.checkpoint = kv.get_string("paths.checkpoint", c.checkpoint);
    c.out_dir = kv.get_string("paths.out_dir", c.out_dir);
    const std::string ci = kv.get_string("pipeline.camera_input", "polar");
    require(ci == "polar" || ci == "cartesian",
            "config: camera_input must be polar or cartesian");
    c.camera_input = ci == "polar" ? CameraInput::polar : CameraInput::cartesian;
    c.eval_split = kv.get_string("pipeline.eval_split", c.eval_split);
    c.decode_threshold = kv.get_double("pipeline.decode_threshold", c.decode_threshold);
    c.n_frames = static_cast<std::size_t>(
        kv.get_int("pipeline.n_frames", static_cast<long long>(c.n_frames)));
    c.seed =
        static_cast<std::uint64_t>(kv.get_int("pipeline.seed", static_cast<long long>(c.seed)));
    if (kv.has("net.width")) c.network = net::NetworkConfig::from_kv(kv);
    c.loss.gamma = kv.get_double("loss.gamma", c.loss.gamma);
    c.loss.alpha_f = kv.get_double("loss.alpha_f", c.loss.alpha_f);
    c.loss.alpha = kv.get_double("loss.alpha", c.loss.alpha);
    c.loss.eps_p = kv.get_double("loss.eps_p", c.loss.eps_p);
    c.mimo.n_tx = static_cast<std::size_t>(
        kv.get_int("mimo.n_tx", static_cast<long long>(c.mimo.n_tx)));
    c.mimo.delta = static_cast<std::size_t>(
        kv.get_int("mimo.delta", static_cast<long long>(c.mimo.delta)));
    c.mimo.d_max = static_cast<std::size_t>(
        kv.get_int("mimo.d_max", static_cast<long long>(c.mimo.d_max)));
    c.camera.fx = kv.get_double("camera.fx", c.camera.fx);
    c.camera.fy = kv.get_double("camera.fy", c.camera.fy);
    c.camera.cx = kv.get_double("camera.cx", c.camera.cx);
    c.camera.cy = kv.get_double("camera.cy", c.camera.cy);
    c.camera.image_h = static_cast<std::size_t>(
        kv.get_int("camera.image_h", static_cast<long long>(c.camera.image_h)));
    c.camera.image_w = static_cast<std::size_t>(
        kv.get_int("camera.image_w", static_cast<long long>(c.camera.image_w)));
    c.camera.height_m = kv.get_double("camera.height_m", c.camera.height_m);
    c.camera.pitch_deg = kv.get_double("camera.pitch_deg", c.camera.pitch_deg);
    c.bev.xmin = kv.get_double("bev.xmin", c.bev.xmin);
    c.bev.xmax = kv.get_double("bev.xmax", c.bev.xmax);
    c.bev.ymin = kv.get_double("bev.ymin", c.bev.ymin);
    c.bev.ymax = kv.get_double("bev.ymax", c.bev.ymax);
    c.bev.nrows = static_cast<std::size_t>(
        kv.get_int("bev.nrows", static_cast<long long>(c.bev.nrows)));
    c.bev.ncols = static_cast<std::size_t>(
        kv.get_int("bev.ncols", static_cast<long long>(c.bev.ncols)));
    const auto polar_kv = [&kv](const char* sec, geom::PolarGridSpec& g) {
        const std::string s(sec);
        g.n_range = static_cast<std::size_t>(
            kv.get_int(s + ".n_range", static_cast<long long>(g.n_range)));
        g.n_azimuth = static_cast<std::size_t>(
            kv.get_int(s + ".n_azimuth", static_cast<long long>(g.n_azimuth)));
        g.range_res = kv.get_double(s + ".range_res", g.range_res);
        g.azimuth_res = kv.get_double(s + ".azimuth_res", g.azimuth_res);
        g.center_offset = kv.get_double(s + ".center_offset", g.center_offset);
    };
    polar_kv("cam_polar", c.cam_polar);
    polar_kv("grid", c.grid);
    c.scene.min_vehicles = static_cast<std::size_t>(
        kv.get_int("scene.min_vehicles", static_cast<long long>(c.scene.min_vehicles)));
    c.scene.max_vehicles = static_cast<std::size_t>(
        kv.get_int("scene.max_vehicles", static_cast<long long>(c.scene.max_vehicles)));
    c.scene.range_min_m = kv.get_double("scene.range_min_m", c.scene.range_min_m);
    c.scene.range_max_m = kv.get_double("scene.range_max_m", c.scene.range_max_m);
    c.scene.azimuth_min_deg = kv.get_double("scene.azimuth_min_deg", c.scene.azimuth_min_deg);
    c.scene.azimuth_max_deg = kv.get_double("scene.azimuth_max_deg", c.scene.azimuth_max_deg);
    c.scene.marker_half_m = kv.get_double("scene.marker_half_m", c.scene.marker_half_m);
    c.scene.amp_min = kv.get_double("scene.amp_min", c.scene.amp_min);
    c.scene.amp_max = kv.get_double("scene.amp_max", c.scene.amp_max);
    c.scene.noise_sigma = kv.get_double("scene.noise_sigma", c.scene.noise_sigma);
    c.optim.lr0 = kv.get_double("optim.lr0", c.optim.lr0);
    c.optim.decay = kv.get_double("optim.decay", c.optim.decay);
    c.optim.decay_every = static_cast<std::size_t>(
        kv.get_int("optim.decay_every", static_cast<long long>(c.optim.decay_every)));
    c.optim.batch = static_cast<std::size_t>(
        kv.get_int("optim.batch", static_cast<long long>(c.optim.batch)));
    c.optim.epochs = static_cast<std::size_t>(
        kv.get_int("optim.epochs", static_cast<long long>(c.optim.epochs)));
    if (kv.has("optim.freeze_bn_after"))
        c.optim.freeze_bn_after =
            static_cast<std::size_t>(kv.get_int("optim.freeze_bn_after"));
    c.split.train = kv.get_double("split.train", c.split.train);
    c.split.val = kv.get_double("split.val", c.split.val);
    c.split.test = kv.get_double("split.test", c.split.test);
    c.box.length_m = kv.get_double("eval.box_length_m", c.box.length_m);
    c.box.width_m = kv.get_double("eval.box_width_m", c.box.width_m);
    c.iou_threshold = kv.get_double("eval.iou_threshold", c.iou_threshold);
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    return from_kv(io::KeyValueFile::load(path));
}

void PipelineConfig::save(const std::string& path) const { to_kv().save(path); }

RgbImage render_camera_scene(const CameraSetup& cam, const std::vector<eval::GtObject>& objects,
                             double marker_half_m) {
    static const float palette[4][3] = {{1.0f, 0.85f, 0.2f},
                                        {0.95f, 0.35f, 0.3f},
                                        {0.35f, 0.8f, 1.0f},
                                        {0.9f, 0.45f, 0.9f}};
    const geom::CameraModel cm = cam.model();
    std::vector<std::array<double, 2>> centers;
    for (const auto& o : objects) {
        const double a = o.azimuth_deg * kPi / 180.0;
        centers.push_back({o.range_m * std::cos(a), o.range_m * std::sin(a)});
    }
    RgbImage img(cam.image_h, cam.image_w);
    for (std::size_t i = 0; i < cam.image_h; ++i)
        for (std::size_t j = 0; j < cam.image_w; ++j) {
            float acc[3] = {0, 0, 0};
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    const double u = j + (b + 0.5) / 2.0 - 0.5;
                    const double v = i + (a + 0.5) / 2.0 - 0.5;
                    const auto h = cm.image_to_ground * std::array<double, 3>{u, v, 1.0};
                    float px[3] = {0.45f, 0.55f, 0.7f};  // sky
                    if (std::abs(h[2]) > 1e-12) {
                        const double x = h[0] / h[2], y = h[1] / h[2];
                        if (x > 0) {
                            const bool check =
                                ((long long)std::floor(x) + (long long)std::floor(y)) & 1;
                            const float g = check ? 0.16f : 0.26f;
                            px[0] = px[1] = px[2] = g;
                            for (std::size_t k = 0; k < centers.size(); ++k)
                                if (std::abs(x - centers[k][0]) <= marker_half_m &&
                                    std::abs(y - centers[k][1]) <= marker_half_m) {
                                    px[0] = palette[k % 4][0];
                                    px[1] = palette[k % 4][1];
                                    px[2] = palette[k % 4][2];
                                    break;
                                }
                        }
                    }
                    acc[0] += px[0];
                    acc[1] += px[1];
                    acc[2] += px[2];
                }
            img.at(0, i, j) = acc[0] / 4;
            img.at(1, i, j) = acc[1] / 4;
            img.at(2, i, j) = acc[2] / 4;
        }
    return img;
}

Tensor preprocess_camera(const RgbImage& img, const PipelineConfig& cfg) {
    const RgbImage bev = geom::image_to_bev_cartesian(img, cfg.camera.model(), cfg.bev);
    const RgbImage raster = cfg.camera_input == CameraInput::polar
                                ? geom::bev_cartesian_to_polar(bev, cfg.bev, cfg.cam_polar)
                                : bev;
    if (raster.height != cfg.network.cam_h || raster.width != cfg.network.cam_w)
        throw std::invalid_argument("preprocess: camera raster is " +
                                    std::to_string(raster.height) + "x" +
                                    std::to_string(raster.width) + ", network expects " +
                                    std::to_string(cfg.network.cam_h) + "x" +
                                    std::to_string(cfg.network.cam_w));
    return flip_rows(raster.to_tensor());
}

Tensor preprocess_radar(const radar::RdTensor& cube, const PipelineConfig& cfg) {
    if (cube.n_range != cfg.network.radar_r || cube.n_doppler != cfg.network.radar_d ||
        cube.n_rx != cfg.n_rx())
        throw std::invalid_argument("preprocess: rd cube is " + std::to_string(cube.n_range) +
                                    "x" + std::to_string(cube.n_doppler) + "x" +
                                    std::to_string(cube.n_rx) + ", config expects " +
                                    std::to_string(cfg.network.radar_r) + "x" +
                                    std::to_string(cfg.network.radar_d) + "x" +
                                    std::to_string(cfg.n_rx()));
    return radar::mimo_reorganize(radar::stack_complex_channels(cube), cfg.mimo);
}

TargetMaps targets_from_gts(const std::vector<eval::GtObject>& gts,
                            const geom::PolarGridSpec& grid) {
    const std::size_t R = grid.n_range, A = grid.n_azimuth;
    TargetMaps t;
    t.cls = Tensor({1, R, A});
    t.reg = Tensor({2, R, A});
    for (const auto& g : gts) {
        const auto clamp_idx = [](double v, std::size_t n) {
            const double f = std::floor(v);
            if (f < 0) return std::size_t(0);
            if (f >= static_cast<double>(n)) return n - 1;
            return static_cast<std::size_t>(f);
        };
        const std::size_t i = clamp_idx(g.range_m / grid.range_res, R);
        const std::size_t j =
            clamp_idx(g.azimuth_deg / grid.azimuth_res + grid.center_offset, A);
        t.cls.data[i * A + j] = 1.0f;
        t.reg.data[i * A + j] = static_cast<float>(g.range_m);
        t.reg.data[(R + i) * A + j] = static_cast<float>(g.azimuth_deg);
    }
    return t;
}

DatasetManifest generate_synthetic_dataset(const PipelineConfig& cfg, std::size_t n_frames,
                                           const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    DatasetManifest m;
    m.n_frames = n_frames;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> n_obj(cfg.scene.min_vehicles,
                                                     cfg.scene.max_vehicles);
    std::uniform_real_distribution<double> u_range(cfg.scene.range_min_m, cfg.scene.range_max_m);
    std::uniform_real_distribution<double> u_az(cfg.scene.azimuth_min_deg,
                                                cfg.scene.azimuth_max_deg);
    std::uniform_int_distribution<std::size_t> u_dop(0, cfg.mimo.d_max - 1);
    std::uniform_real_distribution<double> u_amp(cfg.scene.amp_min, cfg.scene.amp_max);
    std::uniform_real_distribution<double> u_phase(-kPi, kPi);

    std::vector<std::vector<eval::GtObject>> gts(n_frames);
    for (std::size_t f = 0; f < n_frames; ++f) {
        const std::size_t n = n_obj(rng);
        std::vector<radar::RadarTargetSpec> targets;
        for (std::size_t k = 0; k < n; ++k) {
            eval::GtObject g{u_range(rng), u_az(rng)};
            gts[f].push_back(g);
            radar::RadarTargetSpec tg;
            tg.range_bin = std::min(
                static_cast<std::size_t>(std::floor(g.range_m / cfg.cam_polar.range_res)),
                cfg.network.radar_r - 1);
            tg.doppler_bin = u_dop(rng);
            tg.amplitude = std::polar(u_amp(rng), u_phase(rng));
            tg.phase_step = u_phase(rng);
            targets.push_back(tg);
        }
        const RgbImage img = render_camera_scene(cfg.camera, gts[f], cfg.scene.marker_half_m);
        const radar::RdTensor cube =
            radar::synth_rd_scene(targets, cfg.mimo, cfg.network.radar_r, cfg.n_rx(),
                                  cfg.scene.noise_sigma, rng());

        m.camera_files.push_back(frame_name("camera", f, "ppm"));
        m.rd_files.push_back(frame_name("rd", f, "rdt"));
        io::save_ppm(img, out_dir + "/" + m.camera_files.back());
        io::save_rd_tensor(out_dir + "/" + m.rd_files.back(), cube);
    }
    if (n_frames > 0) eval::save_ground_truth_csv(out_dir + "/" + m.gt_csv, gts);

    io::KeyValueFile kv = cfg.to_kv();
    kv.set_int("dataset.n_frames", static_cast<long long>(n_frames));
    kv.set("dataset.gt_csv", m.gt_csv);
    if (n_frames > 0) {
        std::string cams, rds;
        for (std::size_t f = 0; f < n_frames; ++f) {
            if (f) {
                cams += ' ';
                rds += ' ';
            }
            cams += m.camera_files[f];
            rds += m.rd_files[f];
        }
        kv.set("dataset.camera_files", cams);
        kv.set("dataset.rd_files", rds);
    }
    kv.save(out_dir + "/manifest.kv");
    return m;
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
    const io::KeyValueFile kv = io::KeyValueFile::load(dataset_dir + "/manifest.kv");
    DatasetManifest m;
    m.n_frames = static_cast<std::size_t>(kv.get_int("dataset.n_frames"));
    m.gt_csv = kv.get_string("dataset.gt_csv", m.gt_csv);
    if (m.n_frames > 0) {
        m.camera_files = kv.tokens("dataset.camera_files");
        m.rd_files = kv.tokens("dataset.rd_files");
        if (m.camera_files.size() != m.n_frames || m.rd_files.size() != m.n_frames)
            throw std::runtime_error(dataset_dir + "/manifest.kv: file lists do not match n_frames");
    }
    return m;
}

Dataset load_dataset(const PipelineConfig& cfg, const std::string& dataset_dir) {
    Dataset ds;
    ds.dir = dataset_dir;
    ds.manifest = load_manifest(dataset_dir);
    ds.frames.reserve(ds.manifest.n_frames);
    for (std::size_t f = 0; f < ds.manifest.n_frames; ++f) {
        const RgbImage img = io::load_ppm(dataset_dir + "/" + ds.manifest.camera_files[f]);
        const radar::RdTensor cube =
            io::load_rd_tensor(dataset_dir + "/" + ds.manifest.rd_files[f]);
        ds.frames.push_back({preprocess_camera(img, cfg), preprocess_radar(cube, cfg)});
    }
    if (ds.manifest.n_frames > 0)
        ds.gts = eval::load_ground_truth_csv(dataset_dir + "/" + ds.manifest.gt_csv,
                                             ds.manifest.n_frames);
    return ds;
}

SplitIndices split_dataset(std::size_t n, const SplitConfig& split, std::uint64_t seed) {
    split.validate();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::llround(n * split.train));
    std::size_t n_val = static_cast<std::size_t>(std::llround(n * split.val));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    SplitIndices s;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    s.test.assign(idx.begin() + n_train + n_val, idx.end());
    return s;
}

namespace {

const std::vector<std::size_t>& pick_split(const SplitIndices& s, const std::string& name,
                                           std::vector<std::size_t>& all_storage,
                                           std::size_t n) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    all_storage.resize(n);
    std::iota(all_storage.begin(), all_storage.end(), 0);
    return all_storage;
}

net::Model load_model_checked(const PipelineConfig& cfg) {
    if (cfg.checkpoint.empty())
        throw std::invalid_argument("config: paths.checkpoint is required");
    net::Model model = io::load_checkpoint(cfg.checkpoint);
    const net::NetworkConfig& mc = model.config();
    if (mc.grid_r != cfg.grid.n_range || mc.grid_a != cfg.grid.n_azimuth)
        throw std::runtime_error("checkpoint: output grid " + std::to_string(mc.grid_r) + "x" +
                                 std::to_string(mc.grid_a) + " does not match the configured " +
                                 std::to_string(cfg.grid.n_range) + "x" +
                                 std::to_string(cfg.grid.n_azimuth));
    return model;
}

void prepare_out_dir(const PipelineConfig& cfg) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("config: paths.out_dir is required");
    fs::create_directories(cfg.out_dir);
    cfg.save(cfg.out_dir + "/resolved_config.kv");
}

}  // namespace

TrainSummary train_model(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.dataset_dir.empty())
        throw std::invalid_argument("config: paths.dataset_dir is required");
    prepare_out_dir(cfg);

    const Dataset ds = load_dataset(cfg, cfg.dataset_dir);
    if (ds.manifest.n_frames == 0) throw std::runtime_error("train: dataset is empty");
    const SplitIndices split = split_dataset(ds.manifest.n_frames, cfg.split, cfg.seed);
    if (split.train.empty()) throw std::runtime_error("train: training split is empty");

    std::vector<TargetMaps> targets;
    targets.reserve(ds.manifest.n_frames);
    for (std::size_t f = 0; f < ds.manifest.n_frames; ++f)
        targets.push_back(targets_from_gts(ds.gts[f], cfg.grid));

    net::Model model(cfg.network);
    {
        // Batchnorm normalizes with the running statistics even while
        // training, so seed them from the fresh network's activations before
        // the first optimizer step; cycling the training set a few dozen
        // times lets the moving averages settle.
        autograd::NoGradGuard guard;
        const std::size_t passes = (63 + split.train.size()) / split.train.size();
        for (std::size_t pass = 0; pass < passes; ++pass)
            for (std::size_t f : split.train) {
                autograd::Var cam(ds.frames[f].camera), rad(ds.frames[f].radar);
                (void)model.forward(cam, rad, true);
            }
    }
    autograd::Adam opt(model.trainable(),
                       {static_cast<float>(cfg.optim.lr0), 0.9f, 0.999f, 1e-8f});
    std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::ofstream log(cfg.out_dir + "/train_log.txt");
    TrainSummary sum;
    sum.checkpoint_path = cfg.out_dir + "/checkpoint.pfn";
    std::vector<std::size_t> order = split.train;
    for (std::size_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const bool bn_train = epoch < cfg.optim.freeze_bn_after;
        opt.set_lr(static_cast<float>(cfg.optim.lr_at(epoch)));
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.optim.batch) {
            const std::size_t stop = std::min(start + cfg.optim.batch, order.size());
            const float inv = 1.0f / static_cast<float>(stop - start);
            opt.zero_grad();
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t f = order[k];
                autograd::Var cam(ds.frames[f].camera), rad(ds.frames[f].radar);
                net::DetectionMapPair out = model.forward(cam, rad, bn_train);
                autograd::Var item =
                    autograd::detection_loss_var(out.cls, out.reg, targets[f], cfg.loss);
                const double lv = item.value().data[0];
                if (!std::isfinite(lv))
                    throw std::runtime_error("train: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", frame " +
                                             std::to_string(f));
                epoch_sum += lv;
                autograd::scale(item, inv).backward();
            }
            opt.step();
            ++sum.steps;
        }
        sum.epoch_loss.push_back(epoch_sum / static_cast<double>(order.size()));
        io::save_checkpoint(sum.checkpoint_path, model);
        log << "epoch " << epoch << " lr " << cfg.optim.lr_at(epoch) << " loss "
            << sum.epoch_loss.back() << "\n";
        log.flush();
    }
    sum.epochs = cfg.optim.epochs;
    sum.final_loss = sum.epoch_loss.back();
    return sum;
}

std::vector<std::vector<eval::Detection>> infer_detections(net::Model& model, const Dataset& ds,
                                                           const std::vector<std::size_t>& indices,
                                                           double decode_threshold,
                                                           const geom::PolarGridSpec& grid) {
    autograd::NoGradGuard guard;
    std::vector<std::vector<eval::Detection>> out;
    out.reserve(indices.size());
    for (std::size_t f : indices) {
        autograd::Var cam(ds.frames[f].camera), rad(ds.frames[f].radar);
        const net::DetectionMapPair maps = model.forward(cam, rad, false);
        out.push_back(eval::decode_detections(maps, decode_threshold, grid));
    }
    return out;
}

std::string run_infer(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.dataset_dir.empty())
        throw std::invalid_argument("config: paths.dataset_dir is required");
    net::Model model = load_model_checked(cfg);
    prepare_out_dir(cfg);
    const Dataset ds = load_dataset(cfg, cfg.dataset_dir);
    std::vector<std::size_t> all(ds.manifest.n_frames);
    std::iota(all.begin(), all.end(), 0);
    const auto dets = infer_detections(model, ds, all, cfg.decode_threshold, cfg.grid);
    const std::string path = cfg.out_dir + "/detections.csv";
    eval::save_predictions_csv(path, dets);
    return path;
}

eval::MetricsReport run_eval(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.dataset_dir.empty())
        throw std::invalid_argument("config: paths.dataset_dir is required");
    net::Model model = load_model_checked(cfg);
    prepare_out_dir(cfg);
    const Dataset ds = load_dataset(cfg, cfg.dataset_dir);
    const SplitIndices split = split_dataset(ds.manifest.n_frames, cfg.split, cfg.seed);
    std::vector<std::size_t> all_storage;
    const std::vector<std::size_t>& indices =
        pick_split(split, cfg.eval_split, all_storage, ds.manifest.n_frames);
    if (indices.empty()) throw std::runtime_error("eval: split '" + cfg.eval_split + "' is empty");

    const auto dets = infer_detections(model, ds, indices, cfg.decode_threshold, cfg.grid);

    std::vector<eval::EvalFrame> frames(indices.size());
    std::vector<std::vector<eval::Detection>> csv_frames(ds.manifest.n_frames);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        frames[k].preds = dets[k];
        frames[k].gts = ds.gts[indices[k]];
        csv_frames[indices[k]] = dets[k];
    }
    const eval::MetricsReport rep = eval::evaluate_frames(frames, cfg.iou_threshold, cfg.box);

    eval::save_predictions_csv(cfg.out_dir + "/detections.csv", csv_frames);
    std::ofstream(cfg.out_dir + "/metrics.txt") << rep.table();
    rep.to_kv().save(cfg.out_dir + "/metrics.kv");

    const std::size_t f0 = indices.front();
    const RgbImage img = io::load_ppm(cfg.dataset_dir + "/" + ds.manifest.camera_files[f0]);
    const RgbImage bev = geom::image_to_bev_cartesian(img, cfg.camera.model(), cfg.bev);
    const RgbImage polar = geom::bev_cartesian_to_polar(bev, cfg.bev, cfg.cam_polar);
    export_polar_overlay(polar, dets.front(), ds.gts[f0], cfg.cam_polar,
                         cfg.out_dir + "/overlay.ppm");
    return rep;
}

eval::BenchmarkReport benchmark_model(net::Model& model, const Dataset& ds,
                                      const PipelineConfig& cfg) {
    if (ds.manifest.n_frames < 2) throw std::invalid_argument("bench: need at least 2 frames");
    autograd::NoGradGuard guard;
    std::vector<double> fps;
    for (std::size_t f = 0; f < ds.manifest.n_frames; ++f) {
        const auto t0 = std::chrono::steady_clock::now();
        autograd::Var cam(ds.frames[f].camera), rad(ds.frames[f].radar);
        const net::DetectionMapPair maps = model.forward(cam, rad, false);
        const auto dets = eval::decode_detections(maps, cfg.decode_threshold, cfg.grid);
        const auto t1 = std::chrono::steady_clock::now();
        (void)dets;
        const double dt = std::chrono::duration<double>(t1 - t0).count();
        fps.push_back(1.0 / dt);
    }
    const double n = static_cast<double>(fps.size());
    const double mean = std::accumulate(fps.begin(), fps.end(), 0.0) / n;
    double var = 0.0;
    for (double v : fps) var += (v - mean) * (v - mean);
    eval::BenchmarkReport rep;
    rep.fps_mean = mean;
    rep.fps_sigma = std::sqrt(var / (n - 1));
    rep.params_millions = static_cast<double>(model.count_parameters()) / 1e6;
    if (!cfg.checkpoint.empty())
        rep.model_file_mb = static_cast<double>(fs::file_size(cfg.checkpoint)) / 1e6;
    return rep;
}

eval::BenchmarkReport run_bench(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.dataset_dir.empty())
        throw std::invalid_argument("config: paths.dataset_dir is required");
    net::Model model = load_model_checked(cfg);
    prepare_out_dir(cfg);
    const Dataset ds = load_dataset(cfg, cfg.dataset_dir);
    const eval::BenchmarkReport rep = benchmark_model(model, ds, cfg);
    std::ofstream(cfg.out_dir + "/bench.txt") << rep.table();
    rep.to_kv().save(cfg.out_dir + "/bench.kv");
    return rep;
}

void export_polar_overlay(RgbImage polar, const std::vector<eval::Detection>& dets,
                          const std::vector<eval::GtObject>& gts,
                          const geom::PolarGridSpec& raster, const std::string& path) {
    if (polar.height != raster.n_range || polar.width != raster.n_azimuth)
        throw std::invalid_argument("overlay: image does not match the polar raster");
    const auto draw = [&polar](long long r, long long c, float cr, float cg, float cb) {
        for (long long d = -2; d <= 2; ++d)
            for (auto [i, j] : {std::pair<long long, long long>{r + d, c},
                                std::pair<long long, long long>{r, c + d}}) {
                if (i < 0 || j < 0 || i >= (long long)polar.height || j >= (long long)polar.width)
                    continue;
                polar.at(0, (std::size_t)i, (std::size_t)j) = cr;
                polar.at(1, (std::size_t)i, (std::size_t)j) = cg;
                polar.at(2, (std::size_t)i, (std::size_t)j) = cb;
                polar.mask_at((std::size_t)i, (std::size_t)j) = 1;
            }
    };
    for (const auto& g : gts)
        draw(std::llround(raster.row_of_range(g.range_m)),
             std::llround(raster.col_of_azimuth(g.azimuth_deg)), 0.0f, 0.9f, 0.1f);
    for (const auto& d : dets)
        draw(std::llround(raster.row_of_range(d.range_m)),
             std::llround(raster.col_of_azimuth(d.azimuth_deg)), 0.1f, 0.35f, 1.0f);
    io::save_ppm(polar, path);
}

void run_warp(const PipelineConfig& cfg) {
    cfg.validate();
    prepare_out_dir(cfg);
    RgbImage img;
    if (!cfg.dataset_dir.empty() && fs::exists(cfg.dataset_dir + "/manifest.kv")) {
        const DatasetManifest m = load_manifest(cfg.dataset_dir);
        if (m.n_frames == 0) throw std::runtime_error("warp: dataset is empty");
        img = io::load_ppm(cfg.dataset_dir + "/" + m.camera_files[0]);
    } else {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> u_range(cfg.scene.range_min_m,
                                                       cfg.scene.range_max_m);
        std::uniform_real_distribution<double> u_az(cfg.scene.azimuth_min_deg,
                                                    cfg.scene.azimuth_max_deg);
        std::vector<eval::GtObject> objects;
        for (int k = 0; k < 2; ++k) objects.push_back({u_range(rng), u_az(rng)});
        img = render_camera_scene(cfg.camera, objects, cfg.scene.marker_half_m);
    }
    io::save_ppm(img, cfg.out_dir + "/camera.ppm");
    const RgbImage bev = geom::image_to_bev_cartesian(img, cfg.camera.model(), cfg.bev);
    io::save_ppm(bev, cfg.out_dir + "/bev.ppm");
    const RgbImage polar = geom::bev_cartesian_to_polar(bev, cfg.bev, cfg.cam_polar);
    io::save_ppm(polar, cfg.out_dir + "/polar.ppm");
}

}  // namespace polarfuse::pipeline
