#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polarfuse/eval.hpp"
#include "polarfuse/fusion.hpp"
#include "polarfuse/geometry.hpp"
#include "polarfuse/image.hpp"
#include "polarfuse/kvfile.hpp"
#include "polarfuse/loss.hpp"
#include "polarfuse/radar.hpp"

namespace polarfuse::pipeline {

// Pinhole camera in plain numbers, expanded to a CameraModel on demand.
struct CameraSetup {
    double fx = 260.0, fy = 260.0, cx = 160.0, cy = 120.0;
    std::size_t image_h = 240, image_w = 320;
    double height_m = 1.2, pitch_deg = 18.0;

    geom::CameraModel model() const;
    void validate() const;
};

// Placement and signal bounds for synthetic scenes. Vehicles appear as
// bright ground squares to the camera and as point targets in the RD cube,
// at the same polar coordinates.
struct SyntheticSceneSpec {
    std::size_t min_vehicles = 1, max_vehicles = 3;
    double range_min_m = 2.0, range_max_m = 7.5;
    double azimuth_min_deg = -26.0, azimuth_max_deg = 26.0;
    double marker_half_m = 0.35;
    double amp_min = 0.75, amp_max = 1.25;
    double noise_sigma = 0.02;

    void validate() const;
};

struct OptimConfig {
    double lr0 = 1e-4;
    double decay = 0.9;
    std::size_t decay_every = 10;
    std::size_t batch = 4;
    std::size_t epochs = 40;
    // From this epoch on, the batchnorm running statistics stop refreshing
    // and training continues against the fixed values (training always
    // normalizes with the running averages; see net::BatchNorm). Defaults to
    // never freezing.
    std::size_t freeze_bn_after = SIZE_MAX;

    // lr0 * decay^(epoch / decay_every), integer division.
    double lr_at(std::size_t epoch) const;
    void validate() const;
};

struct SplitConfig {
    double train = 0.70, val = 0.15, test = 0.15;
    void validate() const;  // nonnegative, sums to 1 within 1e-9
};

enum class CameraInput { polar, cartesian };

// Everything a run needs. Defaults describe the desk-scale setup: 64x32
// rasters over an 8 m x +-28 deg wedge, 16x28 detection grid, 3-TX MIMO.
struct PipelineConfig {
    std::string dataset_dir;
    std::string checkpoint;
    std::string out_dir;

    net::NetworkConfig network = net::NetworkConfig::desk();
    LossConfig loss;
    radar::MimoConfig mimo{3, 10, 32};
    CameraSetup camera;
    geom::BevGridSpec bev{0.5, 8.0, -4.0, 4.0, 64, 32};
    geom::PolarGridSpec cam_polar{64, 32, 8.0 / 64, 56.0 / 32, 16.0};
    geom::PolarGridSpec grid{16, 28, 0.5, 2.0, 14.0};
    SyntheticSceneSpec scene;
    OptimConfig optim;
    SplitConfig split;
    CameraInput camera_input = CameraInput::polar;
    std::string eval_split = "test";
    double decode_threshold = 0.1;
    eval::BoxTemplate box;
    double iou_threshold = 0.5;
    std::size_t n_frames = 64;
    std::uint64_t seed = 1;

    std::size_t n_rx() const { return network.radar_channels / (2 * mimo.n_tx); }

    // Throws on hard errors; returns the MIMO aliasing warning ("" when clean).
    std::string validate() const;
    io::KeyValueFile to_kv() const;
    static PipelineConfig from_kv(const io::KeyValueFile& kv);
    static PipelineConfig load(const std::string& path);
    void save(const std::string& path) const;
};

struct DatasetManifest {
    std::size_t n_frames = 0;
    std::vector<std::string> camera_files;  // relative to the dataset dir
    std::vector<std::string> rd_files;
    std::string gt_csv = "gts.csv";
};

// Net-ready inputs for one frame, rows in bin order (row 0 = nearest range).
struct FrameTensors {
    Tensor camera;  // (3, cam_h, cam_w)
    Tensor radar;   // (radar_channels, radar_r, radar_d)
};

struct Dataset {
    std::string dir;
    DatasetManifest manifest;
    std::vector<FrameTensors> frames;
    std::vector<std::vector<eval::GtObject>> gts;
};

// Renders the camera view of one scene: textured ground, sky above the
// horizon, and one bright square per object.
RgbImage render_camera_scene(const CameraSetup& cam, const std::vector<eval::GtObject>& objects,
                             double marker_half_m);

// Camera image -> ground warp -> (polar or cartesian) raster -> (3, H, W)
// tensor with rows flipped to bin order.
Tensor preprocess_camera(const RgbImage& img, const PipelineConfig& cfg);

// RD cube -> stacked re/im channels -> transmitter-gathered tensor.
Tensor preprocess_radar(const radar::RdTensor& cube, const PipelineConfig& cfg);

// Occupancy and regression maps for one frame's ground truth.
TargetMaps targets_from_gts(const std::vector<eval::GtObject>& gts,
                            const geom::PolarGridSpec& grid);

// Writes camera PPMs, RD tensors, a ground-truth CSV, and manifest.kv
// (which embeds the generating config). Deterministic per cfg.seed.
DatasetManifest generate_synthetic_dataset(const PipelineConfig& cfg, std::size_t n_frames,
                                           const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dataset_dir);

// Loads and preprocesses every frame up front.
Dataset load_dataset(const PipelineConfig& cfg, const std::string& dataset_dir);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

// Seeded random split; bucket sizes are the rounded fractions of n.
SplitIndices split_dataset(std::size_t n, const SplitConfig& split, std::uint64_t seed);

struct TrainSummary {
    std::size_t epochs = 0;
    std::size_t steps = 0;
    double final_loss = 0.0;
    std::vector<double> epoch_loss;
    std::string checkpoint_path;
};

// Adam training with gradient accumulation over the configured batch size and
// the staircase learning-rate schedule. Writes the checkpoint and a log under
// cfg.out_dir every epoch. Throws on non-finite loss.
TrainSummary train_model(const PipelineConfig& cfg);

// Eval-mode forward + decode for the given frames (original dataset indices).
std::vector<std::vector<eval::Detection>> infer_detections(net::Model& model, const Dataset& ds,
                                                           const std::vector<std::size_t>& indices,
                                                           double decode_threshold,
                                                           const geom::PolarGridSpec& grid);

// Runs the checkpoint over the whole dataset and writes detections.csv.
std::string run_infer(const PipelineConfig& cfg);

// Runs the checkpoint over the configured split and writes detections.csv,
// metrics.txt, metrics.kv, and an overlay image for the first frame.
eval::MetricsReport run_eval(const PipelineConfig& cfg);

// Per-frame wall-clock forward+decode timing, single-threaded.
eval::BenchmarkReport benchmark_model(net::Model& model, const Dataset& ds,
                                      const PipelineConfig& cfg);
eval::BenchmarkReport run_bench(const PipelineConfig& cfg);

// Draws ground-truth (green) and predicted (blue) cross markers onto a polar
// display raster and writes a PPM.
void export_polar_overlay(RgbImage polar, const std::vector<eval::Detection>& dets,
                          const std::vector<eval::GtObject>& gts,
                          const geom::PolarGridSpec& raster, const std::string& path);

// Step-1/Step-2 debug: writes camera.ppm, bev.ppm, and polar.ppm for one
// frame (dataset frame 0, or a freshly rendered scene when no dataset is
// configured).
void run_warp(const PipelineConfig& cfg);

}  // namespace polarfuse::pipeline
