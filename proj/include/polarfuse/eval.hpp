#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "polarfuse/fusion.hpp"
#include "polarfuse/geometry.hpp"
#include "polarfuse/kvfile.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse::eval {

// One detected object in polar ground coordinates plus its source cell.
struct Detection {
    double range_m = 0.0;
    double azimuth_deg = 0.0;
    double confidence = 0.0;
    std::size_t cell_i = 0;
    std::size_t cell_j = 0;
};

struct GtObject {
    double range_m = 0.0;
    double azimuth_deg = 0.0;
};

// Fixed vehicle footprint that turns point labels into boxes for IoU tests.
struct BoxTemplate {
    double length_m = 4.0;  // along x (forward)
    double width_m = 1.8;   // along y
    void validate() const;
};

// Axis-aligned ground-plane rectangle in meters.
struct Rect {
    double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
    double area() const { return (x1 - x0) * (y1 - y0); }
};

// Rectangle of the template's footprint centered at (r cos th, r sin th).
Rect detection_box(double range_m, double azimuth_deg, const BoxTemplate& tpl);

// area(a intersect b) / area(a union b). Throws on zero-area input.
double iou(const Rect& a, const Rect& b);

// Cells at or above the confidence threshold that win a 3x3 local-max test
// (ties go to the lower (i, j) in row-major order) become detections. Range
// and azimuth are read from the regression channels at the winning cell and
// clamped into the grid's physical extent. cls is (1, R, A), reg (2, R, A)
// with channel 0 range and channel 1 azimuth; threshold must lie in (0, 1).
std::vector<Detection> decode_detections(const Tensor& cls, const Tensor& reg,
                                         double confidence_threshold,
                                         const geom::PolarGridSpec& grid);
std::vector<Detection> decode_detections(const net::DetectionMapPair& maps,
                                         double confidence_threshold,
                                         const geom::PolarGridSpec& grid);

struct MatchResult {
    std::vector<std::pair<std::size_t, std::size_t>> tp;  // (pred, gt) index pairs
    std::vector<std::size_t> fp;                          // unmatched prediction indices
    std::vector<std::size_t> fn;                          // unmatched ground-truth indices
};

// Greedy matching in descending confidence order (stable on ties): each
// prediction claims the unmatched ground truth of highest IoU when that IoU
// reaches the threshold, and every ground truth is claimed at most once.
MatchResult match_detections(const std::vector<Detection>& preds,
                             const std::vector<GtObject>& gts, double iou_threshold = 0.5,
                             const BoxTemplate& tpl = {});

struct EvalFrame {
    std::vector<Detection> preds;
    std::vector<GtObject> gts;
};

struct ThresholdRow {
    double threshold = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0;          // fraction in [0, 1]
    double recall = 0.0;             // fraction in [0, 1]
    double range_error_m = 0.0;      // mean over TP pairs; NaN when tp == 0
    double azimuth_error_deg = 0.0;  // mean over TP pairs; NaN when tp == 0
};

struct MetricsReport {
    double ap = 0.0;  // percent
    double ar = 0.0;  // percent
    double f1 = 0.0;  // percent
    double range_error_m = 0.0;      // NaN when no threshold produced a match
    double azimuth_error_deg = 0.0;  // NaN when no threshold produced a match
    std::vector<ThresholdRow> rows;

    std::string table() const;
    io::KeyValueFile to_kv() const;
};

struct BenchmarkReport {
    double params_millions = 0.0;
    double fps_mean = 0.0;
    double fps_sigma = 0.0;
    double model_file_mb = 0.0;

    std::string table() const;
    io::KeyValueFile to_kv() const;
};

// 2*AP*AR/(AP+AR) on percent inputs; 0 when AP+AR = 0.
double f1_score(double ap_percent, double ar_percent);

// The nine confidence thresholds 0.1, 0.2, ..., 0.9.
std::vector<double> sweep_thresholds();

// Sweeps the confidence thresholds, aggregates matches over all frames at
// each threshold, and averages precision, recall, and TP-only localization
// errors across the sweep.
MetricsReport evaluate_frames(const std::vector<EvalFrame>& frames, double iou_threshold = 0.5,
                              const BoxTemplate& tpl = {});

// CSV io. Header "frame_id,range_m,azimuth_deg,confidence" for predictions;
// ground truth omits the confidence column. frame_id is the frame index, so
// loaders size their result to the largest id + 1 (at least min_frames).
void save_predictions_csv(const std::string& path,
                          const std::vector<std::vector<Detection>>& frames);
std::vector<std::vector<Detection>> load_predictions_csv(const std::string& path,
                                                         std::size_t min_frames = 0);
void save_ground_truth_csv(const std::string& path,
                           const std::vector<std::vector<GtObject>>& frames);
std::vector<std::vector<GtObject>> load_ground_truth_csv(const std::string& path,
                                                         std::size_t min_frames = 0);

}  // namespace polarfuse::eval
