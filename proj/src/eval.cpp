#include "polarfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace polarfuse::eval {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Summing sorted terms keeps aggregate errors independent of frame order.
double ordered_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    return std::accumulate(terms.begin(), terms.end(), 0.0);
}

std::string format_line(const char* fmt, ...) {
    char buf[256];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    return buf;
}

std::string err_text(double v) {
    if (std::isnan(v)) return "undefined";
    return format_line("%.4f", v);
}

}  // namespace

void BoxTemplate::validate() const {
    if (length_m <= 0.0 || width_m <= 0.0)
        throw std::invalid_argument("box template: length and width must be positive");
}

Rect detection_box(double range_m, double azimuth_deg, const BoxTemplate& tpl) {
    tpl.validate();
    const double x = range_m * std::cos(azimuth_deg * kDeg);
    const double y = range_m * std::sin(azimuth_deg * kDeg);
    return {x - 0.5 * tpl.length_m, x + 0.5 * tpl.length_m,
            y - 0.5 * tpl.width_m, y + 0.5 * tpl.width_m};
}

double iou(const Rect& a, const Rect& b) {
    const double aa = a.area(), ab = b.area();
    if (aa <= 0.0 || ab <= 0.0) throw std::invalid_argument("iou: zero-area rectangle");
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (aa + ab - inter);
}

std::vector<Detection> decode_detections(const Tensor& cls, const Tensor& reg,
                                         double confidence_threshold,
                                         const geom::PolarGridSpec& grid) {
    if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0))
        throw std::invalid_argument("decode: confidence threshold must lie in (0, 1)");
    grid.validate();
    const std::size_t R = grid.n_range, A = grid.n_azimuth;
    if (cls.shape != std::vector<std::size_t>{1, R, A})
        throw std::invalid_argument("decode: cls map must be (1, " + std::to_string(R) + ", " +
                                    std::to_string(A) + "), got " + shape_to_string(cls.shape));
    if (reg.shape != std::vector<std::size_t>{2, R, A})
        throw std::invalid_argument("decode: reg map must be (2, " + std::to_string(R) + ", " +
                                    std::to_string(A) + "), got " + shape_to_string(reg.shape));

    const double az_lo = (0.0 - grid.center_offset) * grid.azimuth_res;
    const double az_hi = (static_cast<double>(A) - grid.center_offset) * grid.azimuth_res;
    auto conf_at = [&](std::size_t i, std::size_t j) {
        return static_cast<double>(cls.data[i * A + j]);
    };

    std::vector<Detection> out;
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < A; ++j) {
            const double c = conf_at(i, j);
            if (c < confidence_threshold) continue;
            bool peak = true;
            for (long long di = -1; di <= 1 && peak; ++di)
                for (long long dj = -1; dj <= 1 && peak; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    const long long ni = static_cast<long long>(i) + di;
                    const long long nj = static_cast<long long>(j) + dj;
                    if (ni < 0 || nj < 0 || ni >= static_cast<long long>(R) ||
                        nj >= static_cast<long long>(A))
                        continue;
                    const double q = conf_at(static_cast<std::size_t>(ni),
                                             static_cast<std::size_t>(nj));
                    // A tie only loses against a neighbor earlier in row-major order.
                    const bool earlier = di < 0 || (di == 0 && dj < 0);
                    if (earlier ? c <= q : c < q) peak = false;
                }
            if (!peak) continue;
            Detection d;
            d.range_m = clampd(reg.data[i * A + j], 0.0, grid.max_range());
            d.azimuth_deg = clampd(reg.data[(R + i) * A + j], az_lo, az_hi);
            d.confidence = c;
            d.cell_i = i;
            d.cell_j = j;
            out.push_back(d);
        }
    return out;
}

std::vector<Detection> decode_detections(const net::DetectionMapPair& maps,
                                         double confidence_threshold,
                                         const geom::PolarGridSpec& grid) {
    return decode_detections(maps.cls.value(), maps.reg.value(), confidence_threshold, grid);
}

MatchResult match_detections(const std::vector<Detection>& preds,
                             const std::vector<GtObject>& gts, double iou_threshold,
                             const BoxTemplate& tpl) {
    tpl.validate();
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw std::invalid_argument("match: IoU threshold must lie in (0, 1]");

    std::vector<Rect> gt_boxes(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g)
        gt_boxes[g] = detection_box(gts[g].range_m, gts[g].azimuth_deg, tpl);

    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].confidence > preds[b].confidence;
    });

    MatchResult res;
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t p : order) {
        const Rect box = detection_box(preds[p].range_m, preds[p].azimuth_deg, tpl);
        double best = -1.0;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const double v = iou(box, gt_boxes[g]);
            if (v > best) {
                best = v;
                best_g = g;
            }
        }
        if (best_g < gts.size() && best >= iou_threshold) {
            taken[best_g] = true;
            res.tp.emplace_back(p, best_g);
        } else {
            res.fp.push_back(p);
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g)
        if (!taken[g]) res.fn.push_back(g);
    std::sort(res.fp.begin(), res.fp.end());
    return res;
}

double f1_score(double ap_percent, double ar_percent) {
    if (!(ap_percent >= 0.0 && ap_percent <= 100.0) ||
        !(ar_percent >= 0.0 && ar_percent <= 100.0))
        throw std::invalid_argument("f1: AP and AR must lie in [0, 100]");
    const double s = ap_percent + ar_percent;
    if (s <= 0.0) return 0.0;
    return 2.0 * ap_percent * ar_percent / s;
}

std::vector<double> sweep_thresholds() {
    std::vector<double> out(9);
    for (int k = 1; k <= 9; ++k) out[k - 1] = k / 10.0;
    return out;
}

MetricsReport evaluate_frames(const std::vector<EvalFrame>& frames, double iou_threshold,
                              const BoxTemplate& tpl) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    MetricsReport rep;
    double p_sum = 0.0, r_sum = 0.0;
    std::vector<double> re_rows, ae_rows;
    for (double t : sweep_thresholds()) {
        ThresholdRow row;
        row.threshold = t;
        std::vector<double> re_terms, ae_terms;
        for (const EvalFrame& f : frames) {
            std::vector<Detection> kept;
            for (const Detection& d : f.preds)
                if (d.confidence >= t) kept.push_back(d);
            const MatchResult m = match_detections(kept, f.gts, iou_threshold, tpl);
            row.tp += m.tp.size();
            row.fp += m.fp.size();
            row.fn += m.fn.size();
            for (auto [p, g] : m.tp) {
                re_terms.push_back(std::abs(kept[p].range_m - f.gts[g].range_m));
                ae_terms.push_back(std::abs(kept[p].azimuth_deg - f.gts[g].azimuth_deg));
            }
        }
        row.precision = row.tp + row.fp > 0
                            ? static_cast<double>(row.tp) / static_cast<double>(row.tp + row.fp)
                            : (row.fn == 0 ? 1.0 : 0.0);
        row.recall = row.tp + row.fn > 0
                         ? static_cast<double>(row.tp) / static_cast<double>(row.tp + row.fn)
                         : 1.0;
        if (row.tp > 0) {
            row.range_error_m = ordered_sum(re_terms) / static_cast<double>(row.tp);
            row.azimuth_error_deg = ordered_sum(ae_terms) / static_cast<double>(row.tp);
            re_rows.push_back(row.range_error_m);
            ae_rows.push_back(row.azimuth_error_deg);
        } else {
            row.range_error_m = nan;
            row.azimuth_error_deg = nan;
        }
        p_sum += row.precision;
        r_sum += row.recall;
        rep.rows.push_back(row);
    }
    const double n = static_cast<double>(rep.rows.size());
    rep.ap = 100.0 * p_sum / n;
    rep.ar = 100.0 * r_sum / n;
    rep.f1 = f1_score(rep.ap, rep.ar);
    rep.range_error_m =
        re_rows.empty() ? nan : ordered_sum(re_rows) / static_cast<double>(re_rows.size());
    rep.azimuth_error_deg =
        ae_rows.empty() ? nan : ordered_sum(ae_rows) / static_cast<double>(ae_rows.size());
    return rep;
}

std::string MetricsReport::table() const {
    std::string s = "thr    tp     fp     fn   precision  recall  range_err_m  azimuth_err_deg\n";
    for (const ThresholdRow& r : rows) {
        s += format_line("%.1f  %5zu  %5zu  %5zu     %.4f  %.4f", r.threshold, r.tp, r.fp,
                         r.fn, r.precision, r.recall);
        s += format_line("  %11s  %15s\n", err_text(r.range_error_m).c_str(),
                         err_text(r.azimuth_error_deg).c_str());
    }
    s += format_line("AP = %.2f %%   AR = %.2f %%   F1 = %.2f %%\n", ap, ar, f1);
    s += format_line("RE = %s m   AE = %s deg\n", err_text(range_error_m).c_str(),
                     err_text(azimuth_error_deg).c_str());
    return s;
}

io::KeyValueFile MetricsReport::to_kv() const {
    io::KeyValueFile kv;
    kv.set_double("metrics.ap_percent", ap);
    kv.set_double("metrics.ar_percent", ar);
    kv.set_double("metrics.f1_percent", f1);
    kv.set_double("metrics.range_error_m", range_error_m);
    kv.set_double("metrics.azimuth_error_deg", azimuth_error_deg);
    std::vector<double> t, tp, fp, fn, prec, rec, re, ae;
    for (const ThresholdRow& r : rows) {
        t.push_back(r.threshold);
        tp.push_back(static_cast<double>(r.tp));
        fp.push_back(static_cast<double>(r.fp));
        fn.push_back(static_cast<double>(r.fn));
        prec.push_back(r.precision);
        rec.push_back(r.recall);
        re.push_back(r.range_error_m);
        ae.push_back(r.azimuth_error_deg);
    }
    kv.set_doubles("thresholds.threshold", t);
    kv.set_doubles("thresholds.tp", tp);
    kv.set_doubles("thresholds.fp", fp);
    kv.set_doubles("thresholds.fn", fn);
    kv.set_doubles("thresholds.precision", prec);
    kv.set_doubles("thresholds.recall", rec);
    kv.set_doubles("thresholds.range_error_m", re);
    kv.set_doubles("thresholds.azimuth_error_deg", ae);
    return kv;
}

std::string BenchmarkReport::table() const {
    std::string s;
    s += format_line("parameters    %.3f M\n", params_millions);
    s += format_line("fps mean      %.3f\n", fps_mean);
    s += format_line("fps sigma     %.3f\n", fps_sigma);
    s += format_line("model size    %.3f MB\n", model_file_mb);
    return s;
}

io::KeyValueFile BenchmarkReport::to_kv() const {
    io::KeyValueFile kv;
    kv.set_double("bench.params_millions", params_millions);
    kv.set_double("bench.fps_mean", fps_mean);
    kv.set_double("bench.fps_sigma", fps_sigma);
    kv.set_double("bench.model_file_mb", model_file_mb);
    return kv;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

double parse_field(const std::string& tok, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw std::runtime_error(where + ": bad number '" + tok + "'");
    }
    if (used != tok.size()) throw std::runtime_error(where + ": bad number '" + tok + "'");
    return v;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return in;
}

void check_header(std::ifstream& in, const std::string& path, const std::string& expected) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    if (strip_cr(line) != expected)
        throw std::runtime_error(path + ": expected header '" + expected + "', got '" + line +
                                 "'");
}

}  // namespace

void save_predictions_csv(const std::string& path,
                          const std::vector<std::vector<Detection>>& frames) {
    std::ofstream out = open_out(path);
    out << "frame_id,range_m,azimuth_deg,confidence\n";
    for (std::size_t f = 0; f < frames.size(); ++f)
        for (const Detection& d : frames[f])
            out << f << ',' << format_line("%.17g,%.17g,%.17g", d.range_m, d.azimuth_deg,
                                           d.confidence)
                << '\n';
    if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<std::vector<Detection>> load_predictions_csv(const std::string& path,
                                                         std::size_t min_frames) {
    std::ifstream in = open_in(path);
    check_header(in, path, "frame_id,range_m,azimuth_deg,confidence");
    std::vector<std::vector<Detection>> frames(min_frames);
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const auto tok = split_csv(line);
        if (tok.size() != 4) throw std::runtime_error(where + ": expected 4 fields");
        const auto id = static_cast<std::size_t>(parse_field(tok[0], where));
        if (id >= frames.size()) frames.resize(id + 1);
        Detection d;
        d.range_m = parse_field(tok[1], where);
        d.azimuth_deg = parse_field(tok[2], where);
        d.confidence = parse_field(tok[3], where);
        frames[id].push_back(d);
    }
    return frames;
}

void save_ground_truth_csv(const std::string& path,
                           const std::vector<std::vector<GtObject>>& frames) {
    std::ofstream out = open_out(path);
    out << "frame_id,range_m,azimuth_deg\n";
    for (std::size_t f = 0; f < frames.size(); ++f)
        for (const GtObject& g : frames[f])
            out << f << ',' << format_line("%.17g,%.17g", g.range_m, g.azimuth_deg) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<std::vector<GtObject>> load_ground_truth_csv(const std::string& path,
                                                         std::size_t min_frames) {
    std::ifstream in = open_in(path);
    check_header(in, path, "frame_id,range_m,azimuth_deg");
    std::vector<std::vector<GtObject>> frames(min_frames);
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const auto tok = split_csv(line);
        if (tok.size() != 3) throw std::runtime_error(where + ": expected 3 fields");
        const auto id = static_cast<std::size_t>(parse_field(tok[0], where));
        if (id >= frames.size()) frames.resize(id + 1);
        GtObject g;
        g.range_m = parse_field(tok[1], where);
        g.azimuth_deg = parse_field(tok[2], where);
        frames[id].push_back(g);
    }
    return frames;
}

}  // namespace polarfuse::eval
