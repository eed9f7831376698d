#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "polarfuse/eval.hpp"
#include "polarfuse/geometry.hpp"
#include "polarfuse/tensor.hpp"

using namespace polarfuse;
using namespace polarfuse::eval;

namespace {

geom::PolarGridSpec full_grid() {
    geom::PolarGridSpec g;
    g.n_range = 128;
    g.n_azimuth = 224;
    g.range_res = 0.8;
    g.azimuth_res = 0.8;
    g.center_offset = 112.0;
    return g;
}

geom::PolarGridSpec desk_grid() {
    geom::PolarGridSpec g;
    g.n_range = 16;
    g.n_azimuth = 28;
    g.range_res = 0.5;
    g.azimuth_res = 2.0;
    g.center_offset = 14.0;
    return g;
}

std::string tmp_path(const std::string& name) {
    return std::string("/tmp/polarfuse_eval_") + name;
}

// Peak rule restated independently: a cell survives when it is the argmax of
// its own 3x3 neighborhood under the key (value descending, row-major index
// ascending).
std::vector<std::pair<std::size_t, std::size_t>> oracle_peaks(const Tensor& cls,
                                                              double threshold) {
    const std::size_t R = cls.shape[1], A = cls.shape[2];
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < A; ++j) {
            if (cls.data[i * A + j] < threshold) continue;
            double best = -1.0;
            std::size_t best_flat = R * A;
            for (long long ni = (long long)i - 1; ni <= (long long)i + 1; ++ni)
                for (long long nj = (long long)j - 1; nj <= (long long)j + 1; ++nj) {
                    if (ni < 0 || nj < 0 || ni >= (long long)R || nj >= (long long)A) continue;
                    const std::size_t flat = (std::size_t)ni * A + (std::size_t)nj;
                    if (cls.data[flat] > best ||
                        (cls.data[flat] == best && flat < best_flat)) {
                        best = cls.data[flat];
                        best_flat = flat;
                    }
                }
            if (best_flat == i * A + j) out.emplace_back(i, j);
        }
    return out;
}

// Corner arithmetic written out by hand, no shared helpers.
double oracle_iou(double r1, double t1, double r2, double t2, const BoxTemplate& tpl) {
    const double d = 3.14159265358979323846 / 180.0;
    const double ax = r1 * std::cos(t1 * d), ay = r1 * std::sin(t1 * d);
    const double bx = r2 * std::cos(t2 * d), by = r2 * std::sin(t2 * d);
    const double hl = tpl.length_m / 2, hw = tpl.width_m / 2;
    const double ix = std::min(ax + hl, bx + hl) - std::max(ax - hl, bx - hl);
    const double iy = std::min(ay + hw, by + hw) - std::max(ay - hw, by - hw);
    if (ix <= 0 || iy <= 0) return 0.0;
    const double area = tpl.length_m * tpl.width_m;
    return ix * iy / (2 * area - ix * iy);
}

struct OracleMatch {
    std::vector<std::pair<std::size_t, std::size_t>> tp;
    std::vector<std::size_t> fp, fn;
};

// Greedy matcher rebuilt from the stated rule with explicit index sorting.
OracleMatch oracle_match(const std::vector<Detection>& preds, const std::vector<GtObject>& gts,
                         double iou_thr, const BoxTemplate& tpl) {
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (preds[a].confidence != preds[b].confidence)
            return preds[a].confidence > preds[b].confidence;
        return a < b;
    });
    OracleMatch res;
    std::vector<char> used(gts.size(), 0);
    for (std::size_t p : order) {
        std::size_t pick = gts.size();
        double best = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double v = oracle_iou(preds[p].range_m, preds[p].azimuth_deg, gts[g].range_m,
                                        gts[g].azimuth_deg, tpl);
            if (v > best) {
                best = v;
                pick = g;
            }
        }
        if (pick != gts.size() && best >= iou_thr) {
            used[pick] = 1;
            res.tp.emplace_back(p, pick);
        } else {
            res.fp.push_back(p);
        }
    }
    std::sort(res.fp.begin(), res.fp.end());
    for (std::size_t g = 0; g < gts.size(); ++g)
        if (!used[g]) res.fn.push_back(g);
    return res;
}

struct OracleSweep {
    std::vector<double> precision, recall;
    std::vector<std::size_t> tp, fp, fn;
    double ap = 0, ar = 0, f1 = 0;
    double re = 0, ae = 0;
    std::size_t re_defined = 0;
};

OracleSweep oracle_sweep(const std::vector<EvalFrame>& frames, double iou_thr,
                         const BoxTemplate& tpl) {
    OracleSweep s;
    for (int k = 1; k <= 9; ++k) {
        const double t = k / 10.0;
        std::size_t tp = 0, fp = 0, fn = 0;
        double re_sum = 0, ae_sum = 0;
        for (const EvalFrame& f : frames) {
            std::vector<Detection> kept;
            for (const Detection& d : f.preds)
                if (d.confidence >= t) kept.push_back(d);
            const OracleMatch m = oracle_match(kept, f.gts, iou_thr, tpl);
            tp += m.tp.size();
            fp += m.fp.size();
            fn += m.fn.size();
            for (auto [p, g] : m.tp) {
                re_sum += std::abs(kept[p].range_m - f.gts[g].range_m);
                ae_sum += std::abs(kept[p].azimuth_deg - f.gts[g].azimuth_deg);
            }
        }
        s.tp.push_back(tp);
        s.fp.push_back(fp);
        s.fn.push_back(fn);
        s.precision.push_back(tp + fp > 0 ? double(tp) / double(tp + fp)
                                          : (fn == 0 ? 1.0 : 0.0));
        s.recall.push_back(tp + fn > 0 ? double(tp) / double(tp + fn) : 1.0);
        if (tp > 0) {
            s.re += re_sum / double(tp);
            s.ae += ae_sum / double(tp);
            ++s.re_defined;
        }
    }
    for (int k = 0; k < 9; ++k) {
        s.ap += s.precision[k];
        s.ar += s.recall[k];
    }
    s.ap *= 100.0 / 9.0;
    s.ar *= 100.0 / 9.0;
    s.f1 = s.ap + s.ar > 0 ? 2 * s.ap * s.ar / (s.ap + s.ar) : 0.0;
    if (s.re_defined) {
        s.re /= double(s.re_defined);
        s.ae /= double(s.re_defined);
    }
    return s;
}

std::vector<EvalFrame> random_scene_set(std::mt19937& rng, std::size_t n_frames,
                                        double max_objects) {
    std::uniform_real_distribution<double> ur(2.0, 90.0);
    std::uniform_real_distribution<double> ua(-80.0, 80.0);
    std::uniform_real_distribution<double> uc(0.02, 0.98);
    std::uniform_real_distribution<double> jitter(-2.5, 2.5);
    std::uniform_int_distribution<int> nobj(0, (int)max_objects);
    std::bernoulli_distribution drop(0.25), spawn(0.3);
    std::vector<EvalFrame> frames(n_frames);
    for (EvalFrame& f : frames) {
        const int n = nobj(rng);
        for (int k = 0; k < n; ++k) {
            GtObject g{ur(rng), ua(rng)};
            f.gts.push_back(g);
            if (!drop(rng)) {
                Detection d;
                d.range_m = g.range_m + jitter(rng) * 0.4;
                d.azimuth_deg = g.azimuth_deg + jitter(rng);
                d.confidence = uc(rng);
                f.preds.push_back(d);
            }
            if (spawn(rng)) {
                Detection d;
                d.range_m = ur(rng);
                d.azimuth_deg = ua(rng);
                d.confidence = uc(rng);
                f.preds.push_back(d);
            }
        }
    }
    return frames;
}

}  // namespace

TEST_CASE("box construction from polar coordinates") {
    BoxTemplate tpl{4.0, 1.8};

    SUBCASE("straight ahead") {
        const Rect r = detection_box(10.0, 0.0, tpl);
        CHECK(r.x0 == doctest::Approx(8.0));
        CHECK(r.x1 == doctest::Approx(12.0));
        CHECK(r.y0 == doctest::Approx(-0.9));
        CHECK(r.y1 == doctest::Approx(0.9));
    }

    SUBCASE("ninety degrees puts the center on the y axis") {
        const Rect r = detection_box(10.0, 90.0, tpl);
        CHECK((r.x0 + r.x1) / 2 == doctest::Approx(0.0).epsilon(1e-12));
        CHECK((r.y0 + r.y1) / 2 == doctest::Approx(10.0));
    }

    SUBCASE("random boxes match scalar recomputation exactly") {
        std::mt19937 rng(11);
        std::uniform_real_distribution<double> ur(0.5, 100.0), ua(-89.0, 89.0);
        for (int k = 0; k < 200; ++k) {
            const double r = ur(rng), th = ua(rng);
            const Rect box = detection_box(r, th, tpl);
            const double x = r * std::cos(th * (3.14159265358979323846 / 180.0));
            const double y = r * std::sin(th * (3.14159265358979323846 / 180.0));
            CHECK(box.x0 == x - 2.0);
            CHECK(box.x1 == x + 2.0);
            CHECK(box.y0 == y - 0.9);
            CHECK(box.y1 == y + 0.9);
        }
    }

    SUBCASE("degenerate template rejected") {
        CHECK_THROWS_AS(detection_box(1.0, 0.0, BoxTemplate{0.0, 1.0}), std::invalid_argument);
        CHECK_THROWS_AS(detection_box(1.0, 0.0, BoxTemplate{1.0, -2.0}), std::invalid_argument);
    }
}

TEST_CASE("iou fixtures and properties") {
    const Rect a{0, 1, 0, 1};

    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Rect{5, 6, 5, 6}) == 0.0);
    CHECK(iou(a, Rect{2, 3, 0, 1}) == 0.0);
    CHECK(iou(a, Rect{0.5, 1.5, 0, 1}) == 0.5 / 1.5);
    CHECK(iou(a, Rect{1, 2, 0, 1}) == 0.0);

    CHECK_THROWS_AS(iou(a, Rect{0, 0, 0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(iou(Rect{0, 1, 1, 1}, a), std::invalid_argument);

    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-5.0, 5.0), w(0.1, 4.0);
    for (int k = 0; k < 300; ++k) {
        const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
        const Rect p{ax, ax + w(rng), ay, ay + w(rng)};
        const Rect q{bx, bx + w(rng), by, by + w(rng)};
        const double v = iou(p, q);
        CHECK(v == iou(q, p));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("decoding fixtures") {
    const auto grid = full_grid();
    Tensor cls({1, 128, 224});
    Tensor reg({2, 128, 224});

    SUBCASE("all-zero map decodes to nothing") {
        CHECK(decode_detections(cls, reg, 0.5, grid).empty());
    }

    SUBCASE("single confident cell carries its regression values") {
        cls.data[40 * 224 + 100] = 0.9f;
        reg.data[40 * 224 + 100] = 12.3f;
        reg.data[(128 + 40) * 224 + 100] = -4.0f;
        const auto dets = decode_detections(cls, reg, 0.5, grid);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].range_m == doctest::Approx(12.3).epsilon(1e-6));
        CHECK(dets[0].azimuth_deg == doctest::Approx(-4.0).epsilon(1e-6));
        CHECK(dets[0].confidence == doctest::Approx(0.9).epsilon(1e-6));
        CHECK(dets[0].cell_i == 40);
        CHECK(dets[0].cell_j == 100);
    }

    SUBCASE("weaker neighbor is suppressed") {
        cls.data[40 * 224 + 100] = 0.9f;
        cls.data[40 * 224 + 101] = 0.8f;
        const auto dets = decode_detections(cls, reg, 0.5, grid);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].cell_j == 100);
    }

    SUBCASE("tied neighbors resolve to the lower index") {
        cls.data[40 * 224 + 100] = 0.9f;
        cls.data[40 * 224 + 101] = 0.9f;
        auto dets = decode_detections(cls, reg, 0.5, grid);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].cell_i == 40);
        CHECK(dets[0].cell_j == 100);

        cls.data[40 * 224 + 100] = 0.0f;
        cls.data[40 * 224 + 101] = 0.0f;
        cls.data[41 * 224 + 100] = 0.7f;
        cls.data[40 * 224 + 101] = 0.7f;
        dets = decode_detections(cls, reg, 0.5, grid);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].cell_i == 40);
        CHECK(dets[0].cell_j == 101);
    }

    SUBCASE("threshold filters peaks") {
        cls.data[40 * 224 + 100] = 0.49f;
        CHECK(decode_detections(cls, reg, 0.5, grid).empty());
        CHECK(decode_detections(cls, reg, 0.49, grid).size() == 1);
    }

    SUBCASE("out-of-extent regression values are clamped") {
        cls.data[40 * 224 + 100] = 0.9f;
        reg.data[40 * 224 + 100] = -5.0f;
        reg.data[(128 + 40) * 224 + 100] = 400.0f;
        auto dets = decode_detections(cls, reg, 0.5, grid);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].range_m == 0.0);
        CHECK(dets[0].azimuth_deg == doctest::Approx(112 * 0.8));

        reg.data[40 * 224 + 100] = 5000.0f;
        reg.data[(128 + 40) * 224 + 100] = -400.0f;
        dets = decode_detections(cls, reg, 0.5, grid);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].range_m == doctest::Approx(128 * 0.8));
        CHECK(dets[0].azimuth_deg == doctest::Approx(-112 * 0.8));
    }

    SUBCASE("preconditions") {
        CHECK_THROWS_AS(decode_detections(cls, reg, 0.0, grid), std::invalid_argument);
        CHECK_THROWS_AS(decode_detections(cls, reg, 1.0, grid), std::invalid_argument);
        Tensor bad({1, 64, 224});
        CHECK_THROWS_AS(decode_detections(bad, reg, 0.5, grid), std::invalid_argument);
        Tensor badreg({1, 128, 224});
        CHECK_THROWS_AS(decode_detections(cls, badreg, 0.5, grid), std::invalid_argument);
    }
}

TEST_CASE("decoding agrees with a brute-force peak scan") {
    const auto grid = desk_grid();
    std::mt19937 rng(17);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::uniform_int_distribution<int> quant(0, 8);

    for (int trial = 0; trial < 60; ++trial) {
        Tensor cls({1, 16, 28});
        Tensor reg({2, 16, 28});
        // Quantized values produce plenty of exact ties.
        for (auto& v : cls.data) v = trial % 2 ? u(rng) : quant(rng) / 8.0f;
        for (auto& v : reg.data) v = u(rng) * 8.0f;
        const double thr = 0.25 + 0.5 * u(rng);

        const auto dets = decode_detections(cls, reg, thr, grid);
        const auto peaks = oracle_peaks(cls, thr);
        REQUIRE(dets.size() == peaks.size());
        for (std::size_t k = 0; k < dets.size(); ++k) {
            CHECK(dets[k].cell_i == peaks[k].first);
            CHECK(dets[k].cell_j == peaks[k].second);
            const std::size_t flat = peaks[k].first * 28 + peaks[k].second;
            CHECK(dets[k].confidence == doctest::Approx((double)cls.data[flat]));
            CHECK(dets[k].range_m == doctest::Approx((double)reg.data[flat]));
        }
    }
}

TEST_CASE("greedy matching fixtures") {
    BoxTemplate tpl;

    SUBCASE("perfect one-to-one predictions") {
        std::vector<GtObject> gts{{10, 0}, {20, 15}, {35, -30}};
        std::vector<Detection> preds;
        for (const auto& g : gts) preds.push_back({g.range_m, g.azimuth_deg, 0.9, 0, 0});
        const auto m = match_detections(preds, gts, 0.5, tpl);
        CHECK(m.tp.size() == 3);
        CHECK(m.fp.empty());
        CHECK(m.fn.empty());
        for (auto [p, g] : m.tp) {
            CHECK(preds[p].range_m == gts[g].range_m);
        }
    }

    SUBCASE("prediction without ground truth is a false positive") {
        const auto m = match_detections({{10, 0, 0.9, 0, 0}}, {}, 0.5, tpl);
        CHECK(m.tp.empty());
        CHECK(m.fp == std::vector<std::size_t>{0});
        CHECK(m.fn.empty());
    }

    SUBCASE("missed ground truth is a false negative") {
        const auto m = match_detections({}, {{10, 0}}, 0.5, tpl);
        CHECK(m.tp.empty());
        CHECK(m.fp.empty());
        CHECK(m.fn == std::vector<std::size_t>{0});
    }

    SUBCASE("confidence decides who claims a contested object") {
        std::vector<GtObject> gts{{10, 0}};
        std::vector<Detection> preds{{10.3, 0, 0.6, 0, 0}, {10.0, 0, 0.8, 0, 0}};
        const auto m = match_detections(preds, gts, 0.5, tpl);
        REQUIRE(m.tp.size() == 1);
        CHECK(m.tp[0].first == 1);
        CHECK(m.fp == std::vector<std::size_t>{0});
    }

    SUBCASE("low overlap is rejected by the threshold") {
        const auto m = match_detections({{10, 0, 0.9, 0, 0}}, {{13.5, 0}}, 0.5, tpl);
        CHECK(m.tp.empty());
        CHECK(m.fp.size() == 1);
        CHECK(m.fn.size() == 1);
    }
}

TEST_CASE("greedy matching agrees with an independent reimplementation") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> ur(2.0, 90.0), ua(-80.0, 80.0), uc(0.01, 0.99);
    std::uniform_int_distribution<int> n(0, 20);
    BoxTemplate tpl;

    for (int trial = 0; trial < 150; ++trial) {
        std::vector<GtObject> gts;
        std::vector<Detection> preds;
        const int ng = n(rng), np = n(rng);
        for (int k = 0; k < ng; ++k) gts.push_back({ur(rng), ua(rng)});
        for (int k = 0; k < np; ++k) {
            Detection d;
            if (!gts.empty() && k % 2 == 0) {
                const auto& g = gts[(std::size_t)k % gts.size()];
                d.range_m = g.range_m + (uc(rng) - 0.5) * 4.0;
                d.azimuth_deg = g.azimuth_deg + (uc(rng) - 0.5) * 6.0;
            } else {
                d.range_m = ur(rng);
                d.azimuth_deg = ua(rng);
            }
            d.confidence = uc(rng);
            preds.push_back(d);
        }
        const auto got = match_detections(preds, gts, 0.5, tpl);
        const auto want = oracle_match(preds, gts, 0.5, tpl);
        CHECK(got.tp == want.tp);
        CHECK(got.fp == want.fp);
        CHECK(got.fn == want.fn);

        std::vector<char> seen(gts.size(), 0);
        for (auto [p, g] : got.tp) {
            CHECK(!seen[g]);
            seen[g] = 1;
        }
        CHECK(got.tp.size() + got.fp.size() == preds.size());
        CHECK(got.tp.size() + got.fn.size() == gts.size());
    }
}

TEST_CASE("harmonic mean of AP and AR") {
    CHECK(f1_score(95.75, 91.35) == doctest::Approx(93.49).epsilon(1e-4));
    CHECK(f1_score(93.45, 83.35) == doctest::Approx(88.11).epsilon(1e-4));
    CHECK(f1_score(0.0, 0.0) == 0.0);
    CHECK(f1_score(0.0, 50.0) == 0.0);

    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int k = 0; k < 50; ++k) {
        const double x = u(rng);
        CHECK(f1_score(x, x) == doctest::Approx(x).epsilon(1e-12));
        const double a = u(rng), b = u(rng);
        CHECK(f1_score(a, b) <= std::max(a, b));
    }

    CHECK_THROWS_AS(f1_score(-1.0, 50.0), std::invalid_argument);
    CHECK_THROWS_AS(f1_score(50.0, 101.0), std::invalid_argument);
}

TEST_CASE("threshold sweep fixtures") {
    SUBCASE("perfect predictions give perfect scores") {
        std::vector<EvalFrame> frames(3);
        std::mt19937 rng(5);
        std::uniform_real_distribution<double> ur(5.0, 80.0), ua(-60.0, 60.0);
        for (auto& f : frames)
            for (int k = 0; k < 4; ++k) {
                GtObject g{ur(rng), ua(rng)};
                f.gts.push_back(g);
                f.preds.push_back({g.range_m, g.azimuth_deg, 1.0, 0, 0});
            }
        const auto rep = evaluate_frames(frames);
        CHECK(rep.ap == doctest::Approx(100.0));
        CHECK(rep.ar == doctest::Approx(100.0));
        CHECK(rep.f1 == doctest::Approx(100.0));
        CHECK(rep.range_error_m == doctest::Approx(0.0));
        CHECK(rep.azimuth_error_deg == doctest::Approx(0.0));
        REQUIRE(rep.rows.size() == 9);
        for (const auto& row : rep.rows) {
            CHECK(row.precision == 1.0);
            CHECK(row.recall == 1.0);
        }
    }

    SUBCASE("no predictions against nonempty ground truth") {
        std::vector<EvalFrame> frames(2);
        frames[0].gts.push_back({10, 0});
        frames[1].gts.push_back({20, 5});
        const auto rep = evaluate_frames(frames);
        CHECK(rep.ar == 0.0);
        CHECK(rep.ap == 0.0);
        CHECK(rep.f1 == 0.0);
        CHECK(std::isnan(rep.range_error_m));
        CHECK(std::isnan(rep.azimuth_error_deg));
    }

    SUBCASE("empty scene set is vacuously perfect") {
        std::vector<EvalFrame> frames(3);
        const auto rep = evaluate_frames(frames);
        CHECK(rep.ap == 100.0);
        CHECK(rep.ar == 100.0);
        CHECK(rep.f1 == 100.0);
        CHECK(std::isnan(rep.range_error_m));
    }

    SUBCASE("single object with a half-meter range miss") {
        std::vector<EvalFrame> frames(1);
        frames[0].gts.push_back({10.0, 0.0});
        frames[0].preds.push_back({10.5, 0.0, 0.95, 0, 0});
        const auto rep = evaluate_frames(frames);
        CHECK(rep.range_error_m == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(rep.azimuth_error_deg == doctest::Approx(0.0));
        CHECK(rep.ap == doctest::Approx(100.0));
    }
}

TEST_CASE("threshold sweep agrees with a from-scratch oracle") {
    std::mt19937 rng(31);
    BoxTemplate tpl;
    for (int set = 0; set < 40; ++set) {
        const auto frames = random_scene_set(rng, 1 + set % 7, 6);
        const auto rep = evaluate_frames(frames, 0.5, tpl);
        const auto want = oracle_sweep(frames, 0.5, tpl);

        REQUIRE(rep.rows.size() == 9);
        for (int k = 0; k < 9; ++k) {
            CHECK(rep.rows[k].tp == want.tp[k]);
            CHECK(rep.rows[k].fp == want.fp[k]);
            CHECK(rep.rows[k].fn == want.fn[k]);
            CHECK(rep.rows[k].precision == want.precision[k]);
            CHECK(rep.rows[k].recall == want.recall[k]);
        }
        CHECK(rep.ap == doctest::Approx(want.ap).epsilon(1e-12));
        CHECK(rep.ar == doctest::Approx(want.ar).epsilon(1e-12));
        CHECK(rep.f1 == doctest::Approx(want.f1).epsilon(1e-12));
        if (want.re_defined) {
            CHECK(rep.range_error_m == doctest::Approx(want.re).epsilon(1e-12));
            CHECK(rep.azimuth_error_deg == doctest::Approx(want.ae).epsilon(1e-12));
        } else {
            CHECK(std::isnan(rep.range_error_m));
        }
    }
}

TEST_CASE("recall never rises with the threshold") {
    std::mt19937 rng(41);
    for (int set = 0; set < 30; ++set) {
        const auto frames = random_scene_set(rng, 4, 8);
        const auto rep = evaluate_frames(frames);
        for (std::size_t k = 1; k < rep.rows.size(); ++k)
            CHECK(rep.rows[k].recall <= rep.rows[k - 1].recall);
    }
}

TEST_CASE("metrics are independent of frame order") {
    std::mt19937 rng(43);
    auto frames = random_scene_set(rng, 12, 5);
    const auto before = evaluate_frames(frames);
    std::shuffle(frames.begin(), frames.end(), rng);
    const auto after = evaluate_frames(frames);

    CHECK(before.ap == after.ap);
    CHECK(before.ar == after.ar);
    CHECK(before.f1 == after.f1);
    CHECK(before.range_error_m == after.range_error_m);
    CHECK(before.azimuth_error_deg == after.azimuth_error_deg);
    for (int k = 0; k < 9; ++k) {
        CHECK(before.rows[k].tp == after.rows[k].tp);
        CHECK(before.rows[k].fp == after.rows[k].fp);
        CHECK(before.rows[k].fn == after.rows[k].fn);
    }
}

TEST_CASE("ideal maps decode and evaluate to a perfect score") {
    const auto grid = desk_grid();
    std::mt19937 rng(47);

    for (std::size_t k : {std::size_t(1), std::size_t(5), std::size_t(112)}) {
        Tensor cls({1, 16, 28});
        Tensor reg({2, 16, 28});
        std::vector<GtObject> gts;
        std::vector<std::pair<std::size_t, std::size_t>> cells;
        for (std::size_t i = 0; i < 16; i += 2)
            for (std::size_t j = 0; j < 28; j += 2) cells.emplace_back(i, j);
        std::shuffle(cells.begin(), cells.end(), rng);
        cells.resize(k);
        for (auto [i, j] : cells) {
            const float r = (float)grid.range_of_bin((double)i);
            const float a = (float)grid.azimuth_of_col((double)j);
            cls.data[i * 28 + j] = 1.0f;
            reg.data[i * 28 + j] = r;
            reg.data[(16 + i) * 28 + j] = a;
            gts.push_back({(double)r, (double)a});
        }
        const auto dets = decode_detections(cls, reg, 0.5, grid);
        REQUIRE(dets.size() == k);

        std::vector<EvalFrame> frames(1);
        frames[0].preds = dets;
        frames[0].gts = gts;
        const auto rep = evaluate_frames(frames, 0.5, BoxTemplate{1.0, 1.0});
        CHECK(rep.ap == 100.0);
        CHECK(rep.ar == 100.0);
        CHECK(rep.f1 == 100.0);
        CHECK(rep.range_error_m == 0.0);
        CHECK(rep.azimuth_error_deg == 0.0);
    }
}

TEST_CASE("localization errors match a scalar summation oracle") {
    std::mt19937 rng(53);
    std::uniform_real_distribution<double> ua(-60.0, 60.0), u(0.0, 1.0);

    // Objects sit at least 12 m apart in range, so each prediction's box only
    // overlaps its own ground truth, and the jitter is small enough that every
    // pair clears the IoU threshold. Every row then sees the full matched set.
    std::vector<EvalFrame> frames(6);
    double re_sum = 0, ae_sum = 0;
    std::size_t m = 0;
    for (auto& f : frames)
        for (int k = 0; k < 5; ++k) {
            GtObject g{10.0 + 12.0 * k, ua(rng)};
            const double dr = (u(rng) - 0.5) * 0.6, da = (u(rng) - 0.5) * 0.16;
            f.gts.push_back(g);
            f.preds.push_back({g.range_m + dr, g.azimuth_deg + da, 0.95, 0, 0});
            re_sum += std::abs(dr);
            ae_sum += std::abs(da);
            ++m;
        }
    const auto rep = evaluate_frames(frames);
    for (const auto& row : rep.rows) CHECK(row.tp == m);
    CHECK(rep.range_error_m == doctest::Approx(re_sum / (double)m).epsilon(1e-9));
    CHECK(rep.azimuth_error_deg == doctest::Approx(ae_sum / (double)m).epsilon(1e-9));
}

TEST_CASE("prediction and ground-truth csv round trips") {
    const std::string ppath = tmp_path("preds.csv");
    const std::string gpath = tmp_path("gts.csv");
    std::mt19937 rng(59);
    std::uniform_real_distribution<double> ur(0.0, 100.0), ua(-89.0, 89.0), uc(0.001, 0.999);

    std::vector<std::vector<Detection>> preds(5);
    std::vector<std::vector<GtObject>> gts(5);
    for (int f = 0; f < 5; ++f) {
        if (f == 2) continue;  // keep one frame empty
        for (int k = 0; k <= f; ++k) {
            preds[(std::size_t)f].push_back({ur(rng), ua(rng), uc(rng), 0, 0});
            gts[(std::size_t)f].push_back({ur(rng), ua(rng)});
        }
    }
    save_predictions_csv(ppath, preds);
    save_ground_truth_csv(gpath, gts);

    const auto lp = load_predictions_csv(ppath, 5);
    const auto lg = load_ground_truth_csv(gpath, 5);
    REQUIRE(lp.size() == 5);
    REQUIRE(lg.size() == 5);
    CHECK(lp[2].empty());
    for (int f = 0; f < 5; ++f) {
        REQUIRE(lp[(std::size_t)f].size() == preds[(std::size_t)f].size());
        REQUIRE(lg[(std::size_t)f].size() == gts[(std::size_t)f].size());
        for (std::size_t k = 0; k < preds[(std::size_t)f].size(); ++k) {
            CHECK(lp[(std::size_t)f][k].range_m == preds[(std::size_t)f][k].range_m);
            CHECK(lp[(std::size_t)f][k].azimuth_deg == preds[(std::size_t)f][k].azimuth_deg);
            CHECK(lp[(std::size_t)f][k].confidence == preds[(std::size_t)f][k].confidence);
            CHECK(lg[(std::size_t)f][k].range_m == gts[(std::size_t)f][k].range_m);
        }
    }

    SUBCASE("header and field-count validation") {
        std::ofstream bad(tmp_path("bad.csv"));
        bad << "range_m,azimuth_deg\n";
        bad.close();
        CHECK_THROWS_WITH_AS(load_predictions_csv(tmp_path("bad.csv")),
                             doctest::Contains("expected header"), std::runtime_error);

        std::ofstream short_row(tmp_path("short.csv"));
        short_row << "frame_id,range_m,azimuth_deg,confidence\n0,1.0,2.0\n";
        short_row.close();
        CHECK_THROWS_WITH_AS(load_predictions_csv(tmp_path("short.csv")),
                             doctest::Contains(":2: expected 4 fields"), std::runtime_error);

        std::ofstream garbled(tmp_path("garbled.csv"));
        garbled << "frame_id,range_m,azimuth_deg\n0,1.0,x7\n";
        garbled.close();
        CHECK_THROWS_WITH_AS(load_ground_truth_csv(tmp_path("garbled.csv")),
                             doctest::Contains("bad number 'x7'"), std::runtime_error);

        CHECK_THROWS_AS(load_predictions_csv("/nonexistent/x.csv"), std::runtime_error);
    }
}

TEST_CASE("report rendering and key-value export") {
    std::mt19937 rng(61);
    const auto frames = random_scene_set(rng, 6, 5);
    const auto rep = evaluate_frames(frames);

    const std::string text = rep.table();
    CHECK(text.find("AP = ") != std::string::npos);
    CHECK(text.find("F1 = ") != std::string::npos);
    CHECK(text.find("0.9") != std::string::npos);

    const auto kv = rep.to_kv();
    CHECK(kv.get_double("metrics.ap_percent") == rep.ap);
    CHECK(kv.get_double("metrics.f1_percent") == rep.f1);
    const auto prec = kv.get_doubles("thresholds.precision", 9);
    for (int k = 0; k < 9; ++k) CHECK(prec[(std::size_t)k] == rep.rows[(std::size_t)k].precision);

    std::vector<EvalFrame> empty_gts(1);
    empty_gts[0].gts.push_back({10, 0});
    const auto nanrep = evaluate_frames(empty_gts);
    CHECK(nanrep.table().find("undefined") != std::string::npos);
    CHECK(std::isnan(nanrep.to_kv().get_double("metrics.range_error_m")));

    BenchmarkReport bench{6.9, 42.5, 1.25, 26.3};
    CHECK(bench.table().find("fps mean") != std::string::npos);
    CHECK(bench.to_kv().get_double("bench.fps_sigma") == 1.25);
}
