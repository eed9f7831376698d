#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "polarfuse/pipeline.hpp"

using namespace polarfuse;
using pipeline::PipelineConfig;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
    const std::string p = "/tmp/polarfuse_pipeline_" + name;
    fs::remove_all(p);
    return p;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string kv_text(const io::KeyValueFile& kv) {
    std::ostringstream ss;
    kv.write(ss);
    return ss.str();
}

}  // namespace

TEST_CASE("config round trips through key-value form") {
    PipelineConfig cfg;
    cfg.dataset_dir = "data/run1";
    cfg.checkpoint = "ckpt.pfn";
    cfg.out_dir = "out/run1";
    cfg.camera_input = pipeline::CameraInput::cartesian;
    cfg.eval_split = "val";
    cfg.decode_threshold = 0.25;
    cfg.n_frames = 12;
    cfg.seed = 77;
    cfg.network.seed = 5;
    cfg.loss.alpha = 37.5;
    cfg.mimo.delta = 7;
    cfg.camera.fx = 250.0;
    cfg.bev.xmax = 9.0;
    cfg.cam_polar.range_res = 9.0 / 64;
    cfg.grid.range_res = 9.0 / 16;
    cfg.scene.max_vehicles = 4;
    cfg.optim.lr0 = 3e-3;
    cfg.optim.epochs = 7;
    cfg.split.train = 0.5;
    cfg.split.val = 0.25;
    cfg.split.test = 0.25;
    cfg.box.length_m = 2.0;
    cfg.box.width_m = 1.0;
    cfg.iou_threshold = 0.3;

    const std::string dir = tmp_dir("cfg");
    fs::create_directories(dir);
    cfg.save(dir + "/config.kv");
    const PipelineConfig back = PipelineConfig::load(dir + "/config.kv");
    CHECK(kv_text(back.to_kv()) == kv_text(cfg.to_kv()));
    CHECK(back.dataset_dir == "data/run1");
    CHECK(back.checkpoint == "ckpt.pfn");
    CHECK(back.camera_input == pipeline::CameraInput::cartesian);
    CHECK(back.eval_split == "val");
    CHECK(back.decode_threshold == 0.25);
    CHECK(back.n_frames == 12);
    CHECK(back.seed == 77);
    CHECK(back.network.seed == 5);
    CHECK(back.loss.alpha == 37.5);
    CHECK(back.mimo.delta == 7);
    CHECK(back.camera.fx == 250.0);
    CHECK(back.bev.xmax == 9.0);
    CHECK(back.cam_polar.range_res == 9.0 / 64);
    CHECK(back.scene.max_vehicles == 4);
    CHECK(back.optim.lr0 == 3e-3);
    CHECK(back.optim.epochs == 7);
    CHECK(back.split.val == 0.25);
    CHECK(back.box.width_m == 1.0);
    CHECK(back.iou_threshold == 0.3);

    SUBCASE("defaults survive with empty paths omitted") {
        PipelineConfig plain;
        const PipelineConfig plain_back = PipelineConfig::from_kv(plain.to_kv());
        CHECK(plain_back.dataset_dir.empty());
        CHECK(plain_back.checkpoint.empty());
        CHECK(kv_text(plain_back.to_kv()) == kv_text(plain.to_kv()));
    }
}

TEST_CASE("config validation rejects inconsistent setups") {
    const PipelineConfig ok;
    CHECK(ok.validate().empty());

    PipelineConfig c = ok;
    c.decode_threshold = 0.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("decode threshold"),
                         std::invalid_argument);

    c = ok;
    c.eval_split = "holdout";
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("eval_split"),
                         std::invalid_argument);

    c = ok;
    c.grid.n_range = 8;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ok;
    c.cam_polar.n_range = 32;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("polar camera"),
                         std::invalid_argument);

    c = ok;
    c.camera_input = pipeline::CameraInput::cartesian;
    c.bev.nrows = 48;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("bev raster"),
                         std::invalid_argument);

    c = ok;
    c.mimo.d_max = 64;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ok;
    c.scene.range_max_m = 9.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("scene"),
                         std::invalid_argument);

    c = ok;
    c.iou_threshold = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ok;
    c.split.test = 0.2;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("sum to 1"),
                         std::invalid_argument);

    SUBCASE("aliasing transmitters surface as a warning, not an error") {
        PipelineConfig w = ok;
        w.mimo.delta = 11;  // 3 * 11 > 32 Doppler bins
        CHECK(!w.validate().empty());
    }
}

TEST_CASE("learning rate follows the staircase schedule exactly") {
    pipeline::OptimConfig o;
    o.lr0 = 0.5;
    o.decay = 0.5;
    o.decay_every = 10;
    for (std::size_t e = 0; e < 10; ++e) CHECK(o.lr_at(e) == 0.5);
    for (std::size_t e = 10; e < 20; ++e) CHECK(o.lr_at(e) == 0.25);
    CHECK(o.lr_at(20) == 0.125);
    CHECK(o.lr_at(39) == 0.0625);

    pipeline::OptimConfig bad = o;
    bad.decay = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("splits round their fractions and partition the indices") {
    pipeline::SplitConfig even;
    const auto s100 = pipeline::split_dataset(100, even, 7);
    CHECK(s100.train.size() == 70);
    CHECK(s100.val.size() == 15);
    CHECK(s100.test.size() == 15);

    const auto s7 = pipeline::split_dataset(7, even, 7);
    CHECK(s7.train.size() == 5);  // llround(4.9)
    CHECK(s7.val.size() == 1);    // llround(1.05)
    CHECK(s7.test.size() == 1);

    pipeline::SplitConfig half{0.5, 0.5, 0.0};
    const auto s3 = pipeline::split_dataset(3, half, 1);
    CHECK(s3.train.size() == 2);  // llround(1.5)
    CHECK(s3.val.size() == 1);    // clamped to the remainder
    CHECK(s3.test.size() == 0);

    const auto s0 = pipeline::split_dataset(0, even, 1);
    CHECK(s0.train.empty());
    CHECK(s0.val.empty());
    CHECK(s0.test.empty());

    SUBCASE("every index lands in exactly one bucket") {
        const auto s = pipeline::split_dataset(53, even, 99);
        std::vector<std::size_t> all;
        for (const auto* b : {&s.train, &s.val, &s.test})
            all.insert(all.end(), b->begin(), b->end());
        std::sort(all.begin(), all.end());
        REQUIRE(all.size() == 53);
        for (std::size_t i = 0; i < 53; ++i) CHECK(all[i] == i);
    }

    SUBCASE("the shuffle is seeded") {
        const auto a = pipeline::split_dataset(100, even, 11);
        const auto b = pipeline::split_dataset(100, even, 11);
        const auto c = pipeline::split_dataset(100, even, 12);
        CHECK(a.train == b.train);
        CHECK(a.test == b.test);
        CHECK(a.train != c.train);
    }
}

TEST_CASE("target maps place each object in its grid cell") {
    const geom::PolarGridSpec grid{16, 28, 0.5, 2.0, 14.0};

    std::vector<eval::GtObject> gts;
    gts.push_back({5.25, 3.0});
    TargetMaps t = pipeline::targets_from_gts(gts, grid);
    REQUIRE(t.cls.shape == std::vector<std::size_t>({1, 16, 28}));
    REQUIRE(t.reg.shape == std::vector<std::size_t>({2, 16, 28}));
    t.validate();
    CHECK(t.positive_count() == 1);
    const std::size_t i = 10, j = 15;  // floor(5.25/0.5), floor(3/2 + 14)
    CHECK(t.cls.data[i * 28 + j] == 1.0f);
    CHECK(t.reg.data[i * 28 + j] == 5.25f);
    CHECK(t.reg.data[(16 + i) * 28 + j] == 3.0f);
    float cls_sum = 0.0f;
    for (float v : t.cls.data) cls_sum += v;
    CHECK(cls_sum == 1.0f);

    SUBCASE("coordinates clamp to the grid") {
        std::vector<eval::GtObject> edge;
        edge.push_back({8.5, 0.0});    // past the far edge
        edge.push_back({1.0, -28.5});  // past the left edge
        edge.push_back({1.0, 28.1});   // past the right edge
        const TargetMaps te = pipeline::targets_from_gts(edge, grid);
        CHECK(te.cls.data[15 * 28 + 14] == 1.0f);
        CHECK(te.cls.data[2 * 28 + 0] == 1.0f);
        CHECK(te.cls.data[2 * 28 + 27] == 1.0f);
        CHECK(te.positive_count() == 3);
    }

    SUBCASE("objects sharing a cell keep the last regression value") {
        std::vector<eval::GtObject> pair;
        pair.push_back({5.1, 3.0});
        pair.push_back({5.3, 3.5});
        const TargetMaps tp = pipeline::targets_from_gts(pair, grid);
        CHECK(tp.positive_count() == 1);
        CHECK(tp.reg.data[i * 28 + j] == 5.3f);
    }

    SUBCASE("no objects means all-zero maps") {
        const TargetMaps tz = pipeline::targets_from_gts({}, grid);
        CHECK(tz.positive_count() == 0);
    }
}

TEST_CASE("rendered scenes have sky, checkered ground, and palette markers") {
    pipeline::CameraSetup cam;
    std::vector<eval::GtObject> objs;
    objs.push_back({4.0, 0.0});
    objs.push_back({5.0, 10.0});
    const RgbImage img = pipeline::render_camera_scene(cam, objs, 0.35);
    REQUIRE(img.height == cam.image_h);
    REQUIRE(img.width == cam.image_w);

    for (std::size_t j = 0; j < img.width; ++j) {
        CHECK(img.at(0, 0, j) == 0.45f);
        CHECK(img.at(1, 0, j) == 0.55f);
        CHECK(img.at(2, 0, j) == 0.7f);
    }

    const geom::CameraModel cm = cam.model();
    const auto center_pixel = [&cm](double r, double az_deg) {
        const double a = az_deg * 3.14159265358979323846 / 180.0;
        const auto h = cm.ground_to_image *
                       std::array<double, 3>{r * std::cos(a), r * std::sin(a), 1.0};
        REQUIRE(std::abs(h[2]) > 1e-9);
        return std::pair<std::size_t, std::size_t>{
            static_cast<std::size_t>(std::llround(h[1] / h[2])),
            static_cast<std::size_t>(std::llround(h[0] / h[2]))};
    };
    const auto [v0, u0] = center_pixel(4.0, 0.0);
    REQUIRE(v0 < img.height);
    REQUIRE(u0 < img.width);
    CHECK(img.at(0, v0, u0) == 1.0f);
    CHECK(img.at(1, v0, u0) == 0.85f);
    CHECK(img.at(2, v0, u0) == 0.2f);
    const auto [v1, u1] = center_pixel(5.0, 10.0);
    REQUIRE(v1 < img.height);
    REQUIRE(u1 < img.width);
    CHECK(img.at(0, v1, u1) == 0.95f);
    CHECK(img.at(1, v1, u1) == 0.35f);
    CHECK(img.at(2, v1, u1) == 0.3f);

    SUBCASE("the ground is gray in two checker shades") {
        bool dark = false, light = false;
        for (std::size_t j = 0; j < img.width; ++j) {
            const float r = img.at(0, img.height - 1, j);
            CHECK(img.at(1, img.height - 1, j) == r);
            CHECK(img.at(2, img.height - 1, j) == r);
            CHECK(r >= 0.16f);
            CHECK(r <= 0.26f);
            dark = dark || r == 0.16f;
            light = light || r == 0.26f;
        }
        CHECK(dark);
        CHECK(light);
    }
}

TEST_CASE("generation is deterministic byte for byte") {
    PipelineConfig cfg;
    cfg.seed = 9;
    const std::string a = tmp_dir("gen_a");
    const std::string b = tmp_dir("gen_b");
    const auto ma = pipeline::generate_synthetic_dataset(cfg, 3, a);
    const auto mb = pipeline::generate_synthetic_dataset(cfg, 3, b);
    REQUIRE(ma.n_frames == 3);
    REQUIRE(ma.camera_files == mb.camera_files);
    REQUIRE(ma.rd_files == mb.rd_files);
    CHECK(read_bytes(a + "/manifest.kv") == read_bytes(b + "/manifest.kv"));
    CHECK(read_bytes(a + "/gts.csv") == read_bytes(b + "/gts.csv"));
    for (std::size_t f = 0; f < 3; ++f) {
        CHECK(read_bytes(a + "/" + ma.camera_files[f]) ==
              read_bytes(b + "/" + mb.camera_files[f]));
        CHECK(read_bytes(a + "/" + ma.rd_files[f]) == read_bytes(b + "/" + mb.rd_files[f]));
    }

    PipelineConfig other = cfg;
    other.seed = 10;
    const std::string c = tmp_dir("gen_c");
    pipeline::generate_synthetic_dataset(other, 3, c);
    CHECK(read_bytes(a + "/gts.csv") != read_bytes(c + "/gts.csv"));
}

TEST_CASE("generated frames agree with their ground truth") {
    PipelineConfig cfg;
    cfg.seed = 123;
    cfg.scene.min_vehicles = 1;
    cfg.scene.max_vehicles = 1;
    cfg.scene.noise_sigma = 0.0;
    const std::string dir = tmp_dir("gen_gt");
    const auto m = pipeline::generate_synthetic_dataset(cfg, 2, dir);
    REQUIRE(m.n_frames == 2);

    const auto gts = eval::load_ground_truth_csv(dir + "/gts.csv", 2);
    REQUIRE(gts.size() == 2);
    for (std::size_t f = 0; f < 2; ++f) {
        REQUIRE(gts[f].size() == 1);
        CHECK(gts[f][0].range_m >= cfg.scene.range_min_m);
        CHECK(gts[f][0].range_m <= cfg.scene.range_max_m);
        CHECK(gts[f][0].azimuth_deg >= cfg.scene.azimuth_min_deg);
        CHECK(gts[f][0].azimuth_deg <= cfg.scene.azimuth_max_deg);

        const RgbImage re =
            pipeline::render_camera_scene(cfg.camera, gts[f], cfg.scene.marker_half_m);
        io::save_ppm(re, dir + "/rerender.ppm");
        CHECK(read_bytes(dir + "/rerender.ppm") == read_bytes(dir + "/" + m.camera_files[f]));

        const radar::RdTensor cube = io::load_rd_tensor(dir + "/" + m.rd_files[f]);
        REQUIRE(cube.n_range == cfg.network.radar_r);
        REQUIRE(cube.n_doppler == cfg.network.radar_d);
        REQUIRE(cube.n_rx == cfg.n_rx());
        const std::size_t rb =
            std::min(static_cast<std::size_t>(
                         std::floor(gts[f][0].range_m / cfg.cam_polar.range_res)),
                     cube.n_range - 1);
        bool off_row_clean = true;
        for (std::size_t r = 0; r < cube.n_range; ++r)
            for (std::size_t d = 0; d < cube.n_doppler && off_row_clean; ++d)
                for (std::size_t rx = 0; rx < cube.n_rx; ++rx)
                    if (r != rb && std::abs(cube.at(r, d, rx)) != 0.0f) off_row_clean = false;
        CHECK(off_row_clean);
        for (std::size_t rx = 0; rx < cube.n_rx; ++rx) {
            std::size_t hits = 0;
            for (std::size_t d = 0; d < cube.n_doppler; ++d) {
                const float mag = std::abs(cube.at(rb, d, rx));
                if (mag == 0.0f) continue;
                ++hits;
                CHECK(mag >= 0.7f);
                CHECK(mag <= 1.3f);
            }
            CHECK(hits == cfg.mimo.n_tx);  // one Doppler signature per transmitter
        }
    }

    SUBCASE("the manifest embeds the generating config") {
        const PipelineConfig embedded = PipelineConfig::load(dir + "/manifest.kv");
        CHECK(kv_text(embedded.to_kv()) == kv_text(cfg.to_kv()));
    }
}

TEST_CASE("an empty dataset writes only a manifest") {
    PipelineConfig cfg;
    const std::string dir = tmp_dir("gen_empty");
    const auto m = pipeline::generate_synthetic_dataset(cfg, 0, dir);
    CHECK(m.n_frames == 0);
    CHECK(m.camera_files.empty());
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
    CHECK(files == 1);

    const auto loaded = pipeline::load_manifest(dir);
    CHECK(loaded.n_frames == 0);
    const pipeline::Dataset ds = pipeline::load_dataset(cfg, dir);
    CHECK(ds.frames.empty());
    CHECK(ds.gts.empty());

    SUBCASE("manifests with mismatched file lists are rejected") {
        io::KeyValueFile bad;
        bad.set_int("dataset.n_frames", 2);
        bad.set("dataset.gt_csv", "gts.csv");
        bad.set("dataset.camera_files", "camera_0000.ppm");
        bad.set("dataset.rd_files", "rd_0000.rdt rd_0001.rdt");
        const std::string bdir = tmp_dir("gen_bad");
        fs::create_directories(bdir);
        bad.save(bdir + "/manifest.kv");
        CHECK_THROWS_WITH_AS(pipeline::load_manifest(bdir),
                             doctest::Contains("file lists"),
                             std::runtime_error);
    }
}

TEST_CASE("preprocessing flips camera rasters into bin order") {
    PipelineConfig cfg;
    std::vector<eval::GtObject> objs;
    objs.push_back({2.5, 5.0});
    const RgbImage img = pipeline::render_camera_scene(cfg.camera, objs, cfg.scene.marker_half_m);
    const Tensor cam = pipeline::preprocess_camera(img, cfg);
    REQUIRE(cam.shape == std::vector<std::size_t>({3, 64, 32}));

    const RgbImage bev = geom::image_to_bev_cartesian(img, cfg.camera.model(), cfg.bev);
    const RgbImage polar = geom::bev_cartesian_to_polar(bev, cfg.bev, cfg.cam_polar);
    const Tensor disp = polar.to_tensor();
    bool mirrored = true;
    for (std::size_t c = 0; c < 3 && mirrored; ++c)
        for (std::size_t i = 0; i < 64 && mirrored; ++i)
            for (std::size_t j = 0; j < 32; ++j)
                if (cam.data[(c * 64 + i) * 32 + j] != disp.data[(c * 64 + 63 - i) * 32 + j]) {
                    mirrored = false;
                    break;
                }
    CHECK(mirrored);

    // the marker's reddest row sits at its range bin, not the mirrored one
    std::size_t best_row = 0;
    double best = -1e9;
    for (std::size_t i = 0; i < 64; ++i) {
        double redness = 0.0;
        for (std::size_t j = 0; j < 32; ++j)
            redness += cam.data[i * 32 + j] - cam.data[(2 * 64 + i) * 32 + j];
        if (redness > best) {
            best = redness;
            best_row = i;
        }
    }
    const double expect = std::floor(2.5 / cfg.cam_polar.range_res);
    CHECK(std::abs(static_cast<double>(best_row) - expect) <= 4.0);

    SUBCASE("cartesian mode skips the polar warp but still flips") {
        PipelineConfig cart = cfg;
        cart.camera_input = pipeline::CameraInput::cartesian;
        const Tensor t = pipeline::preprocess_camera(img, cart);
        const Tensor bt = bev.to_tensor();
        bool flipped = true;
        for (std::size_t i = 0; i < 64 && flipped; ++i)
            for (std::size_t j = 0; j < 32; ++j)
                if (t.data[i * 32 + j] != bt.data[(63 - i) * 32 + j]) {
                    flipped = false;
                    break;
                }
        CHECK(flipped);
    }

    SUBCASE("raster and cube dimension mismatches are rejected") {
        PipelineConfig wrong = cfg;
        wrong.cam_polar.n_range = 32;
        CHECK_THROWS_AS(pipeline::preprocess_camera(img, wrong), std::invalid_argument);

        radar::RdTensor cube(64, 32, 4, 3);
        const Tensor rad = pipeline::preprocess_radar(cube, cfg);
        REQUIRE(rad.shape == std::vector<std::size_t>({24, 64, 32}));
        radar::RdTensor bad(32, 32, 4, 3);
        CHECK_THROWS_AS(pipeline::preprocess_radar(bad, cfg), std::invalid_argument);
    }
}

TEST_CASE("training checkpoints, logs, and reproduces bit for bit") {
    PipelineConfig cfg;
    cfg.seed = 5;
    cfg.optim.epochs = 2;
    cfg.optim.batch = 4;
    cfg.optim.lr0 = 1e-3;
    cfg.split.train = 1.0;
    cfg.split.val = 0.0;
    cfg.split.test = 0.0;
    const std::string data = tmp_dir("train_data");
    pipeline::generate_synthetic_dataset(cfg, 6, data);
    cfg.dataset_dir = data;

    cfg.out_dir = tmp_dir("train_a");
    const pipeline::TrainSummary sa = pipeline::train_model(cfg);
    CHECK(sa.epochs == 2);
    CHECK(sa.steps == 4);  // two accumulation steps per epoch over 6 frames
    REQUIRE(sa.epoch_loss.size() == 2);
    for (double l : sa.epoch_loss) CHECK(std::isfinite(l));
    CHECK(sa.final_loss == sa.epoch_loss.back());
    CHECK(fs::exists(sa.checkpoint_path));
    CHECK(fs::exists(cfg.out_dir + "/train_log.txt"));
    CHECK(fs::exists(cfg.out_dir + "/resolved_config.kv"));

    cfg.out_dir = tmp_dir("train_b");
    const pipeline::TrainSummary sb = pipeline::train_model(cfg);
    CHECK(sb.epoch_loss == sa.epoch_loss);
    CHECK(read_bytes(sa.checkpoint_path) == read_bytes(sb.checkpoint_path));

    net::Model model = io::load_checkpoint(sa.checkpoint_path);
    CHECK(model.count_parameters() > 0);
}

TEST_CASE("inference, evaluation, and benchmarking write their artifacts") {
    PipelineConfig cfg;
    cfg.seed = 31;
    const std::string data = tmp_dir("run_data");
    pipeline::generate_synthetic_dataset(cfg, 5, data);
    cfg.dataset_dir = data;

    const std::string work = tmp_dir("run_work");
    fs::create_directories(work);
    net::Model model(cfg.network);
    io::save_checkpoint(work + "/model.pfn", model);
    cfg.checkpoint = work + "/model.pfn";

    cfg.out_dir = work + "/infer_a";
    const std::string csv_a = pipeline::run_infer(cfg);
    CHECK(csv_a == cfg.out_dir + "/detections.csv");
    const auto preds = eval::load_predictions_csv(csv_a, 5);
    CHECK(preds.size() == 5);
    cfg.out_dir = work + "/infer_b";
    const std::string csv_b = pipeline::run_infer(cfg);
    CHECK(read_bytes(csv_a) == read_bytes(csv_b));

    cfg.out_dir = work + "/eval";
    cfg.eval_split = "all";
    const eval::MetricsReport rep = pipeline::run_eval(cfg);
    CHECK(rep.rows.size() == 9);
    CHECK(fs::exists(cfg.out_dir + "/detections.csv"));
    CHECK(fs::exists(cfg.out_dir + "/metrics.txt"));
    CHECK(fs::exists(cfg.out_dir + "/overlay.ppm"));
    const auto kv = io::KeyValueFile::load(cfg.out_dir + "/metrics.kv");
    CHECK(kv.get_double("metrics.ap_percent") == doctest::Approx(rep.ap));
    CHECK(kv.get_double("metrics.f1_percent") == doctest::Approx(rep.f1));

    cfg.out_dir = work + "/bench";
    const eval::BenchmarkReport bench = pipeline::run_bench(cfg);
    CHECK(bench.fps_mean > 0.0);
    CHECK(bench.fps_sigma >= 0.0);
    CHECK(bench.params_millions > 0.0);
    CHECK(bench.model_file_mb > 0.0);
    CHECK(fs::exists(cfg.out_dir + "/bench.txt"));
    CHECK(fs::exists(cfg.out_dir + "/bench.kv"));
}

TEST_CASE("polar overlays draw markers and leave the rest untouched") {
    const geom::PolarGridSpec raster{64, 32, 0.125, 1.75, 16.0};
    RgbImage base(64, 32);
    base.fill(0.5f, 0.5f, 0.5f);
    const std::string dir = tmp_dir("overlay");
    fs::create_directories(dir);

    std::vector<eval::GtObject> gts;
    gts.push_back({raster.range_of_row(40.0), raster.azimuth_of_col(10.0)});
    std::vector<eval::Detection> dets(1);
    dets[0].range_m = raster.range_of_row(12.0);
    dets[0].azimuth_deg = raster.azimuth_of_col(25.0);
    dets[0].confidence = 0.9;

    pipeline::export_polar_overlay(base, dets, gts, raster, dir + "/ov.ppm");
    const RgbImage ov = io::load_ppm(dir + "/ov.ppm");
    const auto near_rgb = [&ov](std::size_t i, std::size_t j, float r, float g, float b) {
        CHECK(std::abs(ov.at(0, i, j) - r) < 0.01f);
        CHECK(std::abs(ov.at(1, i, j) - g) < 0.01f);
        CHECK(std::abs(ov.at(2, i, j) - b) < 0.01f);
    };
    near_rgb(40, 10, 0.0f, 0.9f, 0.1f);
    near_rgb(38, 10, 0.0f, 0.9f, 0.1f);
    near_rgb(40, 12, 0.0f, 0.9f, 0.1f);
    near_rgb(12, 25, 0.1f, 0.35f, 1.0f);
    near_rgb(14, 25, 0.1f, 0.35f, 1.0f);
    near_rgb(0, 0, 0.5f, 0.5f, 0.5f);
    near_rgb(40, 20, 0.5f, 0.5f, 0.5f);

    SUBCASE("no markers leaves the image byte-identical") {
        io::save_ppm(base, dir + "/base.ppm");
        pipeline::export_polar_overlay(base, {}, {}, raster, dir + "/empty.ppm");
        CHECK(read_bytes(dir + "/empty.ppm") == read_bytes(dir + "/base.ppm"));
    }

    SUBCASE("markers clip at the raster border") {
        std::vector<eval::GtObject> corner;
        corner.push_back({raster.range_of_row(0.0), raster.azimuth_of_col(0.0)});
        pipeline::export_polar_overlay(base, {}, corner, raster, dir + "/corner.ppm");
        const RgbImage cv = io::load_ppm(dir + "/corner.ppm");
        CHECK(std::abs(cv.at(1, 0, 0) - 0.9f) < 0.01f);
    }

    SUBCASE("a mismatched raster is rejected") {
        const geom::PolarGridSpec wrong{32, 32, 0.25, 1.75, 16.0};
        CHECK_THROWS_AS(pipeline::export_polar_overlay(base, {}, {}, wrong, dir + "/x.ppm"),
                        std::invalid_argument);
    }
}

TEST_CASE("warp exports camera, bev, and polar views") {
    PipelineConfig cfg;
    cfg.seed = 3;
    cfg.out_dir = tmp_dir("warp_fresh");
    pipeline::run_warp(cfg);
    const RgbImage camv = io::load_ppm(cfg.out_dir + "/camera.ppm");
    CHECK(camv.height == cfg.camera.image_h);
    CHECK(camv.width == cfg.camera.image_w);
    const RgbImage bev = io::load_ppm(cfg.out_dir + "/bev.ppm");
    CHECK(bev.height == cfg.bev.nrows);
    CHECK(bev.width == cfg.bev.ncols);
    const RgbImage pol = io::load_ppm(cfg.out_dir + "/polar.ppm");
    CHECK(pol.height == cfg.cam_polar.n_range);
    CHECK(pol.width == cfg.cam_polar.n_azimuth);

    SUBCASE("with a dataset the first frame is exported unchanged") {
        const std::string data = tmp_dir("warp_data");
        const auto m = pipeline::generate_synthetic_dataset(cfg, 1, data);
        cfg.dataset_dir = data;
        cfg.out_dir = tmp_dir("warp_ds");
        pipeline::run_warp(cfg);
        CHECK(read_bytes(cfg.out_dir + "/camera.ppm") ==
              read_bytes(data + "/" + m.camera_files[0]));
    }
}

TEST_CASE("runs validate their configuration before writing") {
    PipelineConfig cfg;
    cfg.decode_threshold = 2.0;
    cfg.dataset_dir = "/nonexistent";
    cfg.checkpoint = "/nonexistent.pfn";
    cfg.out_dir = tmp_dir("never_created");
    CHECK_THROWS_AS(pipeline::train_model(cfg), std::invalid_argument);
    CHECK_THROWS_AS(pipeline::run_infer(cfg), std::invalid_argument);
    CHECK_THROWS_AS(pipeline::run_eval(cfg), std::invalid_argument);
    CHECK_THROWS_AS(pipeline::run_bench(cfg), std::invalid_argument);
    CHECK_THROWS_AS(pipeline::run_warp(cfg), std::invalid_argument);
    CHECK(!fs::exists(cfg.out_dir));

    SUBCASE("a missing checkpoint path fails before any output appears") {
        PipelineConfig ok;
        ok.dataset_dir = "/nonexistent";
        ok.out_dir = tmp_dir("never_created2");
        CHECK_THROWS_WITH_AS(pipeline::run_infer(ok),
                             doctest::Contains("checkpoint"),
                             std::invalid_argument);
        CHECK(!fs::exists(ok.out_dir));
    }
}
