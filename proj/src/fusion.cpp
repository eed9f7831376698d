#include "polarfuse/fusion.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "polarfuse/radar.hpp"

namespace polarfuse::net {

namespace {

constexpr float kClsFloor = 1e-12f;
constexpr float kClsCeil = 1.0f - 1e-7f;

std::string join_sizes(const std::size_t* v, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += " ";
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<std::size_t> parse_sizes(const io::KeyValueFile& kv, const std::string& key,
                                     std::size_t n) {
    const std::vector<double> vals = kv.get_doubles(key, n);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::size_t>(vals[i]);
    return out;
}

void require_shape(const Var& v, const std::vector<std::size_t>& shape, const char* what) {
    if (v.value().shape != shape)
        throw std::invalid_argument(std::string(what) + ": expected " + shape_to_string(shape) +
                                    ", got " + shape_to_string(v.value().shape));
}

}  // namespace

std::size_t NetworkConfig::scaled(std::size_t base) const {
    return static_cast<std::size_t>(std::ceil(width * static_cast<double>(base)));
}

void NetworkConfig::validate() const {
    if (!(width > 0.0 && width <= 1.0))
        throw std::invalid_argument("network config: width must be in (0, 1]");
    const auto mod16 = [](std::size_t v, const char* name) {
        if (v == 0 || v % 16 != 0)
            throw std::invalid_argument(std::string("network config: ") + name + " = " +
                                        std::to_string(v) + " must be a positive multiple of 16");
    };
    mod16(cam_h, "cam_h");
    mod16(cam_w, "cam_w");
    mod16(radar_r, "radar_r");
    mod16(radar_d, "radar_d");
    if (grid_r * 4 != cam_h || grid_r * 4 != radar_r)
        throw std::invalid_argument(
            "network config: output rows " + std::to_string(grid_r) +
            " must be a quarter of the range rows (cam_h = " + std::to_string(cam_h) +
            ", radar_r = " + std::to_string(radar_r) + ")");
    if (grid_a == 0 || grid_a % 4 != 0)
        throw std::invalid_argument("network config: grid_a = " + std::to_string(grid_a) +
                                    " must be a positive multiple of 4");
    if (radar_channels == 0)
        throw std::invalid_argument("network config: radar_channels must be positive");
    const auto positive = [](std::size_t v, const char* name) {
        if (v == 0)
            throw std::invalid_argument(std::string("network config: ") + name +
                                        " must be positive");
    };
    for (std::size_t i = 0; i < 4; ++i) {
        positive(blocks[i], "blocks");
        positive(head_filters[i], "head_filters");
        positive(cam_widths[i], "cam_widths");
    }
    for (std::size_t i = 0; i < 3; ++i) positive(radar_widths[i], "radar_widths");
    positive(cam_pre, "cam_pre");
    positive(radar_pre, "radar_pre");
    positive(radar_up, "radar_up");
    positive(cam_out, "cam_out");
    positive(radar_out, "radar_out");
    if (!(reg_scale[0] > 0.0 && reg_scale[1] > 0.0))
        throw std::invalid_argument("network config: reg_scale entries must be positive");
}

void NetworkConfig::to_kv(io::KeyValueFile& kv) const {
    kv.set_double("net.width", width);
    kv.set_int("net.cam_h", static_cast<long long>(cam_h));
    kv.set_int("net.cam_w", static_cast<long long>(cam_w));
    kv.set_int("net.radar_r", static_cast<long long>(radar_r));
    kv.set_int("net.radar_d", static_cast<long long>(radar_d));
    kv.set_int("net.radar_channels", static_cast<long long>(radar_channels));
    kv.set("net.blocks", join_sizes(blocks.data(), 4));
    kv.set("net.head_filters", join_sizes(head_filters.data(), 4));
    kv.set_int("net.grid_r", static_cast<long long>(grid_r));
    kv.set_int("net.grid_a", static_cast<long long>(grid_a));
    kv.set_int("net.cam_pre", static_cast<long long>(cam_pre));
    kv.set("net.cam_widths", join_sizes(cam_widths.data(), 4));
    kv.set_int("net.radar_pre", static_cast<long long>(radar_pre));
    kv.set("net.radar_widths", join_sizes(radar_widths.data(), 3));
    kv.set_int("net.radar_up", static_cast<long long>(radar_up));
    kv.set_int("net.cam_out", static_cast<long long>(cam_out));
    kv.set_int("net.radar_out", static_cast<long long>(radar_out));
    kv.set_doubles("net.reg_scale", {reg_scale[0], reg_scale[1]});
    kv.set_int("net.seed", static_cast<long long>(seed));
}

NetworkConfig NetworkConfig::from_kv(const io::KeyValueFile& kv) {
    NetworkConfig cfg;
    cfg.width = kv.get_double("net.width", cfg.width);
    cfg.cam_h = static_cast<std::size_t>(kv.get_int("net.cam_h", cfg.cam_h));
    cfg.cam_w = static_cast<std::size_t>(kv.get_int("net.cam_w", cfg.cam_w));
    cfg.radar_r = static_cast<std::size_t>(kv.get_int("net.radar_r", cfg.radar_r));
    cfg.radar_d = static_cast<std::size_t>(kv.get_int("net.radar_d", cfg.radar_d));
    cfg.radar_channels =
        static_cast<std::size_t>(kv.get_int("net.radar_channels", cfg.radar_channels));
    if (kv.has("net.blocks")) {
        const auto v = parse_sizes(kv, "net.blocks", 4);
        std::copy(v.begin(), v.end(), cfg.blocks.begin());
    }
    if (kv.has("net.head_filters")) {
        const auto v = parse_sizes(kv, "net.head_filters", 4);
        std::copy(v.begin(), v.end(), cfg.head_filters.begin());
    }
    cfg.grid_r = static_cast<std::size_t>(kv.get_int("net.grid_r", cfg.grid_r));
    cfg.grid_a = static_cast<std::size_t>(kv.get_int("net.grid_a", cfg.grid_a));
    cfg.cam_pre = static_cast<std::size_t>(kv.get_int("net.cam_pre", cfg.cam_pre));
    if (kv.has("net.cam_widths")) {
        const auto v = parse_sizes(kv, "net.cam_widths", 4);
        std::copy(v.begin(), v.end(), cfg.cam_widths.begin());
    }
    cfg.radar_pre = static_cast<std::size_t>(kv.get_int("net.radar_pre", cfg.radar_pre));
    if (kv.has("net.radar_widths")) {
        const auto v = parse_sizes(kv, "net.radar_widths", 3);
        std::copy(v.begin(), v.end(), cfg.radar_widths.begin());
    }
    cfg.radar_up = static_cast<std::size_t>(kv.get_int("net.radar_up", cfg.radar_up));
    cfg.cam_out = static_cast<std::size_t>(kv.get_int("net.cam_out", cfg.cam_out));
    cfg.radar_out = static_cast<std::size_t>(kv.get_int("net.radar_out", cfg.radar_out));
    if (kv.has("net.reg_scale")) {
        const auto v = kv.get_doubles("net.reg_scale", 2);
        cfg.reg_scale = {v[0], v[1]};
    }
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("net.seed", cfg.seed));
    cfg.validate();
    return cfg;
}

NetworkConfig NetworkConfig::desk(std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.width = 0.125;
    cfg.cam_h = 64;
    cfg.cam_w = 32;
    cfg.radar_r = 64;
    cfg.radar_d = 32;
    cfg.radar_channels = 24;  // 2 * 4 rx * 3 tx
    cfg.grid_r = 16;
    cfg.grid_a = 28;
    cfg.reg_scale = {4.0, 12.0};
    cfg.seed = seed;
    return cfg;
}

Var Conv2d::operator()(const Var& x) const {
    return spec.has_bias ? autograd::conv2d(x, spec, w, b) : autograd::conv2d(x, spec, w);
}

Var Deconv2d::operator()(const Var& x) const { return autograd::conv_transpose2d(x, spec, w); }

Var BatchNorm::operator()(const Var& x, bool train) const {
    return train ? autograd::batchnorm2d_train(x, gamma, beta, *mean, *var, momentum, eps)
                 : autograd::batchnorm2d(x, gamma, beta, *mean, *var, eps);
}

Var ConvBnRelu::operator()(const Var& x, bool train) const {
    Var y = bn(conv(x), train);
    return relu ? autograd::relu(y) : y;
}

Var ResBlock::operator()(const Var& x, bool train) const {
    return autograd::relu(autograd::add(c2(c1(x, train), train), x));
}

Var EncoderStage::operator()(const Var& x, bool train) const {
    Var y = down(x, train);
    for (const ResBlock& b : blocks) y = b(y, train);
    return y;
}

Var UpBlock::operator()(const Var& x, bool train) const {
    return autograd::relu(bn(up(x), train));
}

std::vector<Var> BatchNorm::operator()(const std::vector<Var>& xs, bool train) const {
    std::vector<Var> out;
    out.reserve(xs.size());
    if (!train || xs.size() == 1) {
        for (const Var& x : xs) out.push_back((*this)(x, train));
        return out;
    }
    const std::size_t ch = gamma.value().shape[0];
    Var joint = autograd::batchnorm2d_train_stacked(autograd::concat_channels<float>(xs),
                                                    xs.size(), gamma, beta, *mean, *var, momentum,
                                                    eps);
    for (std::size_t i = 0; i < xs.size(); ++i)
        out.push_back(autograd::slice_channels(joint, i * ch, ch));
    return out;
}

std::vector<Var> ConvBnRelu::operator()(const std::vector<Var>& xs, bool train) const {
    std::vector<Var> ys;
    ys.reserve(xs.size());
    for (const Var& x : xs) ys.push_back(conv(x));
    ys = bn(ys, train);
    if (relu)
        for (Var& y : ys) y = autograd::relu(y);
    return ys;
}

std::vector<Var> ResBlock::operator()(const std::vector<Var>& xs, bool train) const {
    std::vector<Var> ys = c2(c1(xs, train), train);
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = autograd::relu(autograd::add(ys[i], xs[i]));
    return ys;
}

std::vector<Var> EncoderStage::operator()(const std::vector<Var>& xs, bool train) const {
    std::vector<Var> ys = down(xs, train);
    for (const ResBlock& b : blocks) ys = b(ys, train);
    return ys;
}

std::vector<Var> UpBlock::operator()(const std::vector<Var>& xs, bool train) const {
    std::vector<Var> ys;
    ys.reserve(xs.size());
    for (const Var& x : xs) ys.push_back(up(x));
    ys = bn(ys, train);
    for (Var& y : ys) y = autograd::relu(y);
    return ys;
}

Var Model::register_tensor(const std::string& name, Tensor value, bool requires_grad) {
    Var v(std::move(value), requires_grad);
    params_.emplace_back(name, v);
    return v;
}

Conv2d Model::add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                       std::size_t stride, std::size_t pad, bool bias) {
    Conv2d layer;
    layer.spec.in_channels = in;
    layer.spec.out_channels = out;
    layer.spec.kh = layer.spec.kw = k;
    layer.spec.sh = layer.spec.sw = stride;
    layer.spec.ph = layer.spec.pw = pad;
    layer.spec.has_bias = bias;
    Tensor w({out, in, k, k});
    rng_.fill_normal(w, std::sqrt(2.0 / static_cast<double>(in * k * k)));
    layer.w = register_tensor(name + ".w", std::move(w));
    if (bias) layer.b = register_tensor(name + ".b", Tensor({out}));
    return layer;
}

Deconv2d Model::add_deconv(const std::string& name, std::size_t in, std::size_t out) {
    Deconv2d layer;
    layer.spec.in_channels = out;  // adjoint form: forward maps in -> out
    layer.spec.out_channels = in;
    layer.spec.kh = layer.spec.kw = 2;
    layer.spec.sh = layer.spec.sw = 2;
    Tensor w({in, out, 2, 2});
    rng_.fill_normal(w, std::sqrt(2.0 / static_cast<double>(in)));
    layer.w = register_tensor(name + ".w", std::move(w));
    return layer;
}

BatchNorm Model::add_bn(const std::string& name, std::size_t ch) {
    BatchNorm bn;
    bn.gamma = register_tensor(name + ".gamma", Tensor::full({ch}, 1.0f));
    bn.beta = register_tensor(name + ".beta", Tensor({ch}));
    bn.mean = std::make_shared<Tensor>(std::vector<std::size_t>{ch});
    bn.var = std::make_shared<Tensor>(Tensor::full({ch}, 1.0f));
    buffers_.emplace_back(name + ".running_mean", bn.mean);
    buffers_.emplace_back(name + ".running_var", bn.var);
    return bn;
}

ConvBnRelu Model::add_cbr(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                          std::size_t stride, bool relu) {
    ConvBnRelu cbr;
    cbr.conv = add_conv(name + ".conv", in, out, k, stride, k / 2, false);
    cbr.bn = add_bn(name + ".bn", out);
    cbr.relu = relu;
    return cbr;
}

ResBlock Model::add_res(const std::string& name, std::size_t ch) {
    ResBlock b;
    b.c1 = add_cbr(name + ".c1", ch, ch, 3, 1);
    b.c2 = add_cbr(name + ".c2", ch, ch, 3, 1, false);
    return b;
}

EncoderStage Model::add_stage(const std::string& name, std::size_t in, std::size_t out,
                              std::size_t n_blocks) {
    EncoderStage stage;
    stage.down = add_cbr(name + ".down", in, out, 3, 2);
    for (std::size_t i = 0; i < n_blocks; ++i)
        stage.blocks.push_back(add_res(name + ".b" + std::to_string(i), out));
    return stage;
}

UpBlock Model::add_up(const std::string& name, std::size_t in, std::size_t out) {
    UpBlock up;
    up.up = add_deconv(name + ".up", in, out);
    up.bn = add_bn(name + ".bn", out);
    return up;
}

Model::Model(const NetworkConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    const auto s = [this](std::size_t b) { return cfg_.scaled(b); };

    const std::size_t cp = s(cfg_.cam_pre);
    const std::array<std::size_t, 4> cw{s(cfg_.cam_widths[0]), s(cfg_.cam_widths[1]),
                                        s(cfg_.cam_widths[2]), s(cfg_.cam_widths[3])};
    cam_pre_ = add_cbr("camera.pre", 3, cp, 3, 1);
    cam_stages_.push_back(add_stage("camera.encoder.s1", cp, cw[0], cfg_.blocks[0]));
    cam_stages_.push_back(add_stage("camera.encoder.s2", cw[0], cw[1], cfg_.blocks[1]));
    cam_stages_.push_back(add_stage("camera.encoder.s3", cw[1], cw[2], cfg_.blocks[2]));
    cam_stages_.push_back(add_stage("camera.encoder.s4", cw[2], cw[3], cfg_.blocks[3]));
    cam_up1_ = add_up("camera.decoder.up1", cw[3], cw[2]);
    cam_fuse1_ = add_cbr("camera.decoder.fuse1", 2 * cw[2], cw[2], 3, 1);
    cam_up2_ = add_up("camera.decoder.up2", cw[2], cw[1]);
    cam_fuse2_ = add_cbr("camera.decoder.fuse2", 2 * cw[1], s(cfg_.cam_out), 3, 1);
    cam_expand_ = add_conv("camera.decoder.expand", cfg_.cam_w / 4, cfg_.grid_a, 1, 1, 0, true);

    const std::size_t rp = s(cfg_.radar_pre);
    const std::array<std::size_t, 4> rw{s(cfg_.radar_widths[0]), s(cfg_.radar_widths[1]),
                                        s(cfg_.radar_widths[2]), cfg_.grid_a / 4};
    radar_pre_ = add_cbr("radar.pre", cfg_.radar_channels, rp, 3, 1);
    radar_stages_.push_back(add_stage("radar.encoder.s1", rp, rw[0], cfg_.blocks[0]));
    radar_stages_.push_back(add_stage("radar.encoder.s2", rw[0], rw[1], cfg_.blocks[1]));
    radar_stages_.push_back(add_stage("radar.encoder.s3", rw[1], rw[2], cfg_.blocks[2]));
    radar_stages_.push_back(add_stage("radar.encoder.s4", rw[2], rw[3], cfg_.blocks[3]));
    radar_up1_ = add_up("radar.decoder.up1", cfg_.radar_d / 16, s(cfg_.radar_up));
    radar_up2_ = add_up("radar.decoder.up2", s(cfg_.radar_up), s(cfg_.radar_out));

    std::size_t hin = s(cfg_.cam_out) + s(cfg_.radar_out);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t f = s(cfg_.head_filters[i]);
        head_.push_back(add_cbr("head.conv" + std::to_string(i + 1), hin, f, 3, 1));
        hin = f;
    }
    head_cls_ = add_conv("head.cls", hin, 1, 3, 1, 1, true);
    head_reg_ = add_conv("head.reg", hin, 2, 3, 1, 1, true);
    // Start classification near a 1% occupancy prior so early focal loss is
    // dominated by the sparse positives rather than a sea of negatives.
    head_cls_.b.value().data[0] = -4.595f;
}

std::vector<Var> Model::camera_encoder_forward(const Var& polar_img, bool train) {
    require_shape(polar_img, {3, cfg_.cam_h, cfg_.cam_w}, "camera encoder input");
    std::vector<Var> feats;
    feats.push_back(cam_pre_(polar_img, train));
    for (const EncoderStage& stage : cam_stages_) feats.push_back(stage(feats.back(), train));
    return feats;
}

Var Model::camera_decoder_forward(const std::vector<Var>& feats, bool train) {
    if (feats.size() != 5)
        throw std::invalid_argument("camera decoder: expected 5 encoder features, got " +
                                    std::to_string(feats.size()));
    Var x = cam_up1_(feats[4], train);
    if (x.value().shape[1] != feats[3].value().shape[1] ||
        x.value().shape[2] != feats[3].value().shape[2])
        throw std::invalid_argument("camera decoder: skip size mismatch at stage 3");
    x = cam_fuse1_(autograd::concat_channels<float>({x, feats[3]}), train);
    x = cam_up2_(x, train);
    if (x.value().shape[1] != feats[2].value().shape[1] ||
        x.value().shape[2] != feats[2].value().shape[2])
        throw std::invalid_argument("camera decoder: skip size mismatch at stage 2");
    x = cam_fuse2_(autograd::concat_channels<float>({x, feats[2]}), train);

    x = autograd::permute_axes(x, {2, 1, 0});  // azimuth columns become channels
    x = cam_expand_(x);
    x = autograd::permute_axes(x, {2, 1, 0});
    return x;
}

Var Model::camera_forward(const Var& polar_img, bool train) {
    return camera_decoder_forward(camera_encoder_forward(polar_img, train), train);
}

Var Model::radar_branch_forward(const Var& rd, bool train) {
    require_shape(rd, {cfg_.radar_channels, cfg_.radar_r, cfg_.radar_d}, "radar branch input");
    Var x = radar_pre_(rd, train);
    for (const EncoderStage& stage : radar_stages_) x = stage(x, train);
    x = autograd::permute_axes(x, {2, 1, 0});  // doppler-derived axis becomes azimuth
    x = radar_up1_(x, train);
    x = radar_up2_(x, train);
    return x;
}

DetectionMapPair Model::fuse_and_detect(const Var& cam_feat, const Var& rad_feat, bool train) {
    require_shape(cam_feat, {cfg_.scaled(cfg_.cam_out), cfg_.grid_r, cfg_.grid_a},
                  "fusion camera feature");
    require_shape(rad_feat, {cfg_.scaled(cfg_.radar_out), cfg_.grid_r, cfg_.grid_a},
                  "fusion radar feature");
    Var x = autograd::concat_channels<float>({cam_feat, rad_feat});
    for (const ConvBnRelu& stage : head_) x = stage(x, train);
    DetectionMapPair out;
    // Float sigmoid rounds to exactly 0 or 1 for |logit| above ~17; clamp keeps
    // the confidence map strictly inside (0, 1) for any logit magnitude.
    out.cls = autograd::clamp(autograd::sigmoid(head_cls_(x)), kClsFloor, kClsCeil);
    out.reg = autograd::scale_channels(head_reg_(x),
                                       {static_cast<float>(cfg_.reg_scale[0]),
                                        static_cast<float>(cfg_.reg_scale[1])});
    return out;
}

DetectionMapPair Model::forward(const Var& polar_img, const Var& rd, bool train) {
    Var cam = camera_forward(polar_img, train);
    Var rad = radar_branch_forward(rd, train);
    return fuse_and_detect(cam, rad, train);
}

std::vector<DetectionMapPair> Model::forward(const std::vector<Var>& polar_imgs,
                                             const std::vector<Var>& rds, bool train) {
    if (polar_imgs.size() != rds.size())
        throw std::invalid_argument("batched forward: camera/radar batch size mismatch");
    const std::size_t n = polar_imgs.size();
    if (n == 0) return {};
    if (n == 1) return {forward(polar_imgs[0], rds[0], train)};
    for (const Var& img : polar_imgs)
        require_shape(img, {3, cfg_.cam_h, cfg_.cam_w}, "camera encoder input");
    for (const Var& rd : rds)
        require_shape(rd, {cfg_.radar_channels, cfg_.radar_r, cfg_.radar_d}, "radar branch input");

    std::vector<std::vector<Var>> feats;  // feats[stage][item]
    feats.push_back(cam_pre_(polar_imgs, train));
    for (const EncoderStage& stage : cam_stages_) feats.push_back(stage(feats.back(), train));

    std::vector<Var> cam = cam_up1_(feats[4], train);
    for (std::size_t i = 0; i < n; ++i)
        cam[i] = autograd::concat_channels<float>({cam[i], feats[3][i]});
    cam = cam_up2_(cam_fuse1_(cam, train), train);
    for (std::size_t i = 0; i < n; ++i)
        cam[i] = autograd::concat_channels<float>({cam[i], feats[2][i]});
    cam = cam_fuse2_(cam, train);
    for (Var& x : cam)
        x = autograd::permute_axes(cam_expand_(autograd::permute_axes(x, {2, 1, 0})), {2, 1, 0});

    std::vector<Var> rad = radar_pre_(rds, train);
    for (const EncoderStage& stage : radar_stages_) rad = stage(rad, train);
    for (Var& x : rad) x = autograd::permute_axes(x, {2, 1, 0});
    rad = radar_up2_(radar_up1_(rad, train), train);

    std::vector<Var> x;
    x.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        x.push_back(autograd::concat_channels<float>({cam[i], rad[i]}));
    for (const ConvBnRelu& stage : head_) x = stage(x, train);
    std::vector<DetectionMapPair> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].cls = autograd::clamp(autograd::sigmoid(head_cls_(x[i])), kClsFloor, kClsCeil);
        out[i].reg = autograd::scale_channels(head_reg_(x[i]),
                                              {static_cast<float>(cfg_.reg_scale[0]),
                                               static_cast<float>(cfg_.reg_scale[1])});
    }
    return out;
}

std::size_t Model::count_parameters() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_)
        if (v.requires_grad()) n += v.value().numel();
    return n;
}

void Model::freeze(const std::string& prefix) {
    for (auto& [name, v] : params_)
        if (name.rfind(prefix, 0) == 0) v.node()->requires_grad = false;
}

std::vector<Var> Model::trainable() const {
    std::vector<Var> out;
    for (const auto& [name, v] : params_)
        if (v.requires_grad()) out.push_back(v);
    return out;
}

Model build_network(const NetworkConfig& cfg) { return Model(cfg); }

}  // namespace polarfuse::net

namespace polarfuse::io {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void read_exact(std::istream& is, void* dst, std::size_t n, const std::string& origin) {
    const auto at = is.tellg();
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    const std::size_t got = static_cast<std::size_t>(is.gcount());
    if (got != n)
        throw std::runtime_error(origin + ": truncated checkpoint at byte offset " +
                                 std::to_string((at < 0 ? 0 : static_cast<std::size_t>(at)) + got));
}

std::uint32_t read_u32(std::istream& is, const std::string& origin) {
    unsigned char b[4];
    read_exact(is, b, 4, origin);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const net::Model& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");

    os.write("PFN1", 4);
    KeyValueFile kv;
    model.config().to_kv(kv);
    std::ostringstream cfg_text;
    kv.write(cfg_text);
    const std::string cfg_str = cfg_text.str();
    write_u32(os, static_cast<std::uint32_t>(cfg_str.size()));
    os.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));

    const auto& params = model.parameters();
    const auto& buffers = model.buffers();
    write_u32(os, static_cast<std::uint32_t>(params.size() + buffers.size()));
    const auto write_record = [&os](const std::string& name, const Tensor& t) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_record(os, t);
    };
    for (const auto& [name, v] : params) write_record(name, v.value());
    for (const auto& [name, t] : buffers) write_record(name, *t);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

net::Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

    char magic[4];
    read_exact(is, magic, 4, path);
    if (std::memcmp(magic, "PFN1", 4) != 0)
        throw std::runtime_error(path + ": bad magic (expected PFN1)");

    const std::uint32_t cfg_len = read_u32(is, path);
    std::string cfg_str(cfg_len, '\0');
    read_exact(is, cfg_str.data(), cfg_len, path);
    std::istringstream cfg_stream(cfg_str);
    const KeyValueFile kv = KeyValueFile::parse(cfg_stream, path + " (config block)");
    net::Model model(net::NetworkConfig::from_kv(kv));

    std::unordered_map<std::string, Tensor*> slots;
    for (auto [name, v] : model.parameters()) slots[name] = &v.value();  // vars share nodes
    for (const auto& [name, t] : model.buffers()) slots[name] = t.get();

    const std::uint32_t n_records = read_u32(is, path);
    if (n_records != slots.size())
        throw std::runtime_error(path + ": checkpoint holds " + std::to_string(n_records) +
                                 " tensors, model expects " + std::to_string(slots.size()));
    std::unordered_map<std::string, bool> filled;
    for (std::uint32_t r = 0; r < n_records; ++r) {
        const std::uint32_t name_len = read_u32(is, path);
        if (name_len > 4096) throw std::runtime_error(path + ": unreasonable tensor name length");
        std::string name(name_len, '\0');
        read_exact(is, name.data(), name_len, path);
        const auto it = slots.find(name);
        if (it == slots.end())
            throw std::runtime_error(path + ": unknown tensor \"" + name + "\"");
        if (filled[name]) throw std::runtime_error(path + ": duplicate tensor \"" + name + "\"");
        Tensor t = read_tensor_record(is, path);
        if (t.shape != it->second->shape)
            throw std::runtime_error(path + ": tensor \"" + name + "\" has shape " +
                                     shape_to_string(t.shape) + ", model expects " +
                                     shape_to_string(it->second->shape));
        *it->second = std::move(t);
        filled[name] = true;
    }
    return model;
}

}  // namespace polarfuse::io
