#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "polarfuse/autograd.hpp"
#include "polarfuse/conv.hpp"
#include "polarfuse/kvfile.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse::net {

using autograd::Var;

// Channel widths are bases scaled by `width` (ceil). The output grid never
// scales. Structural constraints tie the grid to the input sizes: the
// decoders upsample the /16 encoder outputs twice, so grid_r = cam_h/4 =
// radar_r/4, and the radar swap turns its last-stage width into azimuth,
// so that stage is fixed at grid_a/4.
struct NetworkConfig {
    double width = 1.0;
    std::size_t cam_h = 512, cam_w = 256;     // camera raster (range x azimuth)
    std::size_t radar_r = 512, radar_d = 256; // rd cube (range x doppler)
    std::size_t radar_channels = 384;         // gathered channels (2*n_rx*n_tx)
    std::array<std::size_t, 4> blocks{3, 6, 6, 3};
    std::array<std::size_t, 4> head_filters{144, 96, 96, 96};
    std::size_t grid_r = 128, grid_a = 224;
    std::size_t cam_pre = 64;
    std::array<std::size_t, 4> cam_widths{64, 96, 128, 160};
    std::size_t radar_pre = 32;
    std::array<std::size_t, 3> radar_widths{32, 40, 48};  // stage 4 = grid_a/4
    std::size_t radar_up = 64;        // radar decoder intermediate channels
    std::size_t cam_out = 128;        // camera feature channels on the grid
    std::size_t radar_out = 128;      // radar feature channels on the grid
    std::array<double, 2> reg_scale{25.0, 45.0};  // head output units per unit activation
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t scaled(std::size_t base) const;

    void to_kv(io::KeyValueFile& kv) const;
    static NetworkConfig from_kv(const io::KeyValueFile& kv);

    // 1/8-width preset on 64x32 inputs with a 16x28 output grid.
    static NetworkConfig desk(std::uint64_t seed = 1);
};

struct DetectionMapPair {
    Var cls;  // (1, grid_r, grid_a), post-sigmoid
    Var reg;  // (2, grid_r, grid_a): channel 0 range, channel 1 azimuth
};

struct Conv2d {
    ConvSpec spec;
    Var w, b;
    Var operator()(const Var& x) const;
};

// Transposed 2x2/stride-2 upsampler. The spec is stored in adjoint form:
// spec.out_channels is this layer's input width.
struct Deconv2d {
    ConvSpec spec;
    Var w;
    Var operator()(const Var& x) const;
};

// Layers also accept a batch of items (one Var per item). Batchnorm is the
// only cross-item operation: in training mode it pools statistics over the
// whole batch, so a batched forward matches true batched normalization. A
// one-item batch reproduces the single-item path bit-exactly.
struct BatchNorm {
    Var gamma, beta;
    std::shared_ptr<Tensor> mean, var;
    float momentum = 0.1f;
    float eps = 1e-5f;
    Var operator()(const Var& x, bool train) const;
    std::vector<Var> operator()(const std::vector<Var>& xs, bool train) const;
};

struct ConvBnRelu {
    Conv2d conv;
    BatchNorm bn;
    bool relu = true;
    Var operator()(const Var& x, bool train) const;
    std::vector<Var> operator()(const std::vector<Var>& xs, bool train) const;
};

struct ResBlock {
    ConvBnRelu c1;
    ConvBnRelu c2;  // built with relu = false; applied after the skip add
    Var operator()(const Var& x, bool train) const;
    std::vector<Var> operator()(const std::vector<Var>& xs, bool train) const;
};

struct EncoderStage {
    ConvBnRelu down;  // stride-2 width change
    std::vector<ResBlock> blocks;
    Var operator()(const Var& x, bool train) const;
    std::vector<Var> operator()(const std::vector<Var>& xs, bool train) const;
};

struct UpBlock {
    Deconv2d up;
    BatchNorm bn;
    Var operator()(const Var& x, bool train) const;
    std::vector<Var> operator()(const std::vector<Var>& xs, bool train) const;
};

class Model {
public:
    explicit Model(const NetworkConfig& cfg);

    const NetworkConfig& config() const { return cfg_; }

    // Returns [pre, stage1, stage2, stage3, stage4] features.
    std::vector<Var> camera_encoder_forward(const Var& polar_img, bool train = false);
    // Upsamples with skip connections, then swaps azimuth through the channel
    // axis to expand cam_w/4 columns to grid_a.
    Var camera_decoder_forward(const std::vector<Var>& feats, bool train = false);
    Var camera_forward(const Var& polar_img, bool train = false);
    // Encodes the reorganized rd tensor, swaps Doppler into the azimuth axis,
    // and upsamples onto the output grid.
    Var radar_branch_forward(const Var& rd, bool train = false);
    DetectionMapPair fuse_and_detect(const Var& cam_feat, const Var& rad_feat, bool train = false);
    DetectionMapPair forward(const Var& polar_img, const Var& rd, bool train = false);
    // Batched forward; in training mode batchnorm pools statistics across the
    // items, so this is true batched normalization rather than a loop over
    // single-item passes. One item reproduces the single-item path bit-exactly.
    std::vector<DetectionMapPair> forward(const std::vector<Var>& polar_imgs,
                                          const std::vector<Var>& rds, bool train = false);

    std::size_t count_parameters() const;  // trainable elements
    void freeze(const std::string& prefix);
    const std::vector<std::pair<std::string, Var>>& parameters() const { return params_; }
    const std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>& buffers() const {
        return buffers_;
    }
    std::vector<Var> trainable() const;

private:
    Var register_tensor(const std::string& name, Tensor value, bool requires_grad = true);
    Conv2d add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                    std::size_t stride, std::size_t pad, bool bias);
    Deconv2d add_deconv(const std::string& name, std::size_t in, std::size_t out);
    BatchNorm add_bn(const std::string& name, std::size_t ch);
    ConvBnRelu add_cbr(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                       std::size_t stride, bool relu = true);
    ResBlock add_res(const std::string& name, std::size_t ch);
    EncoderStage add_stage(const std::string& name, std::size_t in, std::size_t out,
                           std::size_t n_blocks);
    UpBlock add_up(const std::string& name, std::size_t in, std::size_t out);

    NetworkConfig cfg_;
    Rng rng_;

    ConvBnRelu cam_pre_;
    std::vector<EncoderStage> cam_stages_;
    UpBlock cam_up1_, cam_up2_;
    ConvBnRelu cam_fuse1_, cam_fuse2_;
    Conv2d cam_expand_;

    ConvBnRelu radar_pre_;
    std::vector<EncoderStage> radar_stages_;
    UpBlock radar_up1_, radar_up2_;

    std::vector<ConvBnRelu> head_;
    Conv2d head_cls_, head_reg_;

    std::vector<std::pair<std::string, Var>> params_;
    std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> buffers_;
};

Model build_network(const NetworkConfig& cfg);

}  // namespace polarfuse::net

namespace polarfuse::io {

// Checkpoint layout: "PFN1" | u32 config length | config key-value text |
// u32 record count | records of (u32 name length, name, RDT1 float tensor).
// Parameters come first in registration order, then batchnorm buffers.
void save_checkpoint(const std::string& path, const net::Model& model);
net::Model load_checkpoint(const std::string& path);

}  // namespace polarfuse::io
