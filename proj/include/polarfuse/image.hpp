#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polarfuse/tensor.hpp"

namespace polarfuse {

// Planar float RGB in [0,1] plus a validity mask (0 = no source coverage).
struct RgbImage {
    std::size_t height = 0, width = 0;
    std::vector<float> data;        // 3 * height * width, channel-planar
    std::vector<std::uint8_t> mask; // height * width, 1 = valid

    RgbImage() = default;
    RgbImage(std::size_t h, std::size_t w)
        : height(h), width(w), data(3 * h * w, 0.0f), mask(h * w, 1) {}

    float& at(std::size_t c, std::size_t i, std::size_t j) {
        return data[(c * height + i) * width + j];
    }
    float at(std::size_t c, std::size_t i, std::size_t j) const {
        return data[(c * height + i) * width + j];
    }
    std::uint8_t& mask_at(std::size_t i, std::size_t j) { return mask[i * width + j]; }
    std::uint8_t mask_at(std::size_t i, std::size_t j) const { return mask[i * width + j]; }

    void fill(float r, float g, float b);

    // One channel as a (H, W) tensor.
    Tensor channel_tensor(std::size_t c) const;

    // All three channels stacked (3, H, W).
    Tensor to_tensor() const;
    static RgbImage from_tensor(const Tensor& t);
};

namespace io {

RgbImage load_ppm(const std::string& path);
void save_ppm(const RgbImage& img, const std::string& path);

std::vector<std::uint8_t> load_pgm(const std::string& path, std::size_t& h, std::size_t& w);
void save_pgm(const std::vector<std::uint8_t>& gray, std::size_t h, std::size_t w,
              const std::string& path);

}  // namespace io

}  // namespace polarfuse
