#include "polarfuse/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace polarfuse {

void RgbImage::fill(float r, float g, float b) {
    const std::size_t hw = height * width;
    std::fill(data.begin(), data.begin() + hw, r);
    std::fill(data.begin() + hw, data.begin() + 2 * hw, g);
    std::fill(data.begin() + 2 * hw, data.end(), b);
}

Tensor RgbImage::channel_tensor(std::size_t c) const {
    Tensor t({height, width});
    std::copy(data.begin() + c * height * width, data.begin() + (c + 1) * height * width,
              t.data.begin());
    return t;
}

Tensor RgbImage::to_tensor() const {
    Tensor t({3, height, width});
    std::copy(data.begin(), data.end(), t.data.begin());
    return t;
}

RgbImage RgbImage::from_tensor(const Tensor& t) {
    if (t.ndim() != 3 || t.shape[0] != 3)
        throw std::invalid_argument("from_tensor: expected (3,H,W), got " + shape_to_string(t.shape));
    RgbImage img(t.shape[1], t.shape[2]);
    std::copy(t.data.begin(), t.data.end(), img.data.begin());
    return img;
}

namespace io {

namespace {

int next_pnm_int(std::istream& in) {
    // skips whitespace and '#' comments per the PNM grammar
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw std::runtime_error("pnm: truncated header");
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error("pnm: malformed header");
    return v;
}

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

RgbImage load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') throw std::runtime_error(path + ": not a binary PPM");
    const int w = next_pnm_int(in);
    const int h = next_pnm_int(in);
    const int maxval = next_pnm_int(in);
    if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path + ": unsupported PPM");
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw std::runtime_error(path + ": truncated pixel data");
    RgbImage img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    for (std::size_t i = 0; i < img.height; ++i)
        for (std::size_t j = 0; j < img.width; ++j)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, i, j) = raw[(i * img.width + j) * 3 + c] / 255.0f;
    return img;
}

void save_ppm(const RgbImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> raw(img.height * img.width * 3);
    for (std::size_t i = 0; i < img.height; ++i)
        for (std::size_t j = 0; j < img.width; ++j)
            for (std::size_t c = 0; c < 3; ++c)
                raw[(i * img.width + j) * 3 + c] = to_byte(img.at(c, i, j));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::uint8_t> load_pgm(const std::string& path, std::size_t& h, std::size_t& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw std::runtime_error(path + ": not a binary PGM");
    const int ww = next_pnm_int(in);
    const int hh = next_pnm_int(in);
    const int maxval = next_pnm_int(in);
    if (ww <= 0 || hh <= 0 || maxval != 255) throw std::runtime_error(path + ": unsupported PGM");
    h = static_cast<std::size_t>(hh);
    w = static_cast<std::size_t>(ww);
    std::vector<std::uint8_t> gray(h * w);
    in.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (in.gcount() != static_cast<std::streamsize>(gray.size()))
        throw std::runtime_error(path + ": truncated pixel data");
    return gray;
}

void save_pgm(const std::vector<std::uint8_t>& gray, std::size_t h, std::size_t w,
              const std::string& path) {
    if (gray.size() != h * w) throw std::invalid_argument("save_pgm: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace io

}  // namespace polarfuse
