#include "polarfuse/radar.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "polarfuse/conv.hpp"

namespace polarfuse::radar {

void check_finite(const RdTensor& rd, const char* where) {
    for (std::size_t i = 0; i < rd.data.size(); ++i) {
        if (!std::isfinite(rd.data[i].real()) || !std::isfinite(rd.data[i].imag()))
            throw std::runtime_error(std::string(where) + ": non-finite sample at index " +
                                     std::to_string(i));
    }
}

std::string MimoConfig::validate() const {
    if (n_tx == 0) throw std::invalid_argument("mimo config: n_tx must be positive");
    if (d_max == 0) throw std::invalid_argument("mimo config: d_max must be positive");
    if (delta < 1 || delta >= d_max)
        throw std::invalid_argument("mimo config: doppler shift " + std::to_string(delta) +
                                    " outside [1, " + std::to_string(d_max) + ")");
    if (n_tx * delta > d_max)
        return "mimo config: n_tx*delta = " + std::to_string(n_tx * delta) + " exceeds " +
               std::to_string(d_max) + " doppler bins; transmitter signatures alias";
    return "";
}

std::size_t default_doppler_shift(std::size_t n_tx, std::size_t d_max) {
    if (n_tx == 0) throw std::invalid_argument("default_doppler_shift: n_tx must be positive");
    return d_max / n_tx;
}

Tensor stack_complex_channels(const RdTensor& rd) {
    if (rd.n_range == 0 || rd.n_doppler == 0 || rd.n_rx == 0)
        throw std::invalid_argument("stack_complex_channels: empty cube");
    Tensor out({2 * rd.n_rx, rd.n_range, rd.n_doppler});
    const std::size_t plane = rd.n_range * rd.n_doppler;
    for (std::size_t r = 0; r < rd.n_range; ++r) {
        for (std::size_t d = 0; d < rd.n_doppler; ++d) {
            const std::complex<float>* src = &rd.data[(r * rd.n_doppler + d) * rd.n_rx];
            const std::size_t cell = r * rd.n_doppler + d;
            for (std::size_t c = 0; c < rd.n_rx; ++c) {
                out.data[(2 * c) * plane + cell] = src[c].real();
                out.data[(2 * c + 1) * plane + cell] = src[c].imag();
            }
        }
    }
    return out;
}

RdTensor unstack_complex_channels(const Tensor& t, std::size_t n_tx) {
    if (t.ndim() != 3)
        throw std::invalid_argument("unstack_complex_channels: expected 3-d tensor, got " +
                                    shape_to_string(t.shape));
    if (t.shape[0] % 2 != 0)
        throw std::invalid_argument("unstack_complex_channels: channel count " +
                                    std::to_string(t.shape[0]) + " is odd");
    RdTensor rd(t.shape[1], t.shape[2], t.shape[0] / 2, n_tx);
    const std::size_t plane = rd.n_range * rd.n_doppler;
    for (std::size_t r = 0; r < rd.n_range; ++r) {
        for (std::size_t d = 0; d < rd.n_doppler; ++d) {
            const std::size_t cell = r * rd.n_doppler + d;
            std::complex<float>* dst = &rd.data[cell * rd.n_rx];
            for (std::size_t c = 0; c < rd.n_rx; ++c)
                dst[c] = {t.data[(2 * c) * plane + cell], t.data[(2 * c + 1) * plane + cell]};
        }
    }
    return rd;
}

Tensor mimo_reorganize(const Tensor& input, const MimoConfig& cfg, DopplerFold fold) {
    if (input.ndim() != 3)
        throw std::invalid_argument("mimo_reorganize: expected 3-d tensor, got " +
                                    shape_to_string(input.shape));
    const std::size_t C = input.shape[0], R = input.shape[1], D = input.shape[2];
    if (D != cfg.d_max)
        throw std::invalid_argument("mimo_reorganize: tensor has " + std::to_string(D) +
                                    " doppler bins, config expects " + std::to_string(cfg.d_max));
    if (cfg.n_tx == 0) throw std::invalid_argument("mimo_reorganize: n_tx must be positive");
    if (cfg.delta >= D)
        throw std::invalid_argument("mimo_reorganize: doppler shift " + std::to_string(cfg.delta) +
                                    " out of range for " + std::to_string(D) + " bins");

    Tensor out({C * cfg.n_tx, R, D});
    for (std::size_t k = 0; k < cfg.n_tx; ++k) {
        const std::size_t shift = k * cfg.delta;
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t r = 0; r < R; ++r) {
                const float* src = &input.data[(c * R + r) * D];
                float* dst = &out.data[((k * C + c) * R + r) * D];
                if (fold == DopplerFold::wrap) {
                    const std::size_t s = shift % D;
                    std::memcpy(dst, src + s, (D - s) * sizeof(float));
                    std::memcpy(dst + (D - s), src, s * sizeof(float));
                } else {
                    const std::size_t live = shift < D ? D - shift : 0;
                    std::memcpy(dst, src + shift, live * sizeof(float));
                    for (std::size_t d = live; d < D; ++d) dst[d] = src[D - 1];
                }
            }
        }
    }
    return out;
}

Tensor mimo_reorganize_conv(const Tensor& input, const MimoConfig& cfg) {
    if (input.ndim() != 3)
        throw std::invalid_argument("mimo_reorganize_conv: expected 3-d tensor, got " +
                                    shape_to_string(input.shape));
    const std::size_t C = input.shape[0], R = input.shape[1], D = input.shape[2];
    if (D != cfg.d_max || cfg.n_tx == 0 || cfg.delta < 1 || cfg.delta >= D)
        throw std::invalid_argument("mimo_reorganize_conv: invalid config for " +
                                    shape_to_string(input.shape));

    const std::size_t ext_w = D + (cfg.n_tx - 1) * cfg.delta;
    Tensor ext({C, R, ext_w});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < R; ++r) {
            const float* src = &input.data[(c * R + r) * D];
            float* dst = &ext.data[(c * R + r) * ext_w];
            for (std::size_t j = 0; j < ext_w; ++j) dst[j] = src[j % D];
        }

    ConvSpec spec;
    spec.in_channels = C;
    spec.out_channels = C * cfg.n_tx;
    spec.kh = 1;
    spec.kw = cfg.n_tx;
    spec.dw = cfg.delta;
    Tensor w({spec.out_channels, C, 1, cfg.n_tx});
    for (std::size_t k = 0; k < cfg.n_tx; ++k)
        for (std::size_t c = 0; c < C; ++c)
            w.data[(((k * C + c) * C + c) * cfg.n_tx) + k] = 1.0f;
    return conv2d_forward(ext, spec, w);
}

RdTensor synth_rd_scene(const std::vector<RadarTargetSpec>& targets, const MimoConfig& cfg,
                        std::size_t n_range, std::size_t n_rx, double noise_sigma,
                        std::uint64_t seed) {
    if (n_range == 0 || n_rx == 0 || cfg.d_max == 0 || cfg.n_tx == 0)
        throw std::invalid_argument("synth_rd_scene: empty cube dimensions");
    RdTensor rd(n_range, cfg.d_max, n_rx, cfg.n_tx);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const RadarTargetSpec& tg = targets[t];
        if (tg.range_bin >= n_range || tg.doppler_bin >= cfg.d_max)
            throw std::out_of_range("synth_rd_scene: target " + std::to_string(t) + " at bin (" +
                                    std::to_string(tg.range_bin) + ", " +
                                    std::to_string(tg.doppler_bin) + ") outside " +
                                    std::to_string(n_range) + "x" + std::to_string(cfg.d_max));
        for (std::size_t k = 0; k < cfg.n_tx; ++k) {
            const std::size_t d = (tg.doppler_bin + k * cfg.delta) % cfg.d_max;
            for (std::size_t c = 0; c < n_rx; ++c) {
                const std::complex<double> v =
                    tg.amplitude * std::polar(1.0, tg.phase_step * static_cast<double>(c));
                rd.at(tg.range_bin, d, c) += std::complex<float>(v);
            }
        }
    }
    if (noise_sigma > 0.0) {
        Rng rng(seed);
        for (auto& z : rd.data)
            z += std::complex<float>(static_cast<float>(rng.normal() * noise_sigma),
                                     static_cast<float>(rng.normal() * noise_sigma));
    }
    return rd;
}

}  // namespace polarfuse::radar

namespace polarfuse::io {

namespace {

constexpr std::size_t kMaxDims = 8;
constexpr std::size_t kMaxElems = std::size_t(1) << 31;

void write_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

// Floats travel as their IEEE-754 bit patterns in little-endian u32s, so a
// round trip is bit-exact.
void write_f32_block(std::ostream& os, const float* src, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t v = 0;
            std::memcpy(&v, &src[i], 4);
            write_u32(os, v);
        }
    }
}

void decode_f32_block(const unsigned char* bytes, float* dst, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst, bytes, n * 4);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t v = get_u32(bytes + 4 * i);
            std::memcpy(&dst[i], &v, 4);
        }
    }
}

// `offset` tracks the absolute stream position for error messages.
void read_exact(std::istream& is, void* dst, std::size_t n, std::size_t& offset,
                const std::string& origin) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    const std::size_t got = static_cast<std::size_t>(is.gcount());
    if (got != n)
        throw std::runtime_error(origin + ": truncated file at byte offset " +
                                 std::to_string(offset + got));
    offset += n;
}

void write_header(std::ostream& os, const std::vector<std::size_t>& dims, std::uint8_t dtype) {
    os.write("RDT1", 4);
    write_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) write_u32(os, static_cast<std::uint32_t>(d));
    os.put(static_cast<char>(dtype));
}

struct RdtHeader {
    std::vector<std::size_t> dims;
    std::uint8_t dtype = 0;
    std::size_t elems = 1;
};

RdtHeader read_header(std::istream& is, std::size_t& offset, const std::string& origin) {
    unsigned char magic[4];
    read_exact(is, magic, 4, offset, origin);
    if (std::memcmp(magic, "RDT1", 4) != 0)
        throw std::runtime_error(origin + ": bad magic (expected RDT1)");
    unsigned char raw[4];
    read_exact(is, raw, 4, offset, origin);
    const std::uint32_t ndim = get_u32(raw);
    if (ndim == 0 || ndim > kMaxDims)
        throw std::runtime_error(origin + ": unreasonable dimension count " +
                                 std::to_string(ndim));
    std::vector<unsigned char> dim_bytes(4 * ndim);
    read_exact(is, dim_bytes.data(), dim_bytes.size(), offset, origin);
    RdtHeader h;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = get_u32(&dim_bytes[4 * i]);
        if (d == 0) throw std::runtime_error(origin + ": zero-sized dimension " + std::to_string(i));
        h.dims.push_back(d);
        if (h.elems > kMaxElems / d)
            throw std::runtime_error(origin + ": element count overflow");
        h.elems *= d;
    }
    unsigned char tag = 0;
    read_exact(is, &tag, 1, offset, origin);
    h.dtype = tag;
    return h;
}

std::size_t stream_pos(std::istream& is) {
    const auto p = is.tellg();
    return p < 0 ? 0 : static_cast<std::size_t>(p);
}

}  // namespace

void write_rd_tensor(std::ostream& os, const radar::RdTensor& rd) {
    write_header(os, {rd.n_range, rd.n_doppler, rd.n_rx}, kRdtComplex64);
    static_assert(sizeof(std::complex<float>) == 8);
    write_f32_block(os, reinterpret_cast<const float*>(rd.data.data()), 2 * rd.data.size());
    if (!os) throw std::runtime_error("rd tensor: write failed");
}

radar::RdTensor read_rd_tensor(std::istream& is, const std::string& origin) {
    std::size_t offset = stream_pos(is);
    const RdtHeader h = read_header(is, offset, origin);
    if (h.dims.size() != 3)
        throw std::runtime_error(origin + ": rd tensor must be 3-d, file has " +
                                 std::to_string(h.dims.size()) + " dims");
    if (h.dtype != kRdtComplex64)
        throw std::runtime_error(origin + ": unsupported dtype tag " + std::to_string(h.dtype) +
                                 " (expected complex64)");
    radar::RdTensor rd(h.dims[0], h.dims[1], h.dims[2]);
    std::vector<unsigned char> bytes(8 * h.elems);
    read_exact(is, bytes.data(), bytes.size(), offset, origin);
    decode_f32_block(bytes.data(), reinterpret_cast<float*>(rd.data.data()), 2 * h.elems);
    return rd;
}

void save_rd_tensor(const std::string& path, const radar::RdTensor& rd) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("rd tensor: cannot open " + path + " for writing");
    write_rd_tensor(os, rd);
}

radar::RdTensor load_rd_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("rd tensor: cannot open " + path);
    return read_rd_tensor(is, path);
}

void write_tensor_record(std::ostream& os, const Tensor& t) {
    if (t.ndim() == 0) throw std::invalid_argument("tensor record: empty shape");
    write_header(os, t.shape, kRdtFloat32);
    write_f32_block(os, t.data.data(), t.data.size());
    if (!os) throw std::runtime_error("tensor record: write failed");
}

Tensor read_tensor_record(std::istream& is, const std::string& origin) {
    std::size_t offset = stream_pos(is);
    const RdtHeader h = read_header(is, offset, origin);
    if (h.dtype != kRdtFloat32)
        throw std::runtime_error(origin + ": unsupported dtype tag " + std::to_string(h.dtype) +
                                 " (expected float32)");
    Tensor t(h.dims);
    std::vector<unsigned char> bytes(4 * h.elems);
    read_exact(is, bytes.data(), bytes.size(), offset, origin);
    decode_f32_block(bytes.data(), t.data.data(), h.elems);
    return t;
}

}  // namespace polarfuse::io
