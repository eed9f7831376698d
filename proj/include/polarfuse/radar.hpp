#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "polarfuse/tensor.hpp"

namespace polarfuse::radar {

// Complex range-Doppler cube, row-major [range][doppler][rx].
struct RdTensor {
    std::size_t n_range = 0;
    std::size_t n_doppler = 0;
    std::size_t n_rx = 0;
    std::size_t n_tx = 12;  // transmitter count, carried as metadata only
    std::vector<std::complex<float>> data;

    RdTensor() = default;
    RdTensor(std::size_t r, std::size_t d, std::size_t rx, std::size_t tx = 12)
        : n_range(r), n_doppler(d), n_rx(rx), n_tx(tx), data(r * d * rx) {}

    std::complex<float>& at(std::size_t r, std::size_t d, std::size_t rx) {
        return data[(r * n_doppler + d) * n_rx + rx];
    }
    std::complex<float> at(std::size_t r, std::size_t d, std::size_t rx) const {
        return data[(r * n_doppler + d) * n_rx + rx];
    }
    std::size_t numel() const { return data.size(); }
};

void check_finite(const RdTensor& rd, const char* where);

// Doppler layout of the time-multiplexed transmitters: transmitter k shifts a
// target's Doppler signature by k*delta bins.
struct MimoConfig {
    std::size_t n_tx = 12;
    std::size_t delta = 21;   // Doppler bins between consecutive transmitters
    std::size_t d_max = 256;  // Doppler bins in the cube

    // Throws on hard violations (zero n_tx/d_max, delta outside [1, d_max)).
    // Returns a warning line when n_tx*delta exceeds d_max (transmitter
    // signatures alias onto each other), empty string otherwise.
    std::string validate() const;
};

// floor(d_max / n_tx): the widest shift whose n_tx signatures stay disjoint.
std::size_t default_doppler_shift(std::size_t n_tx, std::size_t d_max);

// Channel 2c = Re(rx c), channel 2c+1 = Im(rx c); output (2*n_rx, R, D).
Tensor stack_complex_channels(const RdTensor& rd);
RdTensor unstack_complex_channels(const Tensor& t, std::size_t n_tx = 12);

// How Doppler indices past d_max-1 fold back into the cube.
enum class DopplerFold { wrap, clamp };

// Output channel block k (k = 0..n_tx-1) at Doppler column d gathers the
// input at column d + k*delta, folded per `fold`. Output is
// (C*n_tx, R, D) for a (C, R, D) input with D == cfg.d_max. delta = 0 is
// accepted and repeats the input n_tx times.
Tensor mimo_reorganize(const Tensor& input, const MimoConfig& cfg,
                       DopplerFold fold = DopplerFold::wrap);

// The same gather expressed as a dilated convolution over a circularly
// extended Doppler axis (wrap fold, delta >= 1); used to cross-check.
Tensor mimo_reorganize_conv(const Tensor& input, const MimoConfig& cfg);

struct RadarTargetSpec {
    std::size_t range_bin = 0;
    std::size_t doppler_bin = 0;  // base (k = 0) Doppler position
    std::complex<double> amplitude{1.0, 0.0};
    double phase_step = 0.0;  // radians advanced per rx antenna
};

// Deposits each target at (range, (doppler + k*delta) mod d_max) for every
// transmitter k, with value amplitude*exp(i*c*phase_step) at rx antenna c,
// then adds circular Gaussian noise (std noise_sigma per real component).
RdTensor synth_rd_scene(const std::vector<RadarTargetSpec>& targets, const MimoConfig& cfg,
                        std::size_t n_range, std::size_t n_rx, double noise_sigma,
                        std::uint64_t seed);

}  // namespace polarfuse::radar

namespace polarfuse::io {

// RDT1 record: "RDT1" | u32 ndim | u32 dims[ndim] | u8 dtype | payload.
// Little-endian throughout; complex64 payloads interleave f32 re/im.
inline constexpr std::uint8_t kRdtComplex64 = 1;
inline constexpr std::uint8_t kRdtFloat32 = 2;

void write_rd_tensor(std::ostream& os, const radar::RdTensor& rd);
radar::RdTensor read_rd_tensor(std::istream& is, const std::string& origin);
void save_rd_tensor(const std::string& path, const radar::RdTensor& rd);
radar::RdTensor load_rd_tensor(const std::string& path);

void write_tensor_record(std::ostream& os, const Tensor& t);
Tensor read_tensor_record(std::istream& is, const std::string& origin);

}  // namespace polarfuse::io
