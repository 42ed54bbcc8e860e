#pragma once

#include <string>
#include <vector>

#include "stemdeg/estimate.hpp"
#include "stemdeg/image.hpp"
#include "stemdeg/synth.hpp"

namespace stemdeg {

/// Multi-channel frame tensor, the in-memory form of an ATDF file.
struct FrameTensor {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<float> data;  // row-major, channel-interleaved
};

/// ATDF: magic "ATDF1\n", ASCII header "h w c\n", then h*w*c float32
/// little-endian values, row-major and channel-interleaved. Round-trips
/// bit-exactly.
void write_atdf(const std::string& path, const FrameTensor& t);
FrameTensor read_atdf(const std::string& path);

void write_atdf_image(const std::string& path, const ImageGrid& img);
ImageGrid read_atdf_image(const std::string& path);

/// 16-bit binary PGM (P5, maxval 65535, big-endian samples) with the linear
/// map [0,1] <-> [0,65535] and round-to-nearest quantization.
void write_pgm16(const std::string& path, const ImageGrid& img);
ImageGrid read_pgm16(const std::string& path);

/// Writes an image by extension: ".pgm" as 16-bit PGM, anything else as ATDF.
void write_image_auto(const std::string& path, const ImageGrid& img);
ImageGrid read_image_auto(const std::string& path);

/// Estimate JSON with keys {"theta_deg","tx_px","ty_px","residual",
/// "converged","iterations","valid_fraction","decay_path"}; the decay map is
/// stored separately as an ATDF file named by decay_path.
void write_estimate(const std::string& json_path, const Estimate& est,
                    const std::string& decay_path);

/// Reads the estimate back, resolving decay_path relative to the JSON file.
Estimate read_estimate(const std::string& json_path);

/// Scalar DegradationSpec fields as JSON (the decay field itself is
/// referenced by path).
struct DegradationSpecFile {
    AffineParams affine_T;
    int total_steps = 10;
    double min_survival = 0.2;
    int decay_cells = 4;
    int decay_octaves = 2;
    NoiseConfig noise;
    std::uint64_t seed = 0;
    std::string lambda_path;
};
void write_spec_json(const std::string& path, const DegradationSpecFile& spec);
DegradationSpecFile read_spec_json(const std::string& path);

} // namespace stemdeg
