#include "stemdeg/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "ATDF serialization assumes a little-endian host");

namespace stemdeg {

using nlohmann::json;

void write_atdf(const std::string& path, const FrameTensor& t) {
    if (t.height <= 0 || t.width <= 0 || t.channels <= 0)
        throw DimensionError("write_atdf: empty tensor");
    if (t.data.size() !=
        static_cast<std::size_t>(t.height) * t.width * t.channels)
        throw DimensionError("write_atdf: data length mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_atdf: cannot open " + path);
    f << "ATDF1\n" << t.height << " " << t.width << " " << t.channels << "\n";
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw FormatError("write_atdf: write failed for " + path);
}

FrameTensor read_atdf(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_atdf: cannot open " + path);
    std::string magic;
    if (!std::getline(f, magic) || magic != "ATDF1")
        throw FormatError("read_atdf: bad magic in " + path, 0);
    std::string header;
    if (!std::getline(f, header))
        throw FormatError("read_atdf: missing header in " + path, 6);
    std::istringstream hs(header);
    FrameTensor t;
    if (!(hs >> t.height >> t.width >> t.channels) || t.height <= 0 ||
        t.width <= 0 || t.channels <= 0)
        throw FormatError("read_atdf: bad header in " + path, 6);
    const std::size_t n =
        static_cast<std::size_t>(t.height) * t.width * t.channels;
    t.data.resize(n);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(f.gcount()) != n * sizeof(float))
        throw FormatError("read_atdf: truncated payload in " + path,
                          static_cast<long>(6 + header.size() + 1 + f.gcount()));
    return t;
}

void write_atdf_image(const std::string& path, const ImageGrid& img) {
    FrameTensor t;
    t.height = img.height;
    t.width = img.width;
    t.channels = 1;
    t.data = img.data;
    write_atdf(path, t);
}

ImageGrid read_atdf_image(const std::string& path) {
    const FrameTensor t = read_atdf(path);
    if (t.channels != 1)
        throw FormatError("read_atdf_image: expected 1 channel in " + path);
    ImageGrid img(t.height, t.width);
    img.data = t.data;
    return img;
}

void write_pgm16(const std::string& path, const ImageGrid& img) {
    validate_image(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_pgm16: cannot open " + path);
    f << "P5\n" << img.width << " " << img.height << "\n65535\n";
    std::vector<unsigned char> buf(img.data.size() * 2);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = img.data[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        buf[2 * i] = static_cast<unsigned char>(q >> 8);  // big-endian sample
        buf[2 * i + 1] = static_cast<unsigned char>(q & 0xFF);
    }
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError("write_pgm16: write failed for " + path);
}

namespace {

/// Reads one whitespace-delimited PGM header token, skipping '#' comments.
std::string pgm_token(std::istream& f) {
    std::string tok;
    int ch;
    while ((ch = f.get()) != EOF) {
        if (ch == '#') {
            while ((ch = f.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (!std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            break;
        }
    }
    while ((ch = f.get()) != EOF && !std::isspace(ch))
        tok.push_back(static_cast<char>(ch));
    return tok;
}

} // namespace

ImageGrid read_pgm16(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_pgm16: cannot open " + path);
    if (pgm_token(f) != "P5")
        throw FormatError("read_pgm16: not a binary PGM (P5): " + path, 0);
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(pgm_token(f));
        h = std::stoi(pgm_token(f));
        maxval = std::stoi(pgm_token(f));
    } catch (const std::exception&) {
        throw FormatError("read_pgm16: malformed header in " + path,
                          static_cast<long>(f.tellg()));
    }
    if (w <= 0 || h <= 0 || maxval != 65535)
        throw FormatError("read_pgm16: expected maxval 65535 in " + path,
                          static_cast<long>(f.tellg()));
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<unsigned char> buf(n * 2);
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(f.gcount()) != buf.size())
        throw FormatError("read_pgm16: truncated payload in " + path,
                          static_cast<long>(f.tellg()));
    ImageGrid img(h, w);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned v = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
        img.data[i] = static_cast<float>(v / 65535.0);
    }
    return img;
}

void write_image_auto(const std::string& path, const ImageGrid& img) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".pgm")
        write_pgm16(path, img);
    else
        write_atdf_image(path, img);
}

ImageGrid read_image_auto(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".pgm")
        return read_pgm16(path);
    return read_atdf_image(path);
}

void write_estimate(const std::string& json_path, const Estimate& est,
                    const std::string& decay_path) {
    write_atdf_image(decay_path, est.decay);
    json j;
    j["theta_deg"] = est.affine.theta_deg;
    j["tx_px"] = est.affine.tx_px;
    j["ty_px"] = est.affine.ty_px;
    j["residual"] = est.residual;
    j["converged"] = est.converged;
    j["iterations"] = est.iterations;
    j["valid_fraction"] = est.valid_fraction;
    j["decay_path"] = std::filesystem::path(decay_path).filename().string();
    std::ofstream f(json_path, std::ios::binary);
    if (!f) throw FormatError("write_estimate: cannot open " + json_path);
    f << j.dump(2) << "\n";
    if (!f) throw FormatError("write_estimate: write failed for " + json_path);
}

Estimate read_estimate(const std::string& json_path) {
    std::ifstream f(json_path, std::ios::binary);
    if (!f) throw FormatError("read_estimate: cannot open " + json_path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("read_estimate: bad JSON: ") + e.what());
    }
    Estimate est;
    try {
        est.affine.theta_deg = j.at("theta_deg").get<double>();
        est.affine.tx_px = j.at("tx_px").get<double>();
        est.affine.ty_px = j.at("ty_px").get<double>();
        est.residual = j.at("residual").get<double>();
        est.converged = j.at("converged").get<bool>();
        est.iterations = j.at("iterations").get<int>();
        est.valid_fraction = j.at("valid_fraction").get<double>();
        const std::string decay =
            (std::filesystem::path(json_path).parent_path() /
             j.at("decay_path").get<std::string>())
                .string();
        est.decay = read_atdf_image(decay);
    } catch (const json::exception& e) {
        throw FormatError(std::string("read_estimate: missing key: ") + e.what());
    }
    return est;
}

void write_spec_json(const std::string& path, const DegradationSpecFile& spec) {
    json j;
    j["theta_deg"] = spec.affine_T.theta_deg;
    j["tx_px"] = spec.affine_T.tx_px;
    j["ty_px"] = spec.affine_T.ty_px;
    j["total_steps"] = spec.total_steps;
    j["min_survival"] = spec.min_survival;
    j["decay_cells"] = spec.decay_cells;
    j["decay_octaves"] = spec.decay_octaves;
    j["noise"] = {{"dose", spec.noise.dose},
                  {"jitter_sigma", spec.noise.jitter_sigma},
                  {"readout_sigma", spec.noise.readout_sigma},
                  {"poisson_enabled", spec.noise.poisson_enabled},
                  {"jitter_enabled", spec.noise.jitter_enabled},
                  {"readout_enabled", spec.noise.readout_enabled}};
    j["seed"] = spec.seed;
    j["lambda_path"] = spec.lambda_path;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_spec_json: cannot open " + path);
    f << j.dump(2) << "\n";
    if (!f) throw FormatError("write_spec_json: write failed for " + path);
}

DegradationSpecFile read_spec_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_spec_json: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("read_spec_json: bad JSON: ") + e.what());
    }
    DegradationSpecFile s;
    try {
        s.affine_T.theta_deg = j.at("theta_deg").get<double>();
        s.affine_T.tx_px = j.at("tx_px").get<double>();
        s.affine_T.ty_px = j.at("ty_px").get<double>();
        s.total_steps = j.at("total_steps").get<int>();
        s.min_survival = j.at("min_survival").get<double>();
        s.decay_cells = j.at("decay_cells").get<int>();
        s.decay_octaves = j.at("decay_octaves").get<int>();
        const auto& n = j.at("noise");
        s.noise.dose = n.at("dose").get<double>();
        s.noise.jitter_sigma = n.at("jitter_sigma").get<double>();
        s.noise.readout_sigma = n.at("readout_sigma").get<double>();
        s.noise.poisson_enabled = n.at("poisson_enabled").get<bool>();
        s.noise.jitter_enabled = n.at("jitter_enabled").get<bool>();
        s.noise.readout_enabled = n.at("readout_enabled").get<bool>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.lambda_path = j.at("lambda_path").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("read_spec_json: missing key: ") + e.what());
    }
    return s;
}

} // namespace stemdeg
