#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fame/network.hpp"

namespace fame {

/// 8-bit grayscale or RGB raster as stored in binary PGM (P5) / PPM (P6).
struct Image {
    std::size_t width = 0, height = 0, channels = 1;
    std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

namespace detail {

inline std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        in >> std::ws;
        if (in.peek() == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        in >> tok;
        break;
    }
    return tok;
}

inline std::string extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext;
}

}  // namespace detail

inline Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::ios_base::failure("cannot open image '" + path + "'");
    const std::string magic = detail::next_token(in);
    Image img;
    if (magic == "P5") img.channels = 1;
    else if (magic == "P6") img.channels = 3;
    else throw ParseError("'" + path + "' is not a binary PGM/PPM (P5/P6) file");
    try {
        img.width = std::stoul(detail::next_token(in));
        img.height = std::stoul(detail::next_token(in));
        const unsigned long maxval = std::stoul(detail::next_token(in));
        if (maxval == 0 || maxval > 255) throw ParseError("'" + path + "': only 8-bit images are supported");
        in.get();  // single whitespace after the header
        img.pixels.resize(img.width * img.height * img.channels);
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw ParseError("'" + path + "': truncated pixel data");
        if (maxval != 255)
            for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::min<unsigned long>(255, (p * 255ul + maxval / 2) / maxval));
    } catch (const std::invalid_argument&) {
        throw ParseError("'" + path + "': malformed header");
    }
    return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::ios_base::failure("cannot write image '" + path + "'");
    out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

/// Pixels in CHW order scaled to [0,1].
inline Vector image_to_input(const Image& img) {
    Vector x(static_cast<Eigen::Index>(img.pixels.size()));
    const std::size_t plane = img.width * img.height;
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t p = 0; p < plane; ++p)
            x(static_cast<Eigen::Index>(c * plane + p)) = img.pixels[p * img.channels + c] / 255.0;
    return x;
}

/// Reads an input vector from a JSON array (nested arrays are flattened),
/// a CSV line, or a binary PGM/PPM image.
inline Vector read_input(const std::string& path) {
    const std::string ext = detail::extension(path);
    if (ext == "pgm" || ext == "ppm" || ext == "pnm") return image_to_input(read_pnm(path));
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open input '" + path + "'");
    std::vector<double> values;
    if (ext == "json") {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("input '" + path + "': " + e.what());
        }
        auto walk = [&](auto&& self, const nlohmann::json& node) -> void {
            if (node.is_array()) {
                for (const auto& v : node) self(self, v);
            } else if (node.is_number()) {
                values.push_back(node.get<double>());
            } else {
                throw ParseError("input '" + path + "': expected an array of numbers");
            }
        };
        walk(walk, j);
    } else {
        std::string line;
        while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {}
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ParseError("input '" + path + "': '" + cell + "' is not a number");
            }
        }
    }
    if (values.empty()) throw ParseError("input '" + path + "' is empty");
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace fame
