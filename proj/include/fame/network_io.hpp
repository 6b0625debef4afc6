#pragma once

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fame/network.hpp"

namespace fame {

namespace detail {

static_assert(std::endian::native == std::endian::little, "weights_b64 decoding assumes a little-endian host");

inline std::string base64_encode(const std::vector<double>& values) {
    using namespace boost::archive::iterators;
    using It = base64_from_binary<transform_width<const char*, 6, 8>>;
    const char* begin = reinterpret_cast<const char*>(values.data());
    const char* end = begin + values.size() * sizeof(double);
    std::string out{It(begin), It(end)};
    out.append((4 - out.size() % 4) % 4, '=');
    return out;
}

inline std::vector<double> base64_decode(std::string text) {
    using namespace boost::archive::iterators;
    using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
    text.erase(std::remove_if(text.begin(), text.end(), [](char ch) { return ch == '\n' || ch == '\r' || ch == ' '; }), text.end());
    if (text.size() % 4 != 0) throw ParseError("weights_b64: length is not a multiple of 4");
    const auto pad = static_cast<std::size_t>(std::count(text.end() - std::min<std::ptrdiff_t>(2, static_cast<std::ptrdiff_t>(text.size())), text.end(), '='));
    std::replace(text.end() - static_cast<std::ptrdiff_t>(pad), text.end(), '=', 'A');
    std::string bytes;
    try {
        bytes.assign(It(text.cbegin()), It(text.cend()));
    } catch (const std::exception& e) {
        throw ParseError(std::string("weights_b64: ") + e.what());
    }
    if (pad > bytes.size()) throw ParseError("weights_b64: malformed padding");
    const std::size_t n = bytes.size() - pad;
    if (n % sizeof(double) != 0) throw ParseError("weights_b64: byte length is not a multiple of 8");
    std::vector<double> out(n / sizeof(double));
    std::memcpy(out.data(), bytes.data(), n);
    return out;
}

inline std::size_t json_index(const nlohmann::json& j, const char* key, std::size_t layer, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer() || j[key].get<long long>() < 0)
        throw ShapeError(layer, std::string("'") + key + "' must be a non-negative integer");
    return j[key].get<std::size_t>();
}

/// Reads the weight payload of a layer: either nested "weights" arrays or
/// "weights_b64" plus "shape". Returns the flat row-major values and shape.
inline std::vector<double> read_weights(const nlohmann::json& j, std::size_t layer, std::size_t rank, Shape& shape) {
    const bool has_plain = j.contains("weights");
    const bool has_b64 = j.contains("weights_b64");
    if (has_plain == has_b64) throw ParseError("layer " + std::to_string(layer) + ": exactly one of 'weights' and 'weights_b64' is required");
    std::vector<double> flat;
    if (has_b64) {
        if (!j.contains("shape") || !j["shape"].is_array() || j["shape"].size() != rank)
            throw ParseError("layer " + std::to_string(layer) + ": 'weights_b64' requires a rank-" + std::to_string(rank) + " 'shape'");
        shape = j["shape"].get<Shape>();
        flat = base64_decode(j["weights_b64"].get<std::string>());
        if (flat.size() != shape_size(shape))
            throw ShapeError(layer, "weights_b64 holds " + std::to_string(flat.size()) + " values, shape " + shape_string(shape) + " needs " + std::to_string(shape_size(shape)));
        return flat;
    }
    // Nested arrays: walk the first element of each level for the shape, then
    // require every sub-array to agree.
    shape.clear();
    const nlohmann::json* cur = &j["weights"];
    for (std::size_t d = 0; d < rank; ++d) {
        if (!cur->is_array()) throw ParseError("layer " + std::to_string(layer) + ": 'weights' must be a rank-" + std::to_string(rank) + " array");
        shape.push_back(cur->size());
        if (cur->empty()) break;
        cur = &(*cur)[0];
    }
    if (shape.size() != rank) throw ShapeError(layer, "empty weight tensor");
    flat.reserve(shape_size(shape));
    auto walk = [&](auto&& self, const nlohmann::json& node, std::size_t d) -> void {
        if (!node.is_array() || node.size() != shape[d])
            throw ShapeError(layer, "ragged weight array at depth " + std::to_string(d));
        for (const auto& v : node) {
            if (d + 1 == rank) {
                if (v.is_null()) throw NonFiniteError("layer " + std::to_string(layer) + ": non-finite weight");
                if (!v.is_number()) throw ParseError("layer " + std::to_string(layer) + ": weight is not a number");
                flat.push_back(v.get<double>());
            } else {
                self(self, v, d + 1);
            }
        }
    };
    walk(walk, j["weights"], 0);
    return flat;
}

inline Vector read_bias(const nlohmann::json& j, std::size_t layer) {
    if (!j.contains("bias") || !j["bias"].is_array()) throw ParseError("layer " + std::to_string(layer) + ": missing 'bias' array");
    Vector b(static_cast<Eigen::Index>(j["bias"].size()));
    for (std::size_t i = 0; i < j["bias"].size(); ++i) {
        const auto& v = j["bias"][i];
        if (v.is_null()) throw NonFiniteError("layer " + std::to_string(layer) + ": non-finite bias");
        if (!v.is_number()) throw ParseError("layer " + std::to_string(layer) + ": bias is not a number");
        b(static_cast<Eigen::Index>(i)) = v.get<double>();
    }
    return b;
}

inline Layer parse_layer(const nlohmann::json& j, std::size_t t) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) throw ParseError("layer " + std::to_string(t) + ": missing 'kind'");
    const auto kind = j["kind"].get<std::string>();
    if (kind == "relu") return ReLU{};
    if (kind == "flatten") return Flatten{};
    if (kind == "dense") {
        Shape shape;
        const auto flat = read_weights(j, t, 2, shape);
        Dense d;
        d.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            flat.data(), static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
        d.bias = read_bias(j, t);
        return d;
    }
    if (kind == "conv2d") {
        Shape shape;
        Conv2D c;
        c.kernel = read_weights(j, t, 4, shape);
        c.out_channels = shape[0];
        c.in_channels = shape[1];
        c.kernel_h = shape[2];
        c.kernel_w = shape[3];
        c.bias = read_bias(j, t);
        c.stride = json_index(j, "stride", t, 1);
        c.padding = json_index(j, "padding", t, 0);
        return c;
    }
    throw ParseError("layer " + std::to_string(t) + ": unknown kind '" + kind + "'");
}

}  // namespace detail

inline Network network_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("input_shape") || !j.contains("layers") || !j["layers"].is_array())
        throw ParseError("network JSON needs 'input_shape' and 'layers'");
    Shape input;
    try {
        input = j["input_shape"].get<Shape>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("'input_shape' must be an array of positive integers");
    }
    std::vector<Layer> layers;
    for (std::size_t t = 0; t < j["layers"].size(); ++t) layers.push_back(detail::parse_layer(j["layers"][t], t));
    const std::size_t declared = j.contains("num_classes") ? j["num_classes"].get<std::size_t>() : 0;
    return Network(std::move(input), std::move(layers), declared);
}

/// Loads and validates a network from the JSON format described in the README.
inline Network load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open network file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("network file '" + path + "': " + e.what());
    }
    return network_from_json(j);
}

/// Layers whose weight count exceeds `b64_threshold` are written as
/// base64 little-endian doubles; pass 0 to always use nested arrays.
inline nlohmann::json network_to_json(const Network& net, std::size_t b64_threshold = 4096) {
    nlohmann::json j;
    j["input_shape"] = net.input_shape();
    j["num_classes"] = net.num_classes();
    j["layers"] = nlohmann::json::array();
    auto bias_json = [](const Vector& b) { return std::vector<double>(b.data(), b.data() + b.size()); };
    for (const auto& layer : net.layers()) {
        nlohmann::json l;
        l["kind"] = layer_kind(layer);
        if (const auto* d = std::get_if<Dense>(&layer)) {
            const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = d->weights;
            std::vector<double> flat(rm.data(), rm.data() + rm.size());
            if (b64_threshold && flat.size() > b64_threshold) {
                l["shape"] = {rm.rows(), rm.cols()};
                l["weights_b64"] = detail::base64_encode(flat);
            } else {
                l["weights"] = nlohmann::json::array();
                for (Eigen::Index r = 0; r < rm.rows(); ++r)
                    l["weights"].push_back(std::vector<double>(flat.begin() + r * rm.cols(), flat.begin() + (r + 1) * rm.cols()));
            }
            l["bias"] = bias_json(d->bias);
        } else if (const auto* c = std::get_if<Conv2D>(&layer)) {
            if (b64_threshold && c->kernel.size() > b64_threshold) {
                l["shape"] = {c->out_channels, c->in_channels, c->kernel_h, c->kernel_w};
                l["weights_b64"] = detail::base64_encode(c->kernel);
            } else {
                nlohmann::json w = nlohmann::json::array();
                for (std::size_t o = 0; o < c->out_channels; ++o) {
                    nlohmann::json wo = nlohmann::json::array();
                    for (std::size_t i = 0; i < c->in_channels; ++i) {
                        nlohmann::json wi = nlohmann::json::array();
                        for (std::size_t r = 0; r < c->kernel_h; ++r) {
                            std::vector<double> row;
                            for (std::size_t q = 0; q < c->kernel_w; ++q) row.push_back(c->k(o, i, r, q));
                            wi.push_back(row);
                        }
                        wo.push_back(wi);
                    }
                    w.push_back(wo);
                }
                l["weights"] = w;
            }
            l["bias"] = bias_json(c->bias);
            l["stride"] = c->stride;
            l["padding"] = c->padding;
        }
        j["layers"].push_back(l);
    }
    return j;
}

inline void save_network(const Network& net, const std::string& path, std::size_t b64_threshold = 4096) {
    std::ofstream out(path);
    if (!out) throw std::ios_base::failure("cannot write network file '" + path + "'");
    out << network_to_json(net, b64_threshold).dump() << '\n';
}

}  // namespace fame
