#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fame/error.hpp"

namespace fame {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

struct Dense {
    Matrix weights;  // out x in
    Vector bias;
};

/// 2-D convolution over a CHW tensor. `kernel` is stored flat in
/// (out_channels, in_channels, kh, kw) row-major order.
struct Conv2D {
    std::size_t out_channels = 0, in_channels = 0, kernel_h = 0, kernel_w = 0;
    std::vector<double> kernel;
    Vector bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    double k(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const {
        return kernel[((o * in_channels + i) * kernel_h + r) * kernel_w + c];
    }
};

struct ReLU {};
struct Flatten {};

using Layer = std::variant<Dense, Conv2D, ReLU, Flatten>;

inline const char* layer_kind(const Layer& l) {
    return std::visit(
        [](const auto& v) -> const char* {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Dense>) return "dense";
            else if constexpr (std::is_same_v<T, Conv2D>) return "conv2d";
            else if constexpr (std::is_same_v<T, ReLU>) return "relu";
            else return "flatten";
        },
        l);
}

/// Lowered form used by evaluation and bound propagation: every affine
/// layer (dense or convolution) becomes an explicit matrix.
struct Stage {
    enum class Kind { affine, relu };
    Kind kind = Kind::affine;
    Matrix weights;
    Vector bias;
    std::size_t size = 0;  // output length
};

/// Index c of the class that must stay on top.
struct MarginSpec {
    std::size_t true_class = 0;
    std::size_t num_classes = 0;

    MarginSpec() = default;
    MarginSpec(std::size_t c, std::size_t k) : true_class(c), num_classes(k) {
        if (c >= k) throw std::invalid_argument("true class " + std::to_string(c) + " out of range for " + std::to_string(k) + " classes");
    }

    std::vector<std::size_t> adversary_classes() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < num_classes; ++i)
            if (i != true_class) out.push_back(i);
        return out;
    }
    std::size_t num_adversaries() const { return num_classes ? num_classes - 1 : 0; }

    /// (k-1) x k matrix whose rows are e_i - e_c.
    Matrix objective() const {
        Matrix C = Matrix::Zero(static_cast<Eigen::Index>(num_adversaries()), static_cast<Eigen::Index>(num_classes));
        Eigen::Index r = 0;
        for (std::size_t i : adversary_classes()) {
            C(r, static_cast<Eigen::Index>(i)) = 1.0;
            C(r, static_cast<Eigen::Index>(true_class)) = -1.0;
            ++r;
        }
        return C;
    }
};

namespace detail {

inline Matrix lower_conv(const Conv2D& conv, const Shape& in, Shape& out) {
    const std::size_t C = in[0], H = in[1], W = in[2];
    const std::size_t OH = (H + 2 * conv.padding - conv.kernel_h) / conv.stride + 1;
    const std::size_t OW = (W + 2 * conv.padding - conv.kernel_w) / conv.stride + 1;
    out = {conv.out_channels, OH, OW};
    Matrix M = Matrix::Zero(static_cast<Eigen::Index>(conv.out_channels * OH * OW), static_cast<Eigen::Index>(C * H * W));
    for (std::size_t o = 0; o < conv.out_channels; ++o)
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const auto row = static_cast<Eigen::Index>((o * OH + oy) * OW + ox);
                for (std::size_t i = 0; i < C; ++i)
                    for (std::size_t r = 0; r < conv.kernel_h; ++r)
                        for (std::size_t c = 0; c < conv.kernel_w; ++c) {
                            const auto y = static_cast<std::ptrdiff_t>(oy * conv.stride + r) - static_cast<std::ptrdiff_t>(conv.padding);
                            const auto x = static_cast<std::ptrdiff_t>(ox * conv.stride + c) - static_cast<std::ptrdiff_t>(conv.padding);
                            if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) || x >= static_cast<std::ptrdiff_t>(W)) continue;
                            const auto col = static_cast<Eigen::Index>((i * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x));
                            M(row, col) += conv.k(o, i, r, c);
                        }
            }
    return M;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

}  // namespace detail

/// Sequential feed-forward ReLU network f : R^n -> R^k. Immutable after
/// construction; construction validates shapes end to end and lowers
/// convolutions to dense matrices. Tensors are laid out CHW, so Flatten is
/// a reinterpretation and produces no stage.
class Network {
public:
    Network() = default;

    Network(Shape input_shape, std::vector<Layer> layers, std::size_t declared_classes = 0)
        : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
        if (input_shape_.empty() || shape_size(input_shape_) == 0)
            throw ShapeError(0, "input shape must be nonempty");
        if (input_shape_.size() != 1 && input_shape_.size() != 3)
            throw ShapeError(0, "input shape must be (n) or (channels, height, width)");
        if (layers_.empty()) throw ShapeError(0, "network has no layers");

        Shape cur = input_shape_;
        for (std::size_t t = 0; t < layers_.size(); ++t) {
            Shape next;
            std::visit([&](const auto& l) { lower(t, l, cur, next); }, layers_[t]);
            cur = std::move(next);
        }
        if (cur.size() != 1) throw ShapeError(layers_.size() - 1, "network output must be a flat vector, got " + shape_string(cur));
        num_classes_ = cur[0];
        if (declared_classes && declared_classes != num_classes_)
            throw ShapeError(layers_.size() - 1, "output length " + std::to_string(num_classes_) + " != num_classes " + std::to_string(declared_classes));
    }

    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t input_size() const noexcept { return shape_size(input_shape_); }
    std::size_t num_classes() const noexcept { return num_classes_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    const std::vector<Stage>& stages() const noexcept { return stages_; }

    std::size_t num_relu_neurons() const {
        std::size_t n = 0;
        for (const auto& s : stages_)
            if (s.kind == Stage::Kind::relu) n += s.size;
        return n;
    }

private:
    void lower(std::size_t t, const Dense& d, const Shape& in, Shape& out) {
        if (in.size() != 1) throw ShapeError(t, "dense layer needs a flat input, got " + shape_string(in) + " (insert a flatten layer)");
        if (static_cast<std::size_t>(d.weights.cols()) != in[0])
            throw ShapeError(t, "dense weights have " + std::to_string(d.weights.cols()) + " columns, input has " + std::to_string(in[0]));
        if (d.bias.size() != d.weights.rows())
            throw ShapeError(t, "dense bias length " + std::to_string(d.bias.size()) + " != row count " + std::to_string(d.weights.rows()));
        if (!detail::all_finite(d.weights) || !detail::all_finite(d.bias))
            throw NonFiniteError("layer " + std::to_string(t) + ": non-finite weight");
        out = {static_cast<std::size_t>(d.weights.rows())};
        stages_.push_back({Stage::Kind::affine, d.weights, d.bias, out[0]});
    }

    void lower(std::size_t t, const Conv2D& c, const Shape& in, Shape& out) {
        if (in.size() != 3) throw ShapeError(t, "conv2d needs a (channels, height, width) input, got " + shape_string(in));
        if (c.stride < 1) throw ShapeError(t, "stride must be >= 1");
        if (c.in_channels != in[0])
            throw ShapeError(t, "conv2d expects " + std::to_string(c.in_channels) + " input channels, got " + std::to_string(in[0]));
        if (c.kernel.size() != c.out_channels * c.in_channels * c.kernel_h * c.kernel_w || c.kernel_h == 0 || c.kernel_w == 0)
            throw ShapeError(t, "conv2d kernel size does not match its declared shape");
        if (static_cast<std::size_t>(c.bias.size()) != c.out_channels)
            throw ShapeError(t, "conv2d bias length " + std::to_string(c.bias.size()) + " != out channels " + std::to_string(c.out_channels));
        if (in[1] + 2 * c.padding < c.kernel_h || in[2] + 2 * c.padding < c.kernel_w)
            throw ShapeError(t, "conv2d kernel larger than padded input");
        for (double v : c.kernel)
            if (!std::isfinite(v)) throw NonFiniteError("layer " + std::to_string(t) + ": non-finite weight");
        if (!detail::all_finite(c.bias)) throw NonFiniteError("layer " + std::to_string(t) + ": non-finite weight");
        Matrix M = detail::lower_conv(c, in, out);
        Vector b(M.rows());
        const std::size_t per = out[1] * out[2];
        for (std::size_t o = 0; o < c.out_channels; ++o)
            b.segment(static_cast<Eigen::Index>(o * per), static_cast<Eigen::Index>(per)).setConstant(c.bias(static_cast<Eigen::Index>(o)));
        stages_.push_back({Stage::Kind::affine, std::move(M), std::move(b), shape_size(out)});
    }

    void lower(std::size_t, const ReLU&, const Shape& in, Shape& out) {
        out = in;
        stages_.push_back({Stage::Kind::relu, {}, {}, shape_size(in)});
    }

    void lower(std::size_t, const Flatten&, const Shape& in, Shape& out) { out = {shape_size(in)}; }

    Shape input_shape_;
    std::vector<Layer> layers_;
    std::vector<Stage> stages_;
    std::size_t num_classes_ = 0;
};

inline void check_input(const Network& net, const Vector& x) {
    if (static_cast<std::size_t>(x.size()) != net.input_size())
        throw DimensionError("input has " + std::to_string(x.size()) + " features, network expects " + std::to_string(net.input_size()));
}

/// Logits f(x).
inline Vector forward(const Network& net, const Vector& x) {
    check_input(net, x);
    Vector h = x;
    for (const auto& s : net.stages()) {
        if (s.kind == Stage::Kind::affine) h = s.weights * h + s.bias;
        else h = h.cwiseMax(0.0);
    }
    return h;
}

/// f_c(x) - f_i(x) for every adversary class i, ascending i.
inline Vector margins_from_logits(const Vector& logits, const MarginSpec& spec) {
    if (spec.true_class >= static_cast<std::size_t>(logits.size()))
        throw DimensionError("true class out of range");
    const auto adv = spec.adversary_classes();
    Vector m(static_cast<Eigen::Index>(adv.size()));
    for (std::size_t r = 0; r < adv.size(); ++r)
        m(static_cast<Eigen::Index>(r)) = logits(static_cast<Eigen::Index>(spec.true_class)) - logits(static_cast<Eigen::Index>(adv[r]));
    return m;
}

inline Vector margins(const Network& net, const Vector& x, const MarginSpec& spec) {
    if (spec.true_class >= net.num_classes() || spec.num_classes != net.num_classes()) throw DimensionError("margin spec does not match the network's " + std::to_string(net.num_classes()) + " classes");
    return margins_from_logits(forward(net, x), spec);
}

/// The robustness property holds at x: every margin strictly positive.
inline bool property_holds(const Network& net, const Vector& x, const MarginSpec& spec) {
    const Vector m = margins(net, x, spec);
    return m.size() == 0 || m.minCoeff() > 0.0;
}

inline std::size_t predict(const Network& net, const Vector& x) {
    const Vector y = forward(net, x);
    Eigen::Index best = 0;
    y.maxCoeff(&best);
    return static_cast<std::size_t>(best);
}

}  // namespace fame
