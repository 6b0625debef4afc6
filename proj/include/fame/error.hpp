#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fame {

/// Malformed network, input or report file.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Layer dimensions that do not chain. Carries the offending layer index.
class ShapeError : public std::runtime_error {
public:
    ShapeError(std::size_t layer, const std::string& what)
        : std::runtime_error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}

    std::size_t layer() const noexcept { return layer_; }

private:
    std::size_t layer_;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The network does not satisfy the robustness property at the nominal input.
class MisclassifiedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when bound propagation produces crossing bounds; always a bug.
class SoundnessError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace fame
