#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace irt {

// Dense row-major float32 tensor, NCHW convention for images.
// Reductions accumulate in double internally to keep completeness
// checks tight.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0f);
    }

    Tensor(std::vector<std::size_t> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw std::invalid_argument("Tensor: data length " +
                                        std::to_string(data.size()) +
                                        " does not match shape product " +
                                        std::to_string(numel_of(shape)));
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) {
            if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape");
            n *= e;
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    float& at(std::size_t i) { return data[i]; }
    float at(std::size_t i) const { return data[i]; }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    static Tensor full(std::vector<std::size_t> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double sum64() const {
        double acc = 0.0;
        for (float v : data) acc += v;
        return acc;
    }

    bool all_finite() const;

    Tensor reshaped(std::vector<std::size_t> s) const {
        if (numel_of(s) != numel())
            throw std::invalid_argument("reshape: element count mismatch");
        return Tensor(std::move(s), data);
    }
};

std::string shape_str(const std::vector<std::size_t>& s);

// File open/read/write failures; the CLI maps these to exit code 2.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown by ops on incompatible operand shapes; message names the op
// and both shapes.
struct ShapeError : std::runtime_error {
    ShapeError(const std::string& op, const std::vector<std::size_t>& a,
               const std::vector<std::size_t>& b)
        : std::runtime_error(op + ": incompatible shapes " + shape_str(a) +
                             " vs " + shape_str(b)) {}
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace irt
