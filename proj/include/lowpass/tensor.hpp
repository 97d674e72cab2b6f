#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lowpass {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

/// Raised when operand extents disagree. The message names the offending axis.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& op, std::size_t axis, std::size_t got, std::size_t expected);
    explicit ShapeError(const std::string& message) : std::invalid_argument(message) {}
};

/// Dense row-major array of doubles. 4-D data uses (batch, channel, height, width).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    /// Rejects non-finite values and size mismatches.
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x);
    double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const;
    double& at(std::size_t y, std::size_t x);
    double at(std::size_t y, std::size_t x) const;

    double item() const;
    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s);
    Tensor& add_scaled(const Tensor& other, double s);

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, double s) { return a *= s; }
    friend Tensor operator*(double s, Tensor a) { return a *= s; }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

void require_same_shape(const std::string& op, const Shape& a, const Shape& b);

double dot(const Tensor& a, const Tensor& b);
double l2norm(const Tensor& a);
double l2dist(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
/// Elementwise I[x > 0].
Tensor positive_mask(const Tensor& x);

/// Item `b` of a batched tensor, keeping a leading batch axis of 1.
Tensor batch_item(const Tensor& x, std::size_t b);
Tensor stack_batch(std::span<const Tensor> items);

}  // namespace lowpass
