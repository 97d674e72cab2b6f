#include "lowpass/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace lowpass {

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

const char* axis_name(std::size_t axis) {
    switch (axis) {
        case 0: return "batch";
        case 1: return "channel";
        case 2: return "height";
        case 3: return "width";
        default: return "trailing";
    }
}

}  // namespace

ShapeError::ShapeError(const std::string& op, std::size_t axis, std::size_t got, std::size_t expected)
    : std::invalid_argument(op + ": axis " + std::to_string(axis) + " (" + axis_name(axis) + ") has extent " +
                            std::to_string(got) + ", expected " + std::to_string(expected)) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {
    if (!std::isfinite(fill)) throw std::domain_error("Tensor: non-finite fill value");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
        throw ShapeError("Tensor: shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                         " values but " + std::to_string(data_.size()) + " were given");
    }
    if (!all_finite()) throw std::domain_error("Tensor: non-finite input value");
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data_) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data_) v = dist(rng);
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("Tensor::extent: axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape_));
    }
    return shape_[axis];
}

double& Tensor::at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

double Tensor::at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

double& Tensor::at(std::size_t y, std::size_t x) { return data_[y * shape_.back() + x]; }
double Tensor::at(std::size_t y, std::size_t x) const { return data_[y * shape_.back() + x]; }

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("Tensor::item: tensor of shape " + to_string(shape_) + " is not a scalar");
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
        throw ShapeError("Tensor::reshaped: cannot view " + to_string(shape_) + " as " + to_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape("add", shape_, other.shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    require_same_shape("sub", shape_, other.shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

Tensor& Tensor::add_scaled(const Tensor& other, double s) {
    require_same_shape("add_scaled", shape_, other.shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
    return *this;
}

void require_same_shape(const std::string& op, const Shape& a, const Shape& b) {
    if (a.size() != b.size()) {
        throw ShapeError(op + ": rank mismatch, " + to_string(a) + " vs " + to_string(b));
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) throw ShapeError(op, i, b[i], a[i]);
    }
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape("dot", a.shape(), b.shape());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double l2dist(const Tensor& a, const Tensor& b) {
    require_same_shape("l2dist", a.shape(), b.shape());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor positive_mask(const Tensor& x) {
    Tensor m(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) m[i] = x[i] > 0.0 ? 1.0 : 0.0;
    return m;
}

Tensor batch_item(const Tensor& x, std::size_t b) {
    if (x.rank() < 1 || b >= x.extent(0)) {
        throw ShapeError("batch_item: index " + std::to_string(b) + " outside shape " + to_string(x.shape()));
    }
    Shape shape = x.shape();
    shape[0] = 1;
    const std::size_t n = numel(shape);
    std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(b * n),
                             x.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
    return Tensor(std::move(shape), std::move(data));
}

Tensor stack_batch(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack_batch: no items");
    Shape shape = items.front().shape();
    for (const auto& t : items) require_same_shape("stack_batch", shape, t.shape());
    const std::size_t per = numel(shape) / shape[0];
    shape[0] *= items.size();
    std::vector<double> data;
    data.reserve(per * items.size() * items.front().extent(0));
    for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace lowpass
