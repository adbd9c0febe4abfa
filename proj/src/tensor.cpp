#include "fitq/tensor.hpp"

#include <cmath>
#include <sstream>

namespace fitq {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ValidationError("tensor extent must be positive, got " + std::to_string(d));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != static_cast<int64_t>(data_.size()))
        throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data_.assign(1, v);
    return t;
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) throw ValidationError("item() on tensor of size " + std::to_string(data_.size()));
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::set_grad(Tensor g) {
    if (g.shape() != shape_) throw ValidationError("grad shape " + shape_str(g.shape()) + " != value shape " + shape_str(shape_));
    grad = std::make_shared<Tensor>(std::move(g));
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ValidationError("dot: size mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_norm(const Tensor& t) {
    double s = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ValidationError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

Tensor random_normal(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
    return t;
}

Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Tensor flatten_all(const std::vector<Tensor>& parts) {
    int64_t total = 0;
    for (const auto& p : parts) total += p.size();
    Tensor flat(Shape{total});
    int64_t off = 0;
    for (const auto& p : parts) {
        for (int64_t i = 0; i < p.size(); ++i) flat[off + i] = p[i];
        off += p.size();
    }
    return flat;
}

std::vector<Tensor> unflatten_all(const Tensor& flat, const std::vector<Shape>& shapes) {
    int64_t total = 0;
    for (const auto& s : shapes) total += numel(s);
    if (total != flat.size()) throw ValidationError("unflatten_all: flat size mismatch");
    std::vector<Tensor> out;
    out.reserve(shapes.size());
    int64_t off = 0;
    for (const auto& s : shapes) {
        Tensor t(s);
        for (int64_t i = 0; i < t.size(); ++i) t[i] = flat[off + i];
        off += t.size();
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace fitq
