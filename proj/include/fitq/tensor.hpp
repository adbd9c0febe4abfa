#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fitq/common.hpp"

namespace fitq {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major 64-bit tensor. Rank 0 (empty shape) is a scalar.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor full(Shape shape, double v);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double item() const;

    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Gradient buffer, populated by training code after a backward pass.
    // Invariant when present: grad->shape() == shape().
    bool requires_grad = false;
    std::shared_ptr<Tensor> grad;
    void set_grad(Tensor g);

  private:
    Shape shape_;
    std::vector<double> data_;
};

double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0);
Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi);

// Concatenation of several tensors into one flat vector and back.
Tensor flatten_all(const std::vector<Tensor>& parts);
std::vector<Tensor> unflatten_all(const Tensor& flat, const std::vector<Shape>& shapes);

}  // namespace fitq
