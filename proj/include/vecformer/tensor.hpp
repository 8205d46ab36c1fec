#pragma once

// Dense row-major double tensor. Plain value type; no aliasing, no strides.

#include <cstdint>
#include <string>
#include <vector>

namespace vecformer {

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::int64_t> shape, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor identity(std::int64_t n);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t ndim() const { return shape_.size(); }

    // 2-d accessors; rows()/cols() require ndim()==2 (scalars and vectors are
    // stored as {1} / {n}).
    std::int64_t rows() const;
    std::int64_t cols() const;
    double& at(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * cols() + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * cols() + j)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    // Throws NumericError naming the first offending flat index if any value
    // is NaN or infinite. `ctx` names the operation being checked.
    void require_finite(const std::string& ctx) const;

    bool all_finite() const;

  private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<std::int64_t>& s);

}  // namespace vecformer
