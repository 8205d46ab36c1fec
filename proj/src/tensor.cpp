#include "vecformer/tensor.hpp"

#include <cmath>

#include "vecformer/errors.hpp"

namespace vecformer {

static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw DimensionError("negative extent in shape " + shape_to_string(shape));
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<std::int64_t>(data_.size()))
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_to_string(shape_));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

Tensor Tensor::identity(std::int64_t n) {
    Tensor t({n, n});
    for (std::int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::int64_t Tensor::rows() const {
    if (shape_.size() != 2) throw DimensionError("rows() on tensor of shape " + shape_str());
    return shape_[0];
}

std::int64_t Tensor::cols() const {
    if (shape_.size() != 2) throw DimensionError("cols() on tensor of shape " + shape_str());
    return shape_[1];
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::require_finite(const std::string& ctx) const {
    for (std::size_t i = 0; i < data_.size(); ++i)
        if (!std::isfinite(data_[i]))
            throw NumericError(ctx + ": non-finite value at flat index " + std::to_string(i));
}

std::string shape_to_string(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

}  // namespace vecformer
