#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace st4d {

inline constexpr int kMaxRank = 5;

// Extent per axis. Row-major layout: the last axis varies fastest.
using Shape = std::vector<int>;

inline std::string shape_str(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

// Validates rank and extents, returns the element count.
inline std::size_t shape_volume(const Shape& dims) {
  if (dims.empty() || dims.size() > static_cast<std::size_t>(kMaxRank)) {
    throw std::invalid_argument("tensor rank must be 1.." + std::to_string(kMaxRank) +
                                ", got shape " + shape_str(dims));
  }
  std::size_t volume = 1;
  for (int d : dims) {
    if (d < 1) {
      throw std::invalid_argument("tensor extents must be >= 1, got shape " + shape_str(dims));
    }
    volume *= static_cast<std::size_t>(d);
    if (volume > (std::size_t{1} << 40)) {
      throw std::invalid_argument("tensor too large: shape " + shape_str(dims));
    }
  }
  return volume;
}

// Dense row-major N-d scalar array, rank 1..5.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape dims) : dims_(std::move(dims)), data_(shape_volume(dims_)) {}

  TensorT(Shape dims, std::vector<T> values)
      : dims_(std::move(dims)), data_(std::move(values)) {
    if (shape_volume(dims_) != data_.size()) {
      throw std::invalid_argument("shape " + shape_str(dims_) + " expects " +
                                  std::to_string(shape_volume(dims_)) + " values, got " +
                                  std::to_string(data_.size()));
    }
  }

  static TensorT full(Shape dims, T value) {
    TensorT t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool defined() const { return !dims_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major flat offset of a full multi-index, bounds-checked.
  std::size_t offset(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
      throw std::invalid_argument("index rank " + std::to_string(idx.size()) +
                                  " does not match tensor shape " + shape_str(dims_));
    }
    std::size_t off = 0;
    int axis = 0;
    for (int i : idx) {
      if (i < 0 || i >= dims_[static_cast<std::size_t>(axis)]) {
        throw std::out_of_range("index " + std::to_string(i) + " out of range on axis " +
                                std::to_string(axis) + " of shape " + shape_str(dims_));
      }
      off = off * static_cast<std::size_t>(dims_[static_cast<std::size_t>(axis)]) +
            static_cast<std::size_t>(i);
      ++axis;
    }
    return off;
  }

  T& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  bool same_dims(const TensorT& other) const { return dims_ == other.dims_; }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape dims_;
  std::vector<T> data_;
};

using Tensorf = TensorT<float>;
using Tensord = TensorT<double>;

// Copy of slice `index` along axis 0, one rank lower (or rank 1 of size 1 for rank-1 input).
template <typename T>
TensorT<T> slice_axis0(const TensorT<T>& t, int index) {
  if (t.rank() < 2) throw std::invalid_argument("slice_axis0 needs rank >= 2, got " + shape_str(t.dims()));
  if (index < 0 || index >= t.dim(0)) {
    throw std::out_of_range("slice index " + std::to_string(index) + " out of range for shape " +
                            shape_str(t.dims()));
  }
  Shape rest(t.dims().begin() + 1, t.dims().end());
  TensorT<T> out(rest);
  const std::size_t stride = out.size();
  std::copy_n(t.data() + static_cast<std::size_t>(index) * stride, stride, out.data());
  return out;
}

// Stacks equally shaped tensors along a new leading axis.
template <typename T>
TensorT<T> stack_axis0(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_axis0 needs at least one tensor");
  Shape dims;
  dims.push_back(static_cast<int>(parts.size()));
  for (int d : parts.front().dims()) dims.push_back(d);
  TensorT<T> out(dims);
  const std::size_t stride = parts.front().size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!parts[i].same_dims(parts.front())) {
      throw std::invalid_argument("stack_axis0 shape mismatch: " + shape_str(parts[i].dims()) +
                                  " vs " + shape_str(parts.front().dims()));
    }
    std::copy_n(parts[i].data(), stride, out.data() + i * stride);
  }
  return out;
}

}  // namespace st4d
