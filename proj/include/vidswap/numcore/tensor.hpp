#pragma once
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vidswap/common/error.hpp"

namespace vidswap::numcore {

using index_t = std::int64_t;
using Shape = std::vector<index_t>;

// allocator whose default-construct is a no-op; Tensor's normal constructor
// still zero-fills explicitly, only Tensor::uninit skips it
template <typename T>
struct RawAlloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = RawAlloc<U>;
  };
  RawAlloc() = default;
  template <typename U>
  RawAlloc(const RawAlloc<U>&) {}
  template <typename U>
  void construct(U*) noexcept {}
  template <typename U, typename A0, typename... Args>
  void construct(U* p, A0&& a0, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<A0>(a0), std::forward<Args>(args)...);
  }
};

inline index_t shape_numel(const Shape& s) {
  index_t n = 1;
  for (index_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Ops treat written tensors as immutable, so
// read-only sharing across workers is safe.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (index_t e : shape_)
      if (e <= 0) throw ValidationError("tensor extents must be positive, got " + shape_str(shape_));
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
  }

  // allocated but not zero-filled; caller must write every element
  static Tensor uninit(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    for (index_t e : t.shape_)
      if (e <= 0) throw ValidationError("tensor extents must be positive");
    t.data_.resize(static_cast<std::size_t>(shape_numel(t.shape_)));
    return t;
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    if (static_cast<index_t>(data.size()) != shape_numel(shape_))
      throw ValidationError("tensor data length does not match shape " + shape_str(shape_));
    data_.assign(data.begin(), data.end());
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  index_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  index_t numel() const { return static_cast<index_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](index_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](index_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // row-major element access for low-rank tensors
  T& at(index_t i, index_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  const T& at(index_t i, index_t j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  T& at(index_t i, index_t j, index_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(index_t i, index_t j, index_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  T& at(index_t i, index_t j, index_t k, index_t l) {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at(index_t i, index_t j, index_t k, index_t l) const {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ValidationError("reshape " + shape_str(shape_) + " -> " + shape_str(s) + " changes numel");
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(d));
  }

 private:
  Shape shape_;
  std::vector<T, RawAlloc<T>> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (index_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (index_t i = 0; i < a.numel(); ++i) {
    double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    if (d > m) m = d;
  }
  return m;
}

}  // namespace vidswap::numcore
