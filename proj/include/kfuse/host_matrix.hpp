#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "kfuse/types.hpp"

namespace kfuse {

// Read-only view of a column-major buffer, used by the interpreters.
struct BufferView
{
  const void* data = nullptr;
  ElemType type = ElemType::f32;
  std::size_t n_elem = 0;
  MatShape shape;  // parent dimensions; element (r, c) at r + c * n_rows
};

// Host-resident column-major matrix with a runtime element type.
class HostMatrix
{
 public:
  HostMatrix() : HostMatrix(ElemType::f32, {}) {}
  HostMatrix(ElemType type, MatShape shape);

  template <typename T>
  static HostMatrix from(MatShape shape, std::vector<T> values)
  {
    HostMatrix m;
    m.shape_ = shape;
    m.storage_ = std::move(values);
    if (m.n_elem() != shape.n_elem()) throw ShapeError("HostMatrix: value count does not match shape");
    return m;
  }

  ElemType type() const noexcept { return static_cast<ElemType>(storage_.index()); }
  MatShape shape() const noexcept { return shape_; }
  std::size_t n_rows() const noexcept { return shape_.n_rows; }
  std::size_t n_cols() const noexcept { return shape_.n_cols; }
  std::size_t n_elem() const noexcept;

  // Value converted to double (exact for all supported element types).
  double at(std::size_t r, std::size_t c) const;
  double at(std::size_t i) const;
  // Stores `v` converted to the element type.
  void set(std::size_t r, std::size_t c, double v);
  void set(std::size_t i, double v);

  template <typename T> std::span<T> data() { return std::get<std::vector<T>>(storage_); }
  template <typename T> std::span<const T> data() const { return std::get<std::vector<T>>(storage_); }

  std::span<std::byte> bytes();
  std::span<const std::byte> bytes() const;

  BufferView view() const { return BufferView{bytes().data(), type(), n_elem(), shape_}; }

  friend bool bit_equal(const HostMatrix& a, const HostMatrix& b);

 private:
  // index order matches ElemType
  using Storage = std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint32_t>,
                               std::vector<std::int32_t>>;
  MatShape shape_;
  Storage storage_;
};

} // namespace kfuse
