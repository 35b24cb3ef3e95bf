#include "kfuse/host_matrix.hpp"

#include <cstring>

#include "kfuse/elem_ops.hpp"

namespace kfuse {

HostMatrix::HostMatrix(ElemType type, MatShape shape) : shape_(shape)
{
  dispatch_elem_type(type, [&](auto tag) {
    using T = decltype(tag);
    storage_ = std::vector<T>(shape.n_elem(), T{});
  });
}

std::size_t HostMatrix::n_elem() const noexcept
{
  return std::visit([](const auto& v) { return v.size(); }, storage_);
}

double HostMatrix::at(std::size_t i) const
{
  if (i >= n_elem()) throw BoundsError("HostMatrix: index " + std::to_string(i) + " out of range");
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, storage_);
}

double HostMatrix::at(std::size_t r, std::size_t c) const
{
  if (r >= shape_.n_rows || c >= shape_.n_cols) {
    throw BoundsError("HostMatrix: (" + std::to_string(r) + ", " + std::to_string(c) +
                      ") outside " + to_string(shape_));
  }
  return at(r + c * shape_.n_rows);
}

void HostMatrix::set(std::size_t i, double v)
{
  if (i >= n_elem()) throw BoundsError("HostMatrix: index " + std::to_string(i) + " out of range");
  std::visit(
      [&](auto& vec) {
        using T = typename std::decay_t<decltype(vec)>::value_type;
        vec[i] = elem::convert<T>(v);
      },
      storage_);
}

void HostMatrix::set(std::size_t r, std::size_t c, double v)
{
  if (r >= shape_.n_rows || c >= shape_.n_cols) {
    throw BoundsError("HostMatrix: (" + std::to_string(r) + ", " + std::to_string(c) +
                      ") outside " + to_string(shape_));
  }
  set(r + c * shape_.n_rows, v);
}

std::span<std::byte> HostMatrix::bytes()
{
  return std::visit(
      [](auto& v) { return std::as_writable_bytes(std::span(v.data(), v.size())); }, storage_);
}

std::span<const std::byte> HostMatrix::bytes() const
{
  return std::visit([](const auto& v) { return std::as_bytes(std::span(v.data(), v.size())); },
                    storage_);
}

bool bit_equal(const HostMatrix& a, const HostMatrix& b)
{
  if (a.type() != b.type() || a.shape() != b.shape()) return false;
  const auto x = a.bytes();
  const auto y = b.bytes();
  return x.size() == y.size() && (x.empty() || std::memcmp(x.data(), y.data(), x.size()) == 0);
}

} // namespace kfuse
