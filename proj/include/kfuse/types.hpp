#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kfuse {

enum class ElemType : std::uint8_t { f32, f64, u32, i32 };

constexpr std::size_t byte_width(ElemType t) noexcept
{
  return t == ElemType::f64 ? 8 : 4;
}

constexpr bool is_floating(ElemType t) noexcept
{
  return t == ElemType::f32 || t == ElemType::f64;
}

std::string_view to_string(ElemType t) noexcept;

// Throws Error for unknown names.
ElemType parse_elem_type(std::string_view name);

template <typename T> struct elem_type_of;
template <> struct elem_type_of<float> { static constexpr ElemType value = ElemType::f32; };
template <> struct elem_type_of<double> { static constexpr ElemType value = ElemType::f64; };
template <> struct elem_type_of<std::uint32_t> { static constexpr ElemType value = ElemType::u32; };
template <> struct elem_type_of<std::int32_t> { static constexpr ElemType value = ElemType::i32; };

template <typename T>
inline constexpr ElemType elem_type_v = elem_type_of<T>::value;

// Calls f(T{}) with the C++ type matching `t`.
template <typename F>
decltype(auto) dispatch_elem_type(ElemType t, F&& f)
{
  switch (t) {
    case ElemType::f32: return f(float{});
    case ElemType::f64: return f(double{});
    case ElemType::u32: return f(std::uint32_t{});
    case ElemType::i32: return f(std::int32_t{});
  }
  return f(float{});
}

struct MatShape
{
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;

  constexpr std::size_t n_elem() const noexcept { return n_rows * n_cols; }
  constexpr MatShape transposed() const noexcept { return {n_cols, n_rows}; }
  friend constexpr bool operator==(const MatShape&, const MatShape&) = default;
};

std::string to_string(MatShape s);

using MatrixId = std::uint64_t;

class Error : public std::runtime_error
{
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error { public: using Error::Error; };
class BoundsError : public Error { public: using Error::Error; };
class TypeError : public Error { public: using Error::Error; };
class GenerationError : public Error { public: using Error::Error; };
class PlanError : public Error { public: using Error::Error; };
class BackendError : public Error { public: using Error::Error; };

} // namespace kfuse
