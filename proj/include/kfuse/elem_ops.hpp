#pragma once

// Scalar semantics shared by every evaluator. Integer arithmetic wraps
// modulo 2^32; float to integer conversion truncates toward zero and
// saturates, with NaN mapping to 0.

#include <cmath>
#include <cstdint>
#include <limits>
#include <type_traits>

#include "kfuse/types.hpp"

namespace kfuse::elem {

template <typename T>
inline constexpr bool is_int_v = std::is_integral_v<T>;

template <typename To, typename From>
To convert(From x)
{
  if constexpr (std::is_floating_point_v<To> || std::is_integral_v<From>) {
    return static_cast<To>(x);
  } else {
    const double d = static_cast<double>(x);
    if constexpr (std::is_same_v<To, std::int32_t>) {
      if (!(d == d)) return 0;
      if (d >= 2147483647.0) return std::numeric_limits<std::int32_t>::max();
      if (d <= -2147483648.0) return std::numeric_limits<std::int32_t>::min();
      return static_cast<std::int32_t>(d);
    } else {
      if (!(d > 0.0)) return 0;
      if (d >= 4294967295.0) return std::numeric_limits<std::uint32_t>::max();
      return static_cast<std::uint32_t>(d);
    }
  }
}

// Scalar operands arrive as double; integer element types take the
// truncated value modulo 2^32 so that negative constants still subtract.
template <typename T>
T scalar_as(double s)
{
  if constexpr (std::is_floating_point_v<T>) {
    return static_cast<T>(s);
  } else {
    if (!(s == s)) return 0;
    const double clamped = std::fmax(std::fmin(s, 9.2e18), -9.2e18);
    return static_cast<T>(static_cast<std::uint32_t>(static_cast<std::int64_t>(clamped)));
  }
}

template <typename T> T add(T a, T b)
{
  if constexpr (is_int_v<T>) return static_cast<T>(static_cast<std::uint32_t>(a) + static_cast<std::uint32_t>(b));
  else return a + b;
}

template <typename T> T sub(T a, T b)
{
  if constexpr (is_int_v<T>) return static_cast<T>(static_cast<std::uint32_t>(a) - static_cast<std::uint32_t>(b));
  else return a - b;
}

template <typename T> T mul(T a, T b)
{
  if constexpr (is_int_v<T>) return static_cast<T>(static_cast<std::uint32_t>(a) * static_cast<std::uint32_t>(b));
  else return a * b;
}

template <typename T> T div(T a, T b) { return a / b; }

template <typename T> T neg(T a)
{
  if constexpr (is_int_v<T>) return static_cast<T>(0u - static_cast<std::uint32_t>(a));
  else return -a;
}

template <typename T> T powi(T x, int e)
{
  if (e == 0) return T(1);
  T r = x;
  for (int i = 1; i < e; ++i) r = mul(r, x);
  return r;
}

template <typename T> T gt(T a, T s) { return a > s ? T(1) : T(0); }

} // namespace kfuse::elem
