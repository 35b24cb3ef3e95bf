#pragma once

// Test-only evaluator for generated element-access text.
//
// Parses the C-like expression emitted by the generator and evaluates it with
// C's usual arithmetic conversions for the types that can occur (int, unsigned,
// 64-bit index, float, double). The kf_pow_* and kf_to_* helpers are
// re-implemented from their C definitions. Nothing here reuses the library's
// element operations, so agreement with ref_eval_elem is meaningful.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>

#include "kfuse/backend.hpp"

namespace kfuse::testing {

using TextValue = std::variant<std::int32_t, std::uint32_t, std::uint64_t, float, double>;

double to_double(const TextValue& v);

struct TextEnv
{
  std::map<std::string, BufferView> buffers;
  std::map<std::string, TextValue> values;  // dims, offsets, scalars
};

class TextExpr
{
 public:
  explicit TextExpr(const std::string& text);
  ~TextExpr();
  TextExpr(TextExpr&&) noexcept;

  // `row` and `col` are bound as 64-bit indices.
  TextValue eval(const TextEnv& env, std::uint64_t row, std::uint64_t col) const;

  struct Node;

 private:
  std::unique_ptr<Node> root_;
};

// Binds in<o>, in<o>_n_rows, in<o>_n_cols, view offsets and s<i> the way the
// generator names them for `expr`, with buffers taken from `env`.
TextEnv text_env_for(const Expr& expr, const HostEnv& env);

} // namespace kfuse::testing
