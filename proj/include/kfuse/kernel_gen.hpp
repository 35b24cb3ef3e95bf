#pragma once

// Lowering of expression trees to fused kernel source.
//
// A kernel is produced by generating a handful of macro definitions from the
// tree (kernel name, parameter declarations, bounds check, element access) and
// prepending them to a fixed skeleton. Element access text is built by a
// recursive descent over the tree, so an arbitrarily deep element-wise
// expression becomes one kernel that reads each input once per element.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "kfuse/expr.hpp"

namespace kfuse {

enum class SkeletonKind : std::uint8_t { copy, reduce_accu };

enum class Dialect : std::uint8_t {
  opencl,  // OpenCL C; text only unless a device backend consumes it
  c,       // C99 host kernels, consumed by the host JIT backend
};

std::string_view to_string(SkeletonKind k) noexcept;
std::string_view to_string(Dialect d) noexcept;
std::string_view file_extension(Dialect d) noexcept;

struct KernelSkeleton
{
  SkeletonKind kind;
  Dialect dialect;
  std::string body;
};

const KernelSkeleton& skeleton(SkeletonKind kind, Dialect dialect);

// Every KFUSE_* macro the generator can define.
std::span<const std::string_view> placeholder_names();

enum class ArgKind : std::uint8_t {
  out_buffer,
  out_n_rows,
  out_n_cols,
  in_buffer,
  in_n_rows,
  in_n_cols,
  view_row_offset,
  view_col_offset,
  scalar,
};

// One kernel argument. `type` is the element type for buffers and scalars;
// dimension and offset arguments are 64-bit unsigned.
struct ArgSpec
{
  ArgKind kind;
  std::string name;
  ElemType type = ElemType::f32;
  std::size_t object = 0;  // input / view / scalar ordinal where meaningful
  std::size_t view = 0;
};

std::string describe(const ArgSpec& a);

struct ObjectParams
{
  std::string buffer;
  std::string n_rows;
  std::string n_cols;
  ElemType type;
  std::vector<std::pair<std::string, std::string>> view_offsets;  // (row, col) names
};

struct ScalarParam
{
  std::string name;
  ElemType type;
};

struct MacroSet
{
  std::string kernel_name;
  ElemType out_type = ElemType::f32;
  std::vector<ObjectParams> objects;
  std::vector<ScalarParam> scalars;
  std::string bounds_check_text;
  std::string access_text;
  std::vector<ArgSpec> args;  // output, output dims, objects, scalars
};

struct KernelSource
{
  Dialect dialect;
  SkeletonKind skeleton;
  std::string text;
  std::string entry;
  ExprSignature signature;
  std::vector<ArgSpec> args;
  Expr body;  // interpreter form, for backends without a compiler
};

// Names objects, views and scalar slots in the same traversal order as
// collect_inputs(). One instance per generated kernel.
class FragmentNaming
{
 public:
  explicit FragmentNaming(const CollectedInputs& inputs);

  std::size_t object_of(MatrixId id) const;
  std::size_t next_view(std::size_t object);
  std::size_t next_scalar();

  static std::string buffer_name(std::size_t object);
  static std::string n_rows_name(std::size_t object);
  static std::string n_cols_name(std::size_t object);
  static std::string view_row_name(std::size_t object, std::size_t view);
  static std::string view_col_name(std::size_t object, std::size_t view);
  static std::string scalar_name(std::size_t slot);

 private:
  std::vector<MatrixId> ids_;
  std::vector<std::size_t> view_cursor_;
  std::size_t scalar_cursor_ = 0;
};

// Text of the dialect-neutral type name used inside generated fragments.
std::string_view fragment_type_name(ElemType t) noexcept;

std::string access_fragment(const Expr& node, std::string_view row, std::string_view col,
                            FragmentNaming& naming);

std::string kernel_name_of(const ExprSignature& signature);

MacroSet macros_for(const Expr& expr, const ExprSignature& signature);

KernelSource instantiate(const KernelSkeleton& skeleton, const MacroSet& macros);

// -- planning ---------------------------------------------------------------

// Temporaries live in the upper half of the id space; user matrices never do.
inline constexpr MatrixId temp_id_base = MatrixId{1} << 63;

constexpr bool is_temporary(MatrixId id) noexcept { return id >= temp_id_base; }

struct TempBuffer
{
  MatrixId id;
  ElemType type;
  std::size_t n_elem;
  MatShape shape;
};

struct MatMulStep
{
  MatrixId left;
  MatrixId right;
  MatrixId dest;
  MatShape left_shape;
  MatShape right_shape;
  ElemType type;
};

struct FusedKernelStep
{
  SkeletonKind skeleton = SkeletonKind::copy;
  Expr body;  // MatMul-free; this is also the interpreter form
  ExprSignature signature;
  std::string kernel_name;
  CollectedInputs inputs;
  MatrixId output = 0;
  MatShape shape;  // iteration space = shape of body
};

using PlanStep = std::variant<MatMulStep, FusedKernelStep>;

struct ExecutionPlan
{
  std::vector<TempBuffer> temporaries;
  std::vector<PlanStep> steps;
  MatrixId output = 0;
  MatShape output_shape;
  ElemType output_type = ElemType::f32;
  // Set when the output is read through a non-identity map: the last step
  // writes this temporary, which then replaces the output buffer.
  std::optional<MatrixId> staged_output;
  // reduce plans only: temporary holding one f64 partial sum per column
  std::optional<MatrixId> partials;

  std::size_t fused_steps() const;
  std::size_t matmul_steps() const;
};

ExecutionPlan plan(MatrixId output, const Expr& expr);

// ExecutionPlan whose final step sums the (MatMul-split) expression column by
// column into an f64 partials temporary.
ExecutionPlan reduce_plan(const Expr& expr);

KernelSource source_for(const FusedKernelStep& step, Dialect dialect);

// Writes <kernel_name>.<ext> per source plus manifest.csv with one
// `name,signature,arg_schema` line per kernel. Returns the files written.
std::vector<std::filesystem::path> dump_kernels(const std::filesystem::path& dir,
                                                std::span<const KernelSource> sources);

} // namespace kfuse
