#include "kfuse/kernel_gen.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

namespace kfuse {

std::string_view to_string(SkeletonKind k) noexcept
{
  return k == SkeletonKind::copy ? "copy" : "reduce_accu";
}

std::string_view to_string(Dialect d) noexcept
{
  return d == Dialect::opencl ? "opencl" : "c";
}

std::string_view file_extension(Dialect d) noexcept
{
  return d == Dialect::opencl ? "cl" : "c";
}

namespace {

constexpr std::array<std::string_view, 6> kPlaceholders = {
    "KFUSE_KERNEL_FUNC",           "KFUSE_OUT_T",         "KFUSE_OBJECT_1_PARAMS",
    "KFUSE_SCALAR_PARAMS",         "KFUSE_OBJECT_1_AT",   "KFUSE_OBJECT_1_BOUNDS_CHECK",
};

// Helpers shared by both dialects; relies on KF_INLINE and the kf_* typedefs.
constexpr std::string_view kHelpers = R"(
KF_INLINE float kf_pow_f32(float x, int e) { float r = x; if (e == 0) return (float)1; for (int i = 1; i < e; ++i) r = r * x; return r; }
KF_INLINE double kf_pow_f64(double x, int e) { double r = x; if (e == 0) return (double)1; for (int i = 1; i < e; ++i) r = r * x; return r; }
KF_INLINE kf_u32 kf_pow_u32(kf_u32 x, int e) { kf_u32 r = x; if (e == 0) return (kf_u32)1; for (int i = 1; i < e; ++i) r = r * x; return r; }
KF_INLINE kf_i32 kf_pow_i32(kf_i32 x, int e) { kf_u32 r = (kf_u32)x; if (e == 0) return (kf_i32)1; for (int i = 1; i < e; ++i) r = r * (kf_u32)x; return (kf_i32)r; }
KF_INLINE kf_i32 kf_to_i32(double x) { if (!(x == x)) return 0; if (x >= 2147483647.0) return 2147483647; if (x <= -2147483648.0) return (-2147483647 - 1); return (kf_i32)x; }
KF_INLINE kf_u32 kf_to_u32(double x) { if (!(x > 0.0)) return 0u; if (x >= 4294967295.0) return 4294967295u; return (kf_u32)x; }
)";

constexpr std::string_view kOpenclPrelude = R"(#pragma OPENCL EXTENSION cl_khr_fp64 : enable
#define KF_INLINE inline
typedef uint kf_u32;
typedef int kf_i32;
typedef ulong kf_index;
)";

constexpr std::string_view kCPrelude = R"(#include <stddef.h>
#include <stdint.h>
#include <tgmath.h>
#define KF_INLINE static inline
typedef uint32_t kf_u32;
typedef int32_t kf_i32;
typedef uint64_t kf_index;
)";

constexpr std::string_view kOpenclCopy = R"(
__kernel void KFUSE_KERNEL_FUNC(__global KFUSE_OUT_T* out, const kf_index out_n_rows, const kf_index out_n_cols KFUSE_OBJECT_1_PARAMS KFUSE_SCALAR_PARAMS)
  {
  const kf_index row = get_global_id(0);
  const kf_index col = get_global_id(1);
  if (KFUSE_OBJECT_1_BOUNDS_CHECK(row, col))
    {
    out[row + col * out_n_rows] = KFUSE_OBJECT_1_AT(row, col);
    }
  }
)";

constexpr std::string_view kOpenclReduce = R"(
__kernel void KFUSE_KERNEL_FUNC(__global double* out, const kf_index out_n_rows, const kf_index out_n_cols KFUSE_OBJECT_1_PARAMS KFUSE_SCALAR_PARAMS)
  {
  const kf_index col = get_global_id(0);
  if (col < out_n_cols)
    {
    double acc = 0.0;
    for (kf_index row = 0; row < out_n_rows; ++row)
      {
      if (KFUSE_OBJECT_1_BOUNDS_CHECK(row, col))
        {
        acc += (double) KFUSE_OBJECT_1_AT(row, col);
        }
      }
    out[col] = acc;
    }
  }
)";

constexpr std::string_view kCCopy = R"(
void KFUSE_KERNEL_FUNC(void* const* kf_args, kf_index kf_col_begin, kf_index kf_col_end)
  {
  KFUSE_OUT_T* const out = (KFUSE_OUT_T*) kf_args[0];
  const kf_index out_n_rows = *(const kf_index*) kf_args[1];
  const kf_index out_n_cols = *(const kf_index*) kf_args[2];
  KFUSE_OBJECT_1_PARAMS
  KFUSE_SCALAR_PARAMS
  for (kf_index col = kf_col_begin; col < kf_col_end; ++col)
    {
    for (kf_index row = 0; row < out_n_rows; ++row)
      {
      if (KFUSE_OBJECT_1_BOUNDS_CHECK(row, col))
        {
        out[row + col * out_n_rows] = KFUSE_OBJECT_1_AT(row, col);
        }
      }
    }
  }
)";

constexpr std::string_view kCReduce = R"(
void KFUSE_KERNEL_FUNC(void* const* kf_args, kf_index kf_col_begin, kf_index kf_col_end)
  {
  double* const out = (double*) kf_args[0];
  const kf_index out_n_rows = *(const kf_index*) kf_args[1];
  const kf_index out_n_cols = *(const kf_index*) kf_args[2];
  KFUSE_OBJECT_1_PARAMS
  KFUSE_SCALAR_PARAMS
  for (kf_index col = kf_col_begin; col < kf_col_end && col < out_n_cols; ++col)
    {
    double acc = 0.0;
    for (kf_index row = 0; row < out_n_rows; ++row)
      {
      if (KFUSE_OBJECT_1_BOUNDS_CHECK(row, col))
        {
        acc += (double) KFUSE_OBJECT_1_AT(row, col);
        }
      }
    out[col] = acc;
    }
  }
)";

KernelSkeleton build_skeleton(SkeletonKind kind, Dialect dialect)
{
  std::string body(dialect == Dialect::opencl ? kOpenclPrelude : kCPrelude);
  body += kHelpers;
  if (dialect == Dialect::opencl) {
    body += kind == SkeletonKind::copy ? kOpenclCopy : kOpenclReduce;
  } else {
    body += kind == SkeletonKind::copy ? kCCopy : kCReduce;
  }
  return KernelSkeleton{kind, dialect, std::move(body)};
}

std::string_view type_suffix(ElemType t) { return to_string(t); }

std::string buffer_decl_type(ElemType t)
{
  return std::string(fragment_type_name(t));
}

std::uint64_t fnv1a64(std::string_view s)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class FragmentBuilder
{
 public:
  explicit FragmentBuilder(FragmentNaming& naming) : naming_(naming) {}

  std::string build(const Expr& e, std::string_view row, std::string_view col)
  {
    const Node& n = e.node();
    return std::visit([&](const auto& v) { return emit(n, v, row, col); }, n.v);
  }

 private:
  FragmentNaming& naming_;

  static std::string index(std::string_view buf, std::string_view r, std::string_view c,
                           std::string_view ld)
  {
    std::string s(buf);
    s += '[';
    s += r;
    s += " + ";
    s += c;
    s += " * ";
    s += ld;
    s += ']';
    return s;
  }

  static std::string paren(std::string_view x) { return "(" + std::string(x) + ")"; }

  std::string emit(const Node&, const LeafNode& v, std::string_view row, std::string_view col)
  {
    const std::size_t o = naming_.object_of(v.id);
    return index(FragmentNaming::buffer_name(o), paren(row), paren(col),
                 FragmentNaming::n_rows_name(o));
  }

  std::string emit(const Node&, const SubviewNode& v, std::string_view row, std::string_view col)
  {
    const std::size_t o = naming_.object_of(v.id);
    const std::size_t w = naming_.next_view(o);
    return index(FragmentNaming::buffer_name(o),
                 "(" + paren(row) + " + " + FragmentNaming::view_row_name(o, w) + ")",
                 "(" + paren(col) + " + " + FragmentNaming::view_col_name(o, w) + ")",
                 FragmentNaming::n_rows_name(o));
  }

  std::string emit(const Node&, const DiagNode& v, std::string_view row, std::string_view)
  {
    // element i of the diagonal is parent(i + row_off, i + col_off)
    const std::size_t o = naming_.object_of(v.id);
    const std::size_t w = naming_.next_view(o);
    return index(FragmentNaming::buffer_name(o),
                 "(" + paren(row) + " + " + FragmentNaming::view_row_name(o, w) + ")",
                 "(" + paren(row) + " + " + FragmentNaming::view_col_name(o, w) + ")",
                 FragmentNaming::n_rows_name(o));
  }

  std::string emit(const Node& n, const UnaryNode& v, std::string_view row, std::string_view col)
  {
    std::string s;
    if (has_scalar(v.op)) s = FragmentNaming::scalar_name(naming_.next_scalar());
    const std::string c = build(v.child, row, col);
    const std::string_view tn = fragment_type_name(n.type);
    switch (v.op) {
      case UnaryOp::scalar_add: return "(" + c + " + " + s + ")";
      case UnaryOp::scalar_pre_mul: return "(" + s + " * " + c + ")";
      case UnaryOp::scalar_pre_div: return "(" + s + " / " + c + ")";
      case UnaryOp::scalar_post_div: return "(" + c + " / " + s + ")";
      case UnaryOp::neg: return "(-" + c + ")";
      case UnaryOp::exp: return "exp(" + c + ")";
      case UnaryOp::log: return "log(" + c + ")";
      case UnaryOp::sqrt: return "sqrt(" + c + ")";
      case UnaryOp::tanh: return "tanh(" + c + ")";
      case UnaryOp::pow_int:
        return "kf_pow_" + std::string(type_suffix(n.type)) + "(" + c + ", " +
               std::to_string(v.exponent) + ")";
      case UnaryOp::conv:
        if (is_floating(n.type)) return "((" + std::string(tn) + ")" + c + ")";
        return "kf_to_" + std::string(type_suffix(n.type)) + "(" + c + ")";
      case UnaryOp::gt_scalar:
        return "((" + c + " > " + s + ") ? (" + std::string(tn) + ")1 : (" + std::string(tn) +
               ")0)";
    }
    throw GenerationError("unhandled unary operation");
  }

  std::string emit(const Node&, const BinaryNode& v, std::string_view row, std::string_view col)
  {
    const std::string l = build(v.left, row, col);
    const std::string r = build(v.right, row, col);
    const char* op = " + ";
    switch (v.op) {
      case BinaryOp::plus: op = " + "; break;
      case BinaryOp::minus: op = " - "; break;
      case BinaryOp::schur: op = " * "; break;
      case BinaryOp::elem_div: op = " / "; break;
    }
    return "(" + l + op + r + ")";
  }

  std::string emit(const Node&, const TransposeNode& v, std::string_view row, std::string_view col)
  {
    return build(v.child, col, row);
  }

  std::string emit(const Node&, const MatMulNode&, std::string_view, std::string_view)
  {
    throw PlanError("access_fragment: matrix product inside a fused kernel body");
  }
};

std::string params_text(const MacroSet& m, Dialect d, bool scalars)
{
  std::string out;
  std::size_t pos = 0;
  for (const ArgSpec& a : m.args) {
    const std::size_t index = pos++;
    const bool is_scalar = a.kind == ArgKind::scalar;
    if (is_scalar != scalars) continue;
    std::string type;
    bool pointer = false;
    switch (a.kind) {
      case ArgKind::out_buffer:
      case ArgKind::out_n_rows:
      case ArgKind::out_n_cols:
        continue;  // part of the skeleton signature
      case ArgKind::in_buffer:
        type = buffer_decl_type(a.type);
        pointer = true;
        break;
      case ArgKind::scalar:
        type = buffer_decl_type(a.type);
        break;
      default:
        type = "kf_index";
        break;
    }
    if (d == Dialect::opencl) {
      out += pointer ? ", __global const " + type + "* " + a.name : ", const " + type + " " + a.name;
    } else {
      const std::string slot = "kf_args[" + std::to_string(index) + "]";
      if (pointer) {
        out += "const " + type + "* const " + a.name + " = (const " + type + "*) " + slot + "; ";
      } else {
        out += "const " + type + " " + a.name + " = *(const " + type + "*) " + slot + "; ";
      }
      out += "(void) " + a.name + "; ";
    }
  }
  return out;
}

bool is_ident_char(char c)
{
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

} // namespace

const KernelSkeleton& skeleton(SkeletonKind kind, Dialect dialect)
{
  static const std::array<KernelSkeleton, 4> all = {
      build_skeleton(SkeletonKind::copy, Dialect::opencl),
      build_skeleton(SkeletonKind::reduce_accu, Dialect::opencl),
      build_skeleton(SkeletonKind::copy, Dialect::c),
      build_skeleton(SkeletonKind::reduce_accu, Dialect::c),
  };
  return all[static_cast<std::size_t>(dialect) * 2 + static_cast<std::size_t>(kind)];
}

std::span<const std::string_view> placeholder_names() { return kPlaceholders; }

std::string describe(const ArgSpec& a)
{
  switch (a.kind) {
    case ArgKind::out_buffer:
    case ArgKind::in_buffer:
      return a.name + ":" + std::string(to_string(a.type)) + "*";
    case ArgKind::scalar:
      return a.name + ":" + std::string(to_string(a.type));
    default:
      return a.name + ":u64";
  }
}

FragmentNaming::FragmentNaming(const CollectedInputs& inputs)
{
  for (const InputRef& r : inputs.objects) ids_.push_back(r.id);
  view_cursor_.assign(ids_.size(), 0);
}

std::size_t FragmentNaming::object_of(MatrixId id) const
{
  const auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) throw GenerationError("matrix " + std::to_string(id) + " not among inputs");
  return static_cast<std::size_t>(it - ids_.begin());
}

std::size_t FragmentNaming::next_view(std::size_t object) { return view_cursor_.at(object)++; }
std::size_t FragmentNaming::next_scalar() { return scalar_cursor_++; }

std::string FragmentNaming::buffer_name(std::size_t o) { return "in" + std::to_string(o); }
std::string FragmentNaming::n_rows_name(std::size_t o) { return buffer_name(o) + "_n_rows"; }
std::string FragmentNaming::n_cols_name(std::size_t o) { return buffer_name(o) + "_n_cols"; }

std::string FragmentNaming::view_row_name(std::size_t o, std::size_t v)
{
  return buffer_name(o) + "_v" + std::to_string(v) + "_row_off";
}

std::string FragmentNaming::view_col_name(std::size_t o, std::size_t v)
{
  return buffer_name(o) + "_v" + std::to_string(v) + "_col_off";
}

std::string FragmentNaming::scalar_name(std::size_t slot) { return "s" + std::to_string(slot); }

std::string_view fragment_type_name(ElemType t) noexcept
{
  switch (t) {
    case ElemType::f32: return "float";
    case ElemType::f64: return "double";
    case ElemType::u32: return "kf_u32";
    case ElemType::i32: return "kf_i32";
  }
  return "float";
}

std::string access_fragment(const Expr& node, std::string_view row, std::string_view col,
                            FragmentNaming& naming)
{
  return FragmentBuilder(naming).build(node, row, col);
}

std::string kernel_name_of(const ExprSignature& signature)
{
  std::string prefix;
  for (char c : signature.text) {
    if (!std::isalnum(static_cast<unsigned char>(c)) || prefix.size() >= 12) break;
    prefix += c;
  }
  if (prefix.empty()) prefix = "expr";
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a64(signature.text)));
  return "kf_" + prefix + "_" + hash;
}

MacroSet macros_for(const Expr& expr, const ExprSignature& signature)
{
  if (contains_matmul(expr)) {
    throw PlanError("macros_for: matrix product must be split out before generation");
  }
  const CollectedInputs inputs = collect_inputs(expr);
  MacroSet m;
  m.kernel_name = kernel_name_of(signature);
  m.out_type = expr.type();
  m.args.push_back({ArgKind::out_buffer, "out", expr.type()});
  m.args.push_back({ArgKind::out_n_rows, "out_n_rows"});
  m.args.push_back({ArgKind::out_n_cols, "out_n_cols"});
  for (std::size_t o = 0; o < inputs.objects.size(); ++o) {
    const InputRef& in = inputs.objects[o];
    ObjectParams p{FragmentNaming::buffer_name(o), FragmentNaming::n_rows_name(o),
                   FragmentNaming::n_cols_name(o), in.type, {}};
    m.args.push_back({ArgKind::in_buffer, p.buffer, in.type, o});
    m.args.push_back({ArgKind::in_n_rows, p.n_rows, in.type, o});
    m.args.push_back({ArgKind::in_n_cols, p.n_cols, in.type, o});
    for (std::size_t v = 0; v < in.views.size(); ++v) {
      p.view_offsets.emplace_back(FragmentNaming::view_row_name(o, v),
                                  FragmentNaming::view_col_name(o, v));
      m.args.push_back({ArgKind::view_row_offset, p.view_offsets.back().first, in.type, o, v});
      m.args.push_back({ArgKind::view_col_offset, p.view_offsets.back().second, in.type, o, v});
    }
    m.objects.push_back(std::move(p));
  }
  for (const ScalarSlot& s : inputs.scalars) {
    m.scalars.push_back({FragmentNaming::scalar_name(s.index), s.type});
    m.args.push_back({ArgKind::scalar, m.scalars.back().name, s.type, s.index});
  }
  m.bounds_check_text = "((row) < out_n_rows && (col) < out_n_cols)";
  FragmentNaming naming(inputs);
  m.access_text = access_fragment(expr, "row", "col", naming);
  return m;
}

KernelSource instantiate(const KernelSkeleton& skel, const MacroSet& macros)
{
  // Every KFUSE_* identifier in the skeleton must be one we define.
  std::set<std::string> missing;
  const std::string& body = skel.body;
  for (std::size_t i = body.find("KFUSE_"); i != std::string::npos; i = body.find("KFUSE_", i)) {
    if (i > 0 && is_ident_char(body[i - 1])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < body.size() && is_ident_char(body[j])) ++j;
    const std::string name = body.substr(i, j - i);
    if (std::find(kPlaceholders.begin(), kPlaceholders.end(), name) == kPlaceholders.end()) {
      missing.insert(name);
    }
    i = j;
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& n : missing) list += (list.empty() ? "" : ", ") + n;
    throw GenerationError("skeleton '" + std::string(to_string(skel.kind)) +
                          "' uses undefined placeholders: " + list);
  }

  std::string text;
  text += "// " + macros.kernel_name + " (" + std::string(to_string(skel.kind)) + ", " +
          std::string(to_string(skel.dialect)) + ")\n";
  text += "#define KFUSE_KERNEL_FUNC " + macros.kernel_name + "\n";
  text += "#define KFUSE_OUT_T " + std::string(fragment_type_name(macros.out_type)) + "\n";
  text += "#define KFUSE_OBJECT_1_PARAMS " + params_text(macros, skel.dialect, false) + "\n";
  text += "#define KFUSE_SCALAR_PARAMS " + params_text(macros, skel.dialect, true) + "\n";
  text += "#define KFUSE_OBJECT_1_BOUNDS_CHECK(row, col) " + macros.bounds_check_text + "\n";
  text += "#define KFUSE_OBJECT_1_AT(row, col) " + macros.access_text + "\n";
  text += body;

  KernelSource src;
  src.dialect = skel.dialect;
  src.skeleton = skel.kind;
  src.text = std::move(text);
  src.entry = macros.kernel_name;
  src.args = macros.args;
  if (skel.kind == SkeletonKind::reduce_accu) src.args.front().type = ElemType::f64;
  return src;
}

// -- planning ---------------------------------------------------------------

std::size_t ExecutionPlan::fused_steps() const
{
  return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const PlanStep& s) {
    return std::holds_alternative<FusedKernelStep>(s);
  }));
}

std::size_t ExecutionPlan::matmul_steps() const { return steps.size() - fused_steps(); }

namespace {

class Planner
{
 public:
  ExecutionPlan result;

  MatrixId new_temp(ElemType type, MatShape shape, std::size_t n_elem)
  {
    const MatrixId id = temp_id_base + result.temporaries.size();
    result.temporaries.push_back({id, type, n_elem, shape});
    return id;
  }

  MatrixId new_temp(ElemType type, MatShape shape) { return new_temp(type, shape, shape.n_elem()); }

  void fused(SkeletonKind kind, const Expr& body, MatrixId dest)
  {
    FusedKernelStep s;
    s.skeleton = kind;
    s.body = body;
    s.signature = signature_of(body);
    if (kind == SkeletonKind::reduce_accu) s.signature.text = "accu|" + s.signature.text;
    s.kernel_name = kernel_name_of(s.signature);
    s.inputs = collect_inputs(body);
    s.output = dest;
    s.shape = body.shape();
    result.steps.emplace_back(std::move(s));
  }

  // Emits the product into `dest`; operands that are not plain leaves are
  // materialised first.
  void product(const MatMulNode& mm, const Node& n, MatrixId dest)
  {
    const MatrixId l = operand(mm.left);
    const MatrixId r = operand(mm.right);
    result.steps.emplace_back(
        MatMulStep{l, r, dest, mm.left.shape(), mm.right.shape(), n.type});
  }

  MatrixId operand(const Expr& e)
  {
    if (const auto* lf = std::get_if<LeafNode>(&e.node().v)) return lf->id;
    const MatrixId t = new_temp(e.type(), e.shape());
    if (const auto* mm = std::get_if<MatMulNode>(&e.node().v)) {
      product(*mm, e.node(), t);
    } else {
      fused(SkeletonKind::copy, lower(e), t);
    }
    return t;
  }

  // Replaces every product below `e` with a leaf on its temporary.
  Expr lower(const Expr& e)
  {
    const Node& n = e.node();
    return std::visit(
        [&](const auto& v) -> Expr {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, MatMulNode>) {
            const MatrixId t = new_temp(n.type, n.shape);
            product(v, n, t);
            return leaf(t, n.type, n.shape);
          } else if constexpr (std::is_same_v<T, UnaryNode>) {
            Expr c = lower(v.child);
            if (c.get() == v.child.get()) return e;
            if (v.op == UnaryOp::pow_int) return pow_int(c, v.exponent);
            if (v.op == UnaryOp::conv) return conv(c, n.type);
            return unary(v.op, c, v.scalar);
          } else if constexpr (std::is_same_v<T, TransposeNode>) {
            Expr c = lower(v.child);
            return c.get() == v.child.get() ? e : transpose(c);
          } else if constexpr (std::is_same_v<T, BinaryNode>) {
            Expr l = lower(v.left);
            Expr r = lower(v.right);
            if (l.get() == v.left.get() && r.get() == v.right.get()) return e;
            return binary(v.op, l, r);
          } else {
            return e;
          }
        },
        n.v);
  }
};

} // namespace

ExecutionPlan plan(MatrixId output, const Expr& expr)
{
  if (!expr) throw PlanError("plan: empty expression");
  Planner p;
  p.result.output = output;
  p.result.output_shape = expr.shape();
  p.result.output_type = expr.type();

  MatrixId dest = output;
  if (aliases(output, expr) == AliasKind::unsafe) {
    dest = p.new_temp(expr.type(), expr.shape());
    p.result.staged_output = dest;
  }
  if (const auto* mm = std::get_if<MatMulNode>(&expr.node().v)) {
    p.product(*mm, expr.node(), dest);
  } else {
    p.fused(SkeletonKind::copy, p.lower(expr), dest);
  }
  return std::move(p.result);
}

ExecutionPlan reduce_plan(const Expr& expr)
{
  if (!expr) throw PlanError("reduce_plan: empty expression");
  Planner p;
  const Expr body = p.lower(expr);
  const MatShape s = body.shape();
  const MatrixId partials = p.new_temp(ElemType::f64, MatShape{1, s.n_cols}, s.n_cols);
  p.fused(SkeletonKind::reduce_accu, body, partials);
  p.result.output = partials;
  p.result.output_shape = MatShape{1, s.n_cols};
  p.result.output_type = ElemType::f64;
  p.result.partials = partials;
  return std::move(p.result);
}

KernelSource source_for(const FusedKernelStep& step, Dialect dialect)
{
  KernelSource src =
      instantiate(skeleton(step.skeleton, dialect), macros_for(step.body, step.signature));
  src.signature = step.signature;
  src.body = step.body;
  return src;
}

namespace {

std::string csv_field(const std::string& s)
{
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

} // namespace

std::vector<std::filesystem::path> dump_kernels(const std::filesystem::path& dir,
                                                std::span<const KernelSource> sources)
{
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto manifest_path = dir / "manifest.csv";
  std::ofstream manifest(manifest_path);
  if (!manifest) throw Error("cannot write " + manifest_path.string());
  manifest << "name,signature,arg_schema\n";
  std::set<std::string> seen;
  for (const KernelSource& src : sources) {
    if (!seen.insert(src.entry).second) continue;
    const auto path = dir / (src.entry + "." + std::string(file_extension(src.dialect)));
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << src.text;
    std::string schema;
    for (const ArgSpec& a : src.args) schema += (schema.empty() ? "" : " ") + describe(a);
    manifest << csv_field(src.entry) << ',' << csv_field(src.signature.text) << ','
             << csv_field(schema) << '\n';
    written.push_back(path);
  }
  if (!manifest) throw Error("error writing " + manifest_path.string());
  written.push_back(manifest_path);
  return written;
}

} // namespace kfuse
