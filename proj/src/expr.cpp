#include "kfuse/expr.hpp"

#include <algorithm>
#include <unordered_map>

namespace kfuse {

std::string_view to_string(ElemType t) noexcept
{
  switch (t) {
    case ElemType::f32: return "f32";
    case ElemType::f64: return "f64";
    case ElemType::u32: return "u32";
    case ElemType::i32: return "i32";
  }
  return "?";
}

ElemType parse_elem_type(std::string_view name)
{
  if (name == "f32") return ElemType::f32;
  if (name == "f64") return ElemType::f64;
  if (name == "u32") return ElemType::u32;
  if (name == "i32") return ElemType::i32;
  throw Error("unknown element type '" + std::string(name) + "'");
}

std::string to_string(MatShape s)
{
  return std::to_string(s.n_rows) + "x" + std::to_string(s.n_cols);
}

bool has_scalar(UnaryOp op) noexcept
{
  switch (op) {
    case UnaryOp::scalar_add:
    case UnaryOp::scalar_pre_mul:
    case UnaryOp::scalar_pre_div:
    case UnaryOp::scalar_post_div:
    case UnaryOp::gt_scalar:
      return true;
    default:
      return false;
  }
}

std::string_view to_string(UnaryOp op) noexcept
{
  switch (op) {
    case UnaryOp::scalar_add: return "sadd";
    case UnaryOp::scalar_pre_mul: return "smul";
    case UnaryOp::scalar_pre_div: return "sdivpre";
    case UnaryOp::scalar_post_div: return "sdivpost";
    case UnaryOp::neg: return "neg";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::sqrt: return "sqrt";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::pow_int: return "pow";
    case UnaryOp::conv: return "conv";
    case UnaryOp::gt_scalar: return "gt";
  }
  return "?";
}

std::string_view to_string(BinaryOp op) noexcept
{
  switch (op) {
    case BinaryOp::plus: return "plus";
    case BinaryOp::minus: return "minus";
    case BinaryOp::schur: return "schur";
    case BinaryOp::elem_div: return "div";
  }
  return "?";
}

namespace {

Expr make(ElemType type, MatShape shape, NodeVariant v)
{
  return Expr(std::make_shared<const Node>(Node{type, shape, std::move(v)}));
}

void require(const Expr& e, const char* what)
{
  if (!e) throw Error(std::string(what) + ": empty expression");
}

bool conv_supported(ElemType from, ElemType to)
{
  if (from == to) return true;
  // integer <-> integer is the only rejected pairing
  return is_floating(from) || is_floating(to);
}

} // namespace

Expr Expr::t() const { return transpose(*this); }

Expr leaf(MatrixId id, ElemType type, MatShape shape)
{
  return make(type, shape, LeafNode{id});
}

Expr subview(MatrixId id, ElemType type, MatShape parent, std::size_t row_offset,
             std::size_t col_offset, MatShape view)
{
  if (row_offset + view.n_rows > parent.n_rows || col_offset + view.n_cols > parent.n_cols) {
    throw BoundsError("subview: rows [" + std::to_string(row_offset) + ", " +
                      std::to_string(row_offset + view.n_rows) + ") cols [" +
                      std::to_string(col_offset) + ", " + std::to_string(col_offset + view.n_cols) +
                      ") outside parent " + to_string(parent));
  }
  return make(type, view, SubviewNode{id, row_offset, col_offset, parent});
}

Expr diag(MatrixId id, ElemType type, MatShape parent, std::int64_t k)
{
  const auto rows = static_cast<std::int64_t>(parent.n_rows);
  const auto cols = static_cast<std::int64_t>(parent.n_cols);
  std::int64_t len = 0;
  if (k >= 0 && k < std::max<std::int64_t>(cols, 1)) {
    len = std::min(rows, cols - k);
  } else if (k < 0 && -k < std::max<std::int64_t>(rows, 1)) {
    len = std::min(rows + k, cols);
  } else {
    throw BoundsError("diag: offset " + std::to_string(k) + " outside parent " + to_string(parent));
  }
  return make(type, MatShape{static_cast<std::size_t>(std::max<std::int64_t>(len, 0)), 1},
              DiagNode{id, k, parent});
}

Expr unary(UnaryOp op, const Expr& child, double scalar)
{
  require(child, "unary");
  if (op == UnaryOp::pow_int || op == UnaryOp::conv) {
    throw Error("unary: use pow_int() or conv() for this operation");
  }
  const ElemType t = child.type();
  switch (op) {
    case UnaryOp::scalar_pre_div:
    case UnaryOp::scalar_post_div:
    case UnaryOp::exp:
    case UnaryOp::log:
    case UnaryOp::sqrt:
    case UnaryOp::tanh:
      if (!is_floating(t)) {
        throw TypeError(std::string(to_string(op)) + ": requires a floating-point operand, got " +
                        std::string(to_string(t)));
      }
      break;
    default:
      break;
  }
  return make(t, child.shape(), UnaryNode{op, has_scalar(op) ? scalar : 0.0, 0, child});
}

Expr pow_int(const Expr& child, int exponent)
{
  require(child, "pow");
  if (exponent < 0 || exponent > 16) {
    throw Error("pow: exponent must be an integer in [0, 16], got " + std::to_string(exponent));
  }
  return make(child.type(), child.shape(), UnaryNode{UnaryOp::pow_int, 0.0, exponent, child});
}

Expr conv(const Expr& child, ElemType to)
{
  require(child, "conv_to");
  if (!conv_supported(child.type(), to)) {
    throw TypeError("conv_to: unsupported conversion " + std::string(to_string(child.type())) +
                    " -> " + std::string(to_string(to)));
  }
  return make(to, child.shape(), UnaryNode{UnaryOp::conv, 0.0, 0, child});
}

Expr binary(BinaryOp op, const Expr& left, const Expr& right)
{
  require(left, "binary");
  require(right, "binary");
  if (left.shape() != right.shape()) {
    throw ShapeError(std::string(to_string(op)) + ": incompatible shapes " +
                     to_string(left.shape()) + " and " + to_string(right.shape()));
  }
  if (left.type() != right.type()) {
    throw TypeError(std::string(to_string(op)) + ": mixed element types " +
                    std::string(to_string(left.type())) + " and " +
                    std::string(to_string(right.type())) + " (use conv_to)");
  }
  if (op == BinaryOp::elem_div && !is_floating(left.type())) {
    throw TypeError("div: requires floating-point operands");
  }
  return make(left.type(), left.shape(), BinaryNode{op, left, right});
}

Expr transpose(const Expr& child)
{
  require(child, "trans");
  return make(child.type(), child.shape().transposed(), TransposeNode{child});
}

Expr matmul(const Expr& left, const Expr& right)
{
  require(left, "matmul");
  require(right, "matmul");
  if (left.shape().n_cols != right.shape().n_rows) {
    throw ShapeError("matmul: incompatible shapes " + to_string(left.shape()) + " and " +
                     to_string(right.shape()));
  }
  if (left.type() != right.type()) {
    throw TypeError("matmul: mixed element types " + std::string(to_string(left.type())) +
                    " and " + std::string(to_string(right.type())));
  }
  if (!is_floating(left.type())) {
    throw TypeError("matmul: requires floating-point operands");
  }
  return make(left.type(), MatShape{left.shape().n_rows, right.shape().n_cols},
              MatMulNode{left, right});
}

Expr operator+(const Expr& a, const Expr& b) { return binary(BinaryOp::plus, a, b); }
Expr operator-(const Expr& a, const Expr& b) { return binary(BinaryOp::minus, a, b); }
Expr operator%(const Expr& a, const Expr& b) { return binary(BinaryOp::schur, a, b); }
Expr operator/(const Expr& a, const Expr& b) { return binary(BinaryOp::elem_div, a, b); }
Expr operator*(const Expr& a, const Expr& b) { return matmul(a, b); }

Expr operator+(const Expr& a, double s) { return unary(UnaryOp::scalar_add, a, s); }
Expr operator+(double s, const Expr& a) { return unary(UnaryOp::scalar_add, a, s); }
Expr operator-(const Expr& a, double s) { return unary(UnaryOp::scalar_add, a, -s); }
Expr operator*(double s, const Expr& a) { return unary(UnaryOp::scalar_pre_mul, a, s); }
Expr operator*(const Expr& a, double s) { return unary(UnaryOp::scalar_pre_mul, a, s); }
Expr operator/(double s, const Expr& a) { return unary(UnaryOp::scalar_pre_div, a, s); }
Expr operator/(const Expr& a, double s) { return unary(UnaryOp::scalar_post_div, a, s); }
Expr operator>(const Expr& a, double s) { return unary(UnaryOp::gt_scalar, a, s); }
Expr operator-(const Expr& a) { return unary(UnaryOp::neg, a); }

Expr exp(const Expr& a) { return unary(UnaryOp::exp, a); }
Expr log(const Expr& a) { return unary(UnaryOp::log, a); }
Expr sqrt(const Expr& a) { return unary(UnaryOp::sqrt, a); }
Expr tanh(const Expr& a) { return unary(UnaryOp::tanh, a); }
Expr pow(const Expr& a, int exponent) { return pow_int(a, exponent); }

MatShape shape_of(const Expr& e) { return e.shape(); }

bool contains_matmul(const Expr& e)
{
  return std::visit(
      [](const auto& n) -> bool {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, MatMulNode>) {
          return true;
        } else if constexpr (std::is_same_v<T, UnaryNode> || std::is_same_v<T, TransposeNode>) {
          return contains_matmul(n.child);
        } else if constexpr (std::is_same_v<T, BinaryNode>) {
          return contains_matmul(n.left) || contains_matmul(n.right);
        } else {
          return false;
        }
      },
      e.node().v);
}

namespace {

class SignatureWriter
{
 public:
  std::string out;

  void write(const Expr& e)
  {
    const Node& n = e.node();
    std::visit([&](const auto& v) { emit(n, v); }, n.v);
  }

 private:
  std::unordered_map<MatrixId, std::size_t> ordinals_;

  std::size_t ordinal(MatrixId id)
  {
    return ordinals_.try_emplace(id, ordinals_.size()).first->second;
  }

  void type_tag(const Node& n)
  {
    out += ':';
    out += to_string(n.type);
  }

  void emit(const Node& n, const LeafNode& v)
  {
    out += 'L' + std::to_string(ordinal(v.id));
    type_tag(n);
  }
  void emit(const Node& n, const SubviewNode& v)
  {
    out += 'S' + std::to_string(ordinal(v.id));
    type_tag(n);
  }
  void emit(const Node& n, const DiagNode& v)
  {
    out += 'D' + std::to_string(ordinal(v.id));
    type_tag(n);
  }
  void emit(const Node& n, const UnaryNode& v)
  {
    out += to_string(v.op);
    if (v.op == UnaryOp::pow_int) out += std::to_string(v.exponent);
    if (has_scalar(v.op)) out += '$';
    type_tag(n);
    out += '(';
    write(v.child);
    out += ')';
  }
  void emit(const Node& n, const BinaryNode& v)
  {
    out += to_string(v.op);
    type_tag(n);
    out += '(';
    write(v.left);
    out += ',';
    write(v.right);
    out += ')';
  }
  void emit(const Node& n, const TransposeNode& v)
  {
    out += 'T';
    type_tag(n);
    out += '(';
    write(v.child);
    out += ')';
  }
  void emit(const Node& n, const MatMulNode& v)
  {
    out += 'M';
    type_tag(n);
    out += '(';
    write(v.left);
    out += ',';
    write(v.right);
    out += ')';
  }
};

class InputCollector
{
 public:
  CollectedInputs result;

  void walk(const Expr& e)
  {
    const Node& n = e.node();
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, LeafNode>) {
            object(v.id, n.type, n.shape).direct = true;
          } else if constexpr (std::is_same_v<T, SubviewNode>) {
            object(v.id, n.type, v.parent)
                .views.push_back({ViewKind::subview, v.row_offset, v.col_offset, n.shape});
          } else if constexpr (std::is_same_v<T, DiagNode>) {
            object(v.id, n.type, v.parent)
                .views.push_back({ViewKind::diag, v.row_offset(), v.col_offset(), n.shape});
          } else if constexpr (std::is_same_v<T, UnaryNode>) {
            if (has_scalar(v.op)) {
              result.scalars.push_back({result.scalars.size(), v.scalar, n.type});
            }
            walk(v.child);
          } else if constexpr (std::is_same_v<T, TransposeNode>) {
            walk(v.child);
          } else {
            walk(v.left);
            walk(v.right);
          }
        },
        n.v);
  }

 private:
  InputRef& object(MatrixId id, ElemType type, MatShape parent)
  {
    auto it = std::find_if(result.objects.begin(), result.objects.end(),
                           [id](const InputRef& r) { return r.id == id; });
    if (it != result.objects.end()) return *it;
    result.objects.push_back(InputRef{id, type, parent, false, {}});
    return result.objects.back();
  }
};

// Worst classification of `output` below `e`; `mapped` is true once a
// non-identity index map sits on the path.
AliasKind alias_walk(MatrixId output, const Expr& e, bool mapped)
{
  const auto worst = [](AliasKind a, AliasKind b) { return a > b ? a : b; };
  return std::visit(
      [&](const auto& v) -> AliasKind {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, LeafNode>) {
          if (v.id != output) return AliasKind::none;
          return mapped ? AliasKind::unsafe : AliasKind::safe;
        } else if constexpr (std::is_same_v<T, SubviewNode> || std::is_same_v<T, DiagNode>) {
          return v.id == output ? AliasKind::unsafe : AliasKind::none;
        } else if constexpr (std::is_same_v<T, UnaryNode>) {
          return alias_walk(output, v.child, mapped);
        } else if constexpr (std::is_same_v<T, TransposeNode>) {
          return alias_walk(output, v.child, true);
        } else if constexpr (std::is_same_v<T, BinaryNode>) {
          return worst(alias_walk(output, v.left, mapped), alias_walk(output, v.right, mapped));
        } else {
          return worst(alias_walk(output, v.left, true), alias_walk(output, v.right, true));
        }
      },
      e.node().v);
}

} // namespace

ExprSignature signature_of(const Expr& e)
{
  SignatureWriter w;
  w.write(e);
  return ExprSignature{std::move(w.out)};
}

CollectedInputs collect_inputs(const Expr& e)
{
  InputCollector c;
  c.walk(e);
  return std::move(c.result);
}

AliasKind aliases(MatrixId output, const Expr& e)
{
  return alias_walk(output, e, false);
}

} // namespace kfuse
