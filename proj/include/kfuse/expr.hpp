#pragma once

// Expression trees.
//
// Every user-facing operator builds an immutable node; no arithmetic happens
// until the tree is assigned to a matrix. Nodes are shared through
// shared_ptr<const Node>, so subtrees can appear in several trees and a tree
// may be read from several threads at once.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kfuse/types.hpp"

namespace kfuse {

struct Node;

class Expr
{
 public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  const Node& node() const;
  const Node* get() const noexcept { return node_.get(); }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  ElemType type() const;
  MatShape shape() const;

  Expr t() const;

 private:
  std::shared_ptr<const Node> node_;
};

enum class UnaryOp : std::uint8_t {
  scalar_add,       // x + s
  scalar_pre_mul,   // s * x
  scalar_pre_div,   // s / x
  scalar_post_div,  // x / s
  neg,
  exp,
  log,
  sqrt,
  tanh,
  pow_int,
  conv,
  gt_scalar,        // x > s ? 1 : 0
};

enum class BinaryOp : std::uint8_t { plus, minus, schur, elem_div };

bool has_scalar(UnaryOp op) noexcept;
std::string_view to_string(UnaryOp op) noexcept;
std::string_view to_string(BinaryOp op) noexcept;

struct LeafNode
{
  MatrixId id;
};

struct SubviewNode
{
  MatrixId id;
  std::size_t row_offset;
  std::size_t col_offset;
  MatShape parent;
};

struct DiagNode
{
  MatrixId id;
  std::int64_t k;
  MatShape parent;

  // First element of the diagonal inside the parent.
  std::size_t row_offset() const noexcept { return k < 0 ? static_cast<std::size_t>(-k) : 0; }
  std::size_t col_offset() const noexcept { return k > 0 ? static_cast<std::size_t>(k) : 0; }
};

struct UnaryNode
{
  UnaryOp op;
  double scalar = 0.0;   // meaningful only when has_scalar(op)
  int exponent = 0;      // pow_int only
  Expr child;
};

struct BinaryNode
{
  BinaryOp op;
  Expr left;
  Expr right;
};

struct TransposeNode
{
  Expr child;
};

struct MatMulNode
{
  Expr left;
  Expr right;
};

using NodeVariant = std::variant<LeafNode, SubviewNode, DiagNode, UnaryNode,
                                 BinaryNode, TransposeNode, MatMulNode>;

struct Node
{
  ElemType type;
  MatShape shape;
  NodeVariant v;
};

inline const Node& Expr::node() const { return *node_; }
inline ElemType Expr::type() const { return node_->type; }
inline MatShape Expr::shape() const { return node_->shape; }

// -- builders ---------------------------------------------------------------

Expr leaf(MatrixId id, ElemType type, MatShape shape);

// View of rows [row_offset, row_offset + view.n_rows) and the matching
// columns of a parent matrix.
Expr subview(MatrixId id, ElemType type, MatShape parent, std::size_t row_offset,
             std::size_t col_offset, MatShape view);

// Diagonal k of a parent matrix as a column vector; k > 0 is above the main
// diagonal, k < 0 below.
Expr diag(MatrixId id, ElemType type, MatShape parent, std::int64_t k);

Expr unary(UnaryOp op, const Expr& child, double scalar = 0.0);
Expr pow_int(const Expr& child, int exponent);
Expr conv(const Expr& child, ElemType to);
Expr binary(BinaryOp op, const Expr& left, const Expr& right);
Expr transpose(const Expr& child);
Expr matmul(const Expr& left, const Expr& right);

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator%(const Expr& a, const Expr& b);  // Schur product
Expr operator/(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);  // matrix product

Expr operator+(const Expr& a, double s);
Expr operator+(double s, const Expr& a);
Expr operator-(const Expr& a, double s);
Expr operator*(double s, const Expr& a);
Expr operator*(const Expr& a, double s);
Expr operator/(double s, const Expr& a);
Expr operator/(const Expr& a, double s);
Expr operator>(const Expr& a, double s);
Expr operator-(const Expr& a);

Expr exp(const Expr& a);
Expr log(const Expr& a);
Expr sqrt(const Expr& a);
Expr tanh(const Expr& a);
Expr pow(const Expr& a, int exponent);

// -- queries ----------------------------------------------------------------

MatShape shape_of(const Expr& e);

bool contains_matmul(const Expr& e);

// Structural key of a tree. Scalar values and matrix identities do not take
// part; leaves are named by their first-visit ordinal instead.
struct ExprSignature
{
  std::string text;
  friend bool operator==(const ExprSignature&, const ExprSignature&) = default;
};

ExprSignature signature_of(const Expr& e);

struct ScalarSlot
{
  std::size_t index;
  double value;
  ElemType type;
};

enum class ViewKind : std::uint8_t { subview, diag };

struct ViewRef
{
  ViewKind kind;
  std::size_t row_offset;
  std::size_t col_offset;
  MatShape shape;
};

// One distinct matrix read by an expression.
struct InputRef
{
  MatrixId id;
  ElemType type;
  MatShape parent;
  bool direct = false;         // read through a plain leaf somewhere
  std::vector<ViewRef> views;  // one per view occurrence, traversal order
};

struct CollectedInputs
{
  std::vector<InputRef> objects;
  std::vector<ScalarSlot> scalars;
};

// Pre-order, left-to-right. Matrices are deduplicated on first visit; every
// scalar-carrying node gets the next slot.
CollectedInputs collect_inputs(const Expr& e);

enum class AliasKind : std::uint8_t { none, safe, unsafe };

// SAFE when every read of `output` inside `e` is through the identity index
// map, i.e. a plain leaf with no Transpose or MatMul above it.
AliasKind aliases(MatrixId output, const Expr& e);

} // namespace kfuse
