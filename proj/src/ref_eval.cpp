#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "kfuse/backend.hpp"
#include "kfuse/elem_ops.hpp"

namespace kfuse {

const BufferView& EvalEnv::find(MatrixId id) const
{
  for (const auto& [key, view] : buffers) {
    if (key == id) return view;
  }
  throw Error("evaluation: no buffer bound for matrix " + std::to_string(id));
}

namespace {

struct EvalCursor
{
  const EvalEnv& env;
  std::size_t slot = 0;
};

template <typename T>
T load(const BufferView& b, std::size_t pr, std::size_t pc, BoundsAudit* audit)
{
  if (audit) ++audit->reads;
  const std::size_t idx = pr + pc * b.shape.n_rows;
  if (pr >= b.shape.n_rows || pc >= b.shape.n_cols || idx >= b.n_elem) {
    if (audit) ++audit->violations;
    throw BoundsError("read of (" + std::to_string(pr) + ", " + std::to_string(pc) +
                      ") outside parent " + to_string(b.shape));
  }
  if (b.type != elem_type_v<T>) throw TypeError("evaluation: buffer element type mismatch");
  return static_cast<const T*>(b.data)[idx];
}

template <typename T>
T eval(const Expr& e, std::size_t r, std::size_t c, EvalCursor& cur);

template <typename T>
T eval_unary(const Node& n, const UnaryNode& u, std::size_t r, std::size_t c, EvalCursor& cur)
{
  T s{};
  if (has_scalar(u.op)) {
    const std::size_t slot = cur.slot++;
    if (slot >= cur.env.scalars.size()) {
      throw Error("evaluation: scalar slot " + std::to_string(slot) + " not bound");
    }
    s = elem::scalar_as<T>(cur.env.scalars[slot]);
  }
  if (u.op == UnaryOp::conv) {
    return dispatch_elem_type(u.child.type(), [&](auto tag) -> T {
      using C = decltype(tag);
      return elem::convert<T>(eval<C>(u.child, r, c, cur));
    });
  }
  const T x = eval<T>(u.child, r, c, cur);
  switch (u.op) {
    case UnaryOp::scalar_add: return elem::add(x, s);
    case UnaryOp::scalar_pre_mul: return elem::mul(s, x);
    case UnaryOp::scalar_pre_div: return elem::div(s, x);
    case UnaryOp::scalar_post_div: return elem::div(x, s);
    case UnaryOp::neg: return elem::neg(x);
    case UnaryOp::pow_int: return elem::powi(x, u.exponent);
    case UnaryOp::gt_scalar: return elem::gt(x, s);
    default: break;
  }
  if constexpr (std::is_floating_point_v<T>) {
    switch (u.op) {
      case UnaryOp::exp: return std::exp(x);
      case UnaryOp::log: return std::log(x);
      case UnaryOp::sqrt: return std::sqrt(x);
      case UnaryOp::tanh: return std::tanh(x);
      default: break;
    }
  }
  (void) n;
  throw TypeError("evaluation: operation not defined for element type");
}

template <typename T>
T eval(const Expr& e, std::size_t r, std::size_t c, EvalCursor& cur)
{
  const Node& n = e.node();
  return std::visit(
      [&](const auto& v) -> T {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, LeafNode>) {
          return load<T>(cur.env.find(v.id), r, c, cur.env.audit);
        } else if constexpr (std::is_same_v<V, SubviewNode>) {
          return load<T>(cur.env.find(v.id), r + v.row_offset, c + v.col_offset, cur.env.audit);
        } else if constexpr (std::is_same_v<V, DiagNode>) {
          return load<T>(cur.env.find(v.id), r + v.row_offset(), r + v.col_offset(), cur.env.audit);
        } else if constexpr (std::is_same_v<V, UnaryNode>) {
          return eval_unary<T>(n, v, r, c, cur);
        } else if constexpr (std::is_same_v<V, BinaryNode>) {
          const T a = eval<T>(v.left, r, c, cur);
          const T b = eval<T>(v.right, r, c, cur);
          switch (v.op) {
            case BinaryOp::plus: return elem::add(a, b);
            case BinaryOp::minus: return elem::sub(a, b);
            case BinaryOp::schur: return elem::mul(a, b);
            case BinaryOp::elem_div: return elem::div(a, b);
          }
          return T{};
        } else if constexpr (std::is_same_v<V, TransposeNode>) {
          return eval<T>(v.child, c, r, cur);
        } else {
          throw PlanError("ref_eval_elem: matrix product inside an element-wise body");
        }
      },
      n.v);
}

} // namespace

double ref_eval_elem(const Expr& node, std::size_t row, std::size_t col, const EvalEnv& env)
{
  const MatShape s = node.shape();
  if (row >= s.n_rows || col >= s.n_cols) {
    throw BoundsError("ref_eval_elem: (" + std::to_string(row) + ", " + std::to_string(col) +
                      ") outside " + to_string(s));
  }
  EvalCursor cur{env};
  return dispatch_elem_type(node.type(), [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(eval<T>(node, row, col, cur));
  });
}

namespace {

HostMatrix& fetch(HostEnv& env, MatrixId id)
{
  const auto it = env.find(id);
  if (it == env.end()) throw Error("ref_execute: matrix " + std::to_string(id) + " not in environment");
  return it->second;
}

HostMatrix& ensure(HostEnv& env, MatrixId id, ElemType type, MatShape shape)
{
  auto it = env.find(id);
  if (it == env.end() || it->second.type() != type || it->second.shape() != shape) {
    it = env.insert_or_assign(id, HostMatrix(type, shape)).first;
  }
  return it->second;
}

void naive_matmul(const HostMatrix& a, const HostMatrix& b, HostMatrix& out)
{
  const std::size_t m = a.n_rows();
  const std::size_t k = a.n_cols();
  const std::size_t n = b.n_cols();
  std::vector<double> acc(m);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double bv = b.at(p, j);
      for (std::size_t i = 0; i < m; ++i) acc[i] += a.at(i, p) * bv;
    }
    for (std::size_t i = 0; i < m; ++i) out.set(i, j, acc[i]);
  }
}

} // namespace

void ref_execute(const ExecutionPlan& plan, HostEnv& env, BoundsAudit* audit)
{
  for (const TempBuffer& t : plan.temporaries) {
    env.insert_or_assign(t.id, HostMatrix(t.type, t.shape));
  }
  for (const PlanStep& step : plan.steps) {
    if (const auto* mm = std::get_if<MatMulStep>(&step)) {
      const HostMatrix a = fetch(env, mm->left);
      const HostMatrix b = fetch(env, mm->right);
      HostMatrix& out = ensure(env, mm->dest, mm->type,
                               MatShape{mm->left_shape.n_rows, mm->right_shape.n_cols});
      naive_matmul(a, b, out);
      continue;
    }
    const auto& fs = std::get<FusedKernelStep>(step);
    EvalEnv ee;
    ee.audit = audit;
    for (const InputRef& in : fs.inputs.objects) ee.buffers.emplace_back(in.id, fetch(env, in.id).view());
    for (const ScalarSlot& s : fs.inputs.scalars) ee.scalars.push_back(s.value);
    const MatShape s = fs.shape;
    if (fs.skeleton == SkeletonKind::reduce_accu) {
      HostMatrix& out = fetch(env, fs.output);
      for (std::size_t c = 0; c < s.n_cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < s.n_rows; ++r) acc += ref_eval_elem(fs.body, r, c, ee);
        out.set(c, acc);
      }
      continue;
    }
    // In-place writes are only planned for identity-map aliases, where
    // element (r, c) is read before it is overwritten.
    const bool in_place = env.contains(fs.output) && env.at(fs.output).shape() == s &&
                          env.at(fs.output).type() == fs.body.type();
    HostMatrix& out = in_place ? env.at(fs.output) : ensure(env, fs.output, fs.body.type(), s);
    if (!in_place) {
      // `ensure` may have replaced a bound input view; rebind.
      for (auto& [id, view] : ee.buffers) view = fetch(env, id).view();
    }
    for (std::size_t c = 0; c < s.n_cols; ++c) {
      for (std::size_t r = 0; r < s.n_rows; ++r) out.set(r, c, ref_eval_elem(fs.body, r, c, ee));
    }
  }
  if (plan.staged_output) {
    HostMatrix staged = std::move(fetch(env, *plan.staged_output));
    env.insert_or_assign(plan.output, std::move(staged));
  }
  for (const TempBuffer& t : plan.temporaries) {
    if (plan.partials && t.id == *plan.partials) continue;
    env.erase(t.id);
  }
}

// -- per-node materialisation --------------------------------------------

namespace {

template <typename T, typename F>
HostMatrix map_same(const HostMatrix& in, F f)
{
  const auto src = in.data<T>();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = f(src[i]);
  return HostMatrix::from(in.shape(), std::move(out));
}

HostMatrix materialise(const Expr& e, const HostEnv& env);

HostMatrix materialise_unary(const Node& n, const UnaryNode& u, const HostEnv& env)
{
  const HostMatrix in = materialise(u.child, env);
  if (u.op == UnaryOp::conv) {
    return dispatch_elem_type(n.type, [&](auto to_tag) {
      using To = decltype(to_tag);
      return dispatch_elem_type(in.type(), [&](auto from_tag) {
        using From = decltype(from_tag);
        const auto src = in.data<From>();
        std::vector<To> out(src.size());
        std::transform(src.begin(), src.end(), out.begin(),
                       [](From x) { return elem::convert<To>(x); });
        return HostMatrix::from(in.shape(), std::move(out));
      });
    });
  }
  return dispatch_elem_type(n.type, [&](auto tag) -> HostMatrix {
    using T = decltype(tag);
    const T s = elem::scalar_as<T>(u.scalar);
    switch (u.op) {
      case UnaryOp::scalar_add: return map_same<T>(in, [s](T x) { return elem::add(x, s); });
      case UnaryOp::scalar_pre_mul: return map_same<T>(in, [s](T x) { return elem::mul(s, x); });
      case UnaryOp::scalar_pre_div: return map_same<T>(in, [s](T x) { return elem::div(s, x); });
      case UnaryOp::scalar_post_div: return map_same<T>(in, [s](T x) { return elem::div(x, s); });
      case UnaryOp::neg: return map_same<T>(in, [](T x) { return elem::neg(x); });
      case UnaryOp::gt_scalar: return map_same<T>(in, [s](T x) { return elem::gt(x, s); });
      case UnaryOp::pow_int: {
        const int e = u.exponent;
        return map_same<T>(in, [e](T x) { return elem::powi(x, e); });
      }
      default: break;
    }
    if constexpr (std::is_floating_point_v<T>) {
      switch (u.op) {
        case UnaryOp::exp: return map_same<T>(in, [](T x) { return std::exp(x); });
        case UnaryOp::log: return map_same<T>(in, [](T x) { return std::log(x); });
        case UnaryOp::sqrt: return map_same<T>(in, [](T x) { return std::sqrt(x); });
        case UnaryOp::tanh: return map_same<T>(in, [](T x) { return std::tanh(x); });
        default: break;
      }
    }
    throw TypeError("materialise: operation not defined for element type");
  });
}

template <typename T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

HostMatrix materialise(const Expr& e, const HostEnv& env)
{
  const Node& n = e.node();
  const auto source = [&](MatrixId id) -> const HostMatrix& {
    const auto it = env.find(id);
    if (it == env.end()) throw Error("materialise: matrix " + std::to_string(id) + " not in environment");
    if (it->second.type() != n.type) throw TypeError("materialise: element type mismatch");
    return it->second;
  };
  return std::visit(
      [&](const auto& v) -> HostMatrix {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, LeafNode>) {
          const HostMatrix& m = source(v.id);
          if (m.shape() != n.shape) throw ShapeError("materialise: leaf shape does not match buffer");
          return m;
        } else if constexpr (std::is_same_v<V, SubviewNode>) {
          const HostMatrix& m = source(v.id);
          HostMatrix out(n.type, n.shape);
          for (std::size_t c = 0; c < n.shape.n_cols; ++c) {
            for (std::size_t r = 0; r < n.shape.n_rows; ++r) {
              out.set(r, c, m.at(r + v.row_offset, c + v.col_offset));
            }
          }
          return out;
        } else if constexpr (std::is_same_v<V, DiagNode>) {
          const HostMatrix& m = source(v.id);
          HostMatrix out(n.type, n.shape);
          for (std::size_t i = 0; i < n.shape.n_rows; ++i) {
            out.set(i, m.at(i + v.row_offset(), i + v.col_offset()));
          }
          return out;
        } else if constexpr (std::is_same_v<V, UnaryNode>) {
          return materialise_unary(n, v, env);
        } else if constexpr (std::is_same_v<V, BinaryNode>) {
          const HostMatrix a = materialise(v.left, env);
          const HostMatrix b = materialise(v.right, env);
          return dispatch_elem_type(n.type, [&](auto tag) {
            using T = decltype(tag);
            const auto x = a.data<T>();
            const auto y = b.data<T>();
            std::vector<T> out(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) {
              switch (v.op) {
                case BinaryOp::plus: out[i] = elem::add(x[i], y[i]); break;
                case BinaryOp::minus: out[i] = elem::sub(x[i], y[i]); break;
                case BinaryOp::schur: out[i] = elem::mul(x[i], y[i]); break;
                case BinaryOp::elem_div: out[i] = elem::div(x[i], y[i]); break;
              }
            }
            return HostMatrix::from(n.shape, std::move(out));
          });
        } else if constexpr (std::is_same_v<V, TransposeNode>) {
          const HostMatrix a = materialise(v.child, env);
          HostMatrix out(n.type, n.shape);
          for (std::size_t c = 0; c < a.n_cols(); ++c) {
            for (std::size_t r = 0; r < a.n_rows(); ++r) out.set(c, r, a.at(r, c));
          }
          return out;
        } else {
          const HostMatrix a = materialise(v.left, env);
          const HostMatrix b = materialise(v.right, env);
          return dispatch_elem_type(n.type, [&](auto tag) -> HostMatrix {
            using T = decltype(tag);
            if constexpr (std::is_floating_point_v<T>) {
              const Eigen::Map<const EigenMat<T>> ea(a.data<T>().data(),
                                                     static_cast<Eigen::Index>(a.n_rows()),
                                                     static_cast<Eigen::Index>(a.n_cols()));
              const Eigen::Map<const EigenMat<T>> eb(b.data<T>().data(),
                                                     static_cast<Eigen::Index>(b.n_rows()),
                                                     static_cast<Eigen::Index>(b.n_cols()));
              const EigenMat<double> prod = ea.template cast<double>() * eb.template cast<double>();
              const EigenMat<T> result = prod.template cast<T>();
              return HostMatrix::from(
                  n.shape, std::vector<T>(result.data(), result.data() + result.size()));
            } else {
              throw TypeError("materialise: matrix product requires floating point");
            }
          });
        }
      },
      n.v);
}

} // namespace

HostMatrix ref_materialise(const Expr& expr, const HostEnv& env)
{
  return materialise(expr, env);
}

} // namespace kfuse
