#include "text_eval.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace kfuse::testing {

namespace {

// rank order follows the C conversion hierarchy for these types
enum Rank { r_i32 = 0, r_u32 = 1, r_u64 = 2, r_f32 = 3, r_f64 = 4 };

int rank(const TextValue& v) { return static_cast<int>(v.index()); }

TextValue cast_to(const TextValue& v, int r)
{
  return std::visit(
      [r](auto x) -> TextValue {
        switch (r) {
          case r_i32: return static_cast<std::int32_t>(x);
          case r_u32: return static_cast<std::uint32_t>(x);
          case r_u64: return static_cast<std::uint64_t>(x);
          case r_f32: return static_cast<float>(x);
          default: return static_cast<double>(x);
        }
      },
      v);
}

template <typename F>
TextValue arith(const TextValue& a, const TextValue& b, F f)
{
  const int r = std::max(rank(a), rank(b));
  const TextValue x = cast_to(a, r);
  const TextValue y = cast_to(b, r);
  switch (r) {
    case r_i32: {
      // -fwrapv semantics
      const auto u = f(static_cast<std::uint32_t>(std::get<std::int32_t>(x)),
                       static_cast<std::uint32_t>(std::get<std::int32_t>(y)));
      return static_cast<std::int32_t>(static_cast<std::uint32_t>(u));
    }
    case r_u32: return static_cast<std::uint32_t>(f(std::get<std::uint32_t>(x), std::get<std::uint32_t>(y)));
    case r_u64: return static_cast<std::uint64_t>(f(std::get<std::uint64_t>(x), std::get<std::uint64_t>(y)));
    case r_f32: return static_cast<float>(f(std::get<float>(x), std::get<float>(y)));
    default: return static_cast<double>(f(std::get<double>(x), std::get<double>(y)));
  }
}

bool truthy(const TextValue& v)
{
  return std::visit([](auto x) { return x != 0; }, v);
}

int type_rank(const std::string& name)
{
  if (name == "float") return r_f32;
  if (name == "double") return r_f64;
  if (name == "kf_u32") return r_u32;
  if (name == "kf_i32") return r_i32;
  if (name == "kf_index") return r_u64;
  return -1;
}

// C definitions of the generated helpers
float pow_f32(float x, int e) { float r = x; if (e == 0) return 1.0f; for (int i = 1; i < e; ++i) r = r * x; return r; }
double pow_f64(double x, int e) { double r = x; if (e == 0) return 1.0; for (int i = 1; i < e; ++i) r = r * x; return r; }
std::uint32_t pow_u32(std::uint32_t x, int e) { std::uint32_t r = x; if (e == 0) return 1u; for (int i = 1; i < e; ++i) r = r * x; return r; }
std::int32_t pow_i32(std::int32_t x, int e)
{
  std::uint32_t r = static_cast<std::uint32_t>(x);
  if (e == 0) return 1;
  for (int i = 1; i < e; ++i) r = r * static_cast<std::uint32_t>(x);
  return static_cast<std::int32_t>(r);
}
std::int32_t to_i32(double x)
{
  if (!(x == x)) return 0;
  if (x >= 2147483647.0) return 2147483647;
  if (x <= -2147483648.0) return -2147483647 - 1;
  return static_cast<std::int32_t>(x);
}
std::uint32_t to_u32(double x)
{
  if (!(x > 0.0)) return 0u;
  if (x >= 4294967295.0) return 4294967295u;
  return static_cast<std::uint32_t>(x);
}

} // namespace

double to_double(const TextValue& v)
{
  return std::visit([](auto x) { return static_cast<double>(x); }, v);
}

struct TextExpr::Node
{
  enum class Kind { number, ident, index, call, cast, neg, binop, ternary } kind;
  std::string name;  // identifier, function, operator
  std::int32_t number = 0;
  int cast_rank = 0;
  std::vector<std::unique_ptr<Node>> kids;
};

namespace {

using NodeP = std::unique_ptr<TextExpr::Node>;
using K = TextExpr::Node::Kind;

class Parser
{
 public:
  explicit Parser(const std::string& s) : s_(s) { tokenize(); }

  NodeP parse()
  {
    NodeP n = ternary();
    if (pos_ != toks_.size()) fail("trailing tokens");
    return n;
  }

 private:
  const std::string& s_;
  std::vector<std::string> toks_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& why) const
  {
    throw std::runtime_error("text_eval: " + why + " at token " + std::to_string(pos_) + " in: " + s_);
  }

  void tokenize()
  {
    std::size_t i = 0;
    while (i < s_.size()) {
      const char c = s_[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t j = i;
        while (j < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[j])) || s_[j] == '_')) ++j;
        toks_.push_back(s_.substr(i, j - i));
        i = j;
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        std::size_t j = i;
        while (j < s_.size() && std::isdigit(static_cast<unsigned char>(s_[j]))) ++j;
        toks_.push_back(s_.substr(i, j - i));
        i = j;
      } else if (std::strchr("()[]+-*/?:>,", c)) {
        toks_.emplace_back(1, c);
        ++i;
      } else {
        fail(std::string("unexpected character '") + c + "'");
      }
    }
  }

  const std::string* peek(std::size_t ahead = 0) const
  {
    return pos_ + ahead < toks_.size() ? &toks_[pos_ + ahead] : nullptr;
  }
  bool accept(const char* t)
  {
    if (peek() && *peek() == t) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(const char* t)
  {
    if (!accept(t)) fail(std::string("expected '") + t + "'");
  }

  static NodeP make(K k, std::string name = {})
  {
    auto n = std::make_unique<TextExpr::Node>();
    n->kind = k;
    n->name = std::move(name);
    return n;
  }

  NodeP ternary()
  {
    NodeP c = comparison();
    if (!accept("?")) return c;
    NodeP a = ternary();
    expect(":");
    NodeP b = ternary();
    NodeP n = make(K::ternary);
    n->kids.push_back(std::move(c));
    n->kids.push_back(std::move(a));
    n->kids.push_back(std::move(b));
    return n;
  }

  NodeP comparison()
  {
    NodeP l = additive();
    if (!accept(">")) return l;
    NodeP n = make(K::binop, ">");
    n->kids.push_back(std::move(l));
    n->kids.push_back(additive());
    return n;
  }

  NodeP additive()
  {
    NodeP l = multiplicative();
    while (peek() && (*peek() == "+" || *peek() == "-")) {
      NodeP n = make(K::binop, toks_[pos_++]);
      n->kids.push_back(std::move(l));
      n->kids.push_back(multiplicative());
      l = std::move(n);
    }
    return l;
  }

  NodeP multiplicative()
  {
    NodeP l = unary();
    while (peek() && (*peek() == "*" || *peek() == "/")) {
      NodeP n = make(K::binop, toks_[pos_++]);
      n->kids.push_back(std::move(l));
      n->kids.push_back(unary());
      l = std::move(n);
    }
    return l;
  }

  NodeP unary()
  {
    if (accept("-")) {
      NodeP n = make(K::neg);
      n->kids.push_back(unary());
      return n;
    }
    if (peek() && *peek() == "(" && peek(1) && type_rank(*peek(1)) >= 0 && peek(2) && *peek(2) == ")") {
      NodeP n = make(K::cast);
      n->cast_rank = type_rank(*peek(1));
      pos_ += 3;
      n->kids.push_back(unary());
      return n;
    }
    return postfix();
  }

  NodeP postfix()
  {
    NodeP p = primary();
    while (accept("[")) {
      NodeP n = make(K::index);
      n->kids.push_back(std::move(p));
      n->kids.push_back(ternary());
      expect("]");
      p = std::move(n);
    }
    return p;
  }

  NodeP primary()
  {
    const std::string* t = peek();
    if (!t) fail("unexpected end");
    if (accept("(")) {
      NodeP n = ternary();
      expect(")");
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>((*t)[0]))) {
      NodeP n = make(K::number);
      n->number = static_cast<std::int32_t>(std::stol(*t));
      ++pos_;
      return n;
    }
    if (std::isalpha(static_cast<unsigned char>((*t)[0])) || (*t)[0] == '_') {
      std::string name = *t;
      ++pos_;
      if (accept("(")) {
        NodeP n = make(K::call, name);
        if (!accept(")")) {
          do n->kids.push_back(ternary());
          while (accept(","));
          expect(")");
        }
        return n;
      }
      return make(K::ident, name);
    }
    fail("unexpected token '" + *t + "'");
  }
};

struct Evaluator
{
  const TextEnv& env;
  std::uint64_t row;
  std::uint64_t col;

  TextValue eval(const TextExpr::Node& n) const
  {
    switch (n.kind) {
      case K::number: return n.number;
      case K::ident: {
        if (n.name == "row") return row;
        if (n.name == "col") return col;
        const auto it = env.values.find(n.name);
        if (it == env.values.end()) throw std::runtime_error("text_eval: unbound identifier " + n.name);
        return it->second;
      }
      case K::index: {
        if (n.kids[0]->kind != K::ident) throw std::runtime_error("text_eval: indexing a non-buffer");
        const auto it = env.buffers.find(n.kids[0]->name);
        if (it == env.buffers.end()) throw std::runtime_error("text_eval: unbound buffer " + n.kids[0]->name);
        const TextValue iv = eval(*n.kids[1]);
        if (rank(iv) >= r_f32) throw std::runtime_error("text_eval: floating-point index");
        const std::uint64_t i = std::get<std::uint64_t>(cast_to(iv, r_u64));
        const BufferView& b = it->second;
        if (i >= b.n_elem) throw std::runtime_error("text_eval: index out of range");
        switch (b.type) {
          case ElemType::f32: return static_cast<const float*>(b.data)[i];
          case ElemType::f64: return static_cast<const double*>(b.data)[i];
          case ElemType::u32: return static_cast<const std::uint32_t*>(b.data)[i];
          case ElemType::i32: return static_cast<const std::int32_t*>(b.data)[i];
        }
        throw std::runtime_error("text_eval: bad buffer type");
      }
      case K::cast: return cast_to(eval(*n.kids[0]), n.cast_rank);
      case K::neg: {
        const TextValue v = eval(*n.kids[0]);
        return std::visit(
            [](auto x) -> TextValue {
              using T = decltype(x);
              if constexpr (std::is_same_v<T, std::int32_t>) {
                return static_cast<std::int32_t>(0u - static_cast<std::uint32_t>(x));
              } else if constexpr (std::is_unsigned_v<T>) {
                return static_cast<T>(T{0} - x);
              } else {
                return -x;
              }
            },
            v);
      }
      case K::binop: {
        const TextValue a = eval(*n.kids[0]);
        const TextValue b = eval(*n.kids[1]);
        const char op = n.name[0];
        if (op == '>') {
          const int r = std::max(rank(a), rank(b));
          const double x = to_double(cast_to(a, r));
          const double y = to_double(cast_to(b, r));
          return static_cast<std::int32_t>(x > y ? 1 : 0);
        }
        if (op == '/' && std::max(rank(a), rank(b)) < r_f32) {
          throw std::runtime_error("text_eval: integer division does not occur in generated text");
        }
        switch (op) {
          case '+': return arith(a, b, [](auto x, auto y) { return x + y; });
          case '-': return arith(a, b, [](auto x, auto y) { return x - y; });
          case '*': return arith(a, b, [](auto x, auto y) { return x * y; });
          default: return arith(a, b, [](auto x, auto y) { return x / y; });
        }
      }
      case K::ternary: {
        const TextValue a = eval(*n.kids[1]);
        const TextValue b = eval(*n.kids[2]);
        const int r = std::max(rank(a), rank(b));
        return cast_to(truthy(eval(*n.kids[0])) ? a : b, r);
      }
      case K::call: return call(n);
    }
    throw std::runtime_error("text_eval: bad node");
  }

  TextValue call(const TextExpr::Node& n) const
  {
    const std::string& f = n.name;
    std::vector<TextValue> args;
    for (const auto& k : n.kids) args.push_back(eval(*k));
    const auto arg_int = [&](std::size_t i) { return std::get<std::int32_t>(cast_to(args.at(i), r_i32)); };
    if (f == "exp" || f == "log" || f == "sqrt" || f == "tanh") {
      // tgmath: float stays float, integers go to double
      if (rank(args.at(0)) == r_f32) {
        const float x = std::get<float>(args[0]);
        if (f == "exp") return std::exp(x);
        if (f == "log") return std::log(x);
        if (f == "sqrt") return std::sqrt(x);
        return std::tanh(x);
      }
      const double x = to_double(args[0]);
      if (f == "exp") return std::exp(x);
      if (f == "log") return std::log(x);
      if (f == "sqrt") return std::sqrt(x);
      return std::tanh(x);
    }
    if (f == "kf_pow_f32") return pow_f32(std::get<float>(cast_to(args.at(0), r_f32)), arg_int(1));
    if (f == "kf_pow_f64") return pow_f64(std::get<double>(cast_to(args.at(0), r_f64)), arg_int(1));
    if (f == "kf_pow_u32") return pow_u32(std::get<std::uint32_t>(cast_to(args.at(0), r_u32)), arg_int(1));
    if (f == "kf_pow_i32") return pow_i32(std::get<std::int32_t>(cast_to(args.at(0), r_i32)), arg_int(1));
    if (f == "kf_to_i32") return to_i32(to_double(args.at(0)));
    if (f == "kf_to_u32") return to_u32(to_double(args.at(0)));
    throw std::runtime_error("text_eval: unknown function " + f);
  }
};

} // namespace

TextExpr::TextExpr(const std::string& text) : root_(Parser(text).parse()) {}
TextExpr::~TextExpr() = default;
TextExpr::TextExpr(TextExpr&&) noexcept = default;

TextValue TextExpr::eval(const TextEnv& env, std::uint64_t row, std::uint64_t col) const
{
  return Evaluator{env, row, col}.eval(*root_);
}

TextEnv text_env_for(const Expr& expr, const HostEnv& env)
{
  const CollectedInputs in = collect_inputs(expr);
  TextEnv t;
  for (std::size_t o = 0; o < in.objects.size(); ++o) {
    const InputRef& r = in.objects[o];
    t.buffers[FragmentNaming::buffer_name(o)] = env.at(r.id).view();
    t.values[FragmentNaming::n_rows_name(o)] = static_cast<std::uint64_t>(r.parent.n_rows);
    t.values[FragmentNaming::n_cols_name(o)] = static_cast<std::uint64_t>(r.parent.n_cols);
    for (std::size_t v = 0; v < r.views.size(); ++v) {
      t.values[FragmentNaming::view_row_name(o, v)] = static_cast<std::uint64_t>(r.views[v].row_offset);
      t.values[FragmentNaming::view_col_name(o, v)] = static_cast<std::uint64_t>(r.views[v].col_offset);
    }
  }
  for (const ScalarSlot& s : in.scalars) {
    // the host truncates scalars into the kernel's type
    TextValue v;
    switch (s.type) {
      case ElemType::f32: v = static_cast<float>(s.value); break;
      case ElemType::f64: v = s.value; break;
      case ElemType::u32: v = static_cast<std::uint32_t>(static_cast<std::int64_t>(std::trunc(s.value))); break;
      case ElemType::i32:
        v = static_cast<std::int32_t>(static_cast<std::uint32_t>(static_cast<std::int64_t>(std::trunc(s.value))));
        break;
    }
    t.values[FragmentNaming::scalar_name(s.index)] = v;
  }
  return t;
}

} // namespace kfuse::testing
