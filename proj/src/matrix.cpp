#include "kfuse/matrix.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace kfuse {

// -- kernel cache -----------------------------------------------------------

KernelHandle KernelCache::get(Backend& be, const FusedKernelStep& step)
{
  CacheKey key{step.skeleton, step.signature.text};
  if (const auto it = entries_.find(key); it != entries_.end()) {
    ++hits_;
    return it->second.handle;
  }
  KernelSource src = source_for(step, be.capabilities().dialect);
  const KernelHandle h = be.compile(src);
  ++misses_;
  entries_.emplace(std::move(key), Entry{h, std::move(src)});
  return h;
}

std::vector<KernelSource> KernelCache::sources() const
{
  std::vector<KernelSource> out;
  out.reserve(entries_.size());
  for (const auto& [key, e] : entries_) out.push_back(e.source);
  return out;
}

// -- context ----------------------------------------------------------------

Context::Context() : Context(std::make_unique<ReferenceBackend>()) {}

Context::Context(std::unique_ptr<Backend> backend) : backend_(std::move(backend))
{
  if (!backend_) throw Error("Context: null backend");
}

Context::~Context()
{
  try {
    backend_->synchronize();
  } catch (...) {
  }
  for (auto& [id, h] : bindings_) {
    try {
      backend_->free(h);
    } catch (...) {
    }
  }
}

void Context::sync() { backend_->synchronize(); }

void sync(Context& ctx) { ctx.sync(); }

// Ids are unique across contexts, so a matrix used with the wrong context has
// no binding there instead of aliasing an unrelated buffer.
MatrixId Context::register_matrix()
{
  static std::atomic<MatrixId> next{1};
  return next.fetch_add(1, std::memory_order_relaxed);
}

void Context::release_matrix(MatrixId id)
{
  const auto it = bindings_.find(id);
  if (it == bindings_.end()) return;
  const BufferHandle h = it->second;
  bindings_.erase(it);
  backend_->free(h);
}

void Context::run(const ExecutionPlan& plan)
{
  const KernelProvider provider = [this](const FusedKernelStep& s) { return cache_.get(*backend_, s); };
  const ExecStats st = execute_plan(*backend_, plan, bindings_, provider);
  launches_ += st.launches;
  matmuls_ += st.matmuls;
  last_plan_ = plan;
}

double Context::accu(const Expr& expr)
{
  const ExecutionPlan p = reduce_plan(expr);
  run(p);
  const MatrixId pid = *p.partials;
  const BufferHandle h = bindings_.at(pid);
  bindings_.erase(pid);
  HostMatrix partials;
  try {
    partials = kfuse::download(*backend_, h, MatShape{1, h.n_elem});
  } catch (...) {
    backend_->free(h);
    throw;
  }
  backend_->free(h);
  double sum = 0.0;
  for (const double v : partials.data<double>()) sum += v;
  return sum;
}

// -- Mat --------------------------------------------------------------------

Mat::Mat(Context& ctx, ElemType type) : Mat(ctx, 0, 0, type) {}

Mat::Mat(Context& ctx, std::size_t n_rows, std::size_t n_cols, ElemType type)
    : ctx_(&ctx), type_(type), shape_{n_rows, n_cols}
{
  id_ = ctx.register_matrix();
  ctx.bindings_[id_] = ctx.backend().alloc(type, shape_.n_elem());
}

Mat::Mat(Context& ctx, const HostMatrix& values) : Mat(ctx, values.n_rows(), values.n_cols(), values.type())
{
  kfuse::upload(ctx.backend(), buffer(), values);
}

Mat::~Mat()
{
  if (id_ == 0) return;
  try {
    ctx_->release_matrix(id_);
  } catch (...) {
  }
}

Mat::Mat(const Mat& other) : Mat(*other.ctx_, other.type_)
{
  *this = other.as_expr();
}

Mat::Mat(Mat&& other) noexcept
    : ctx_(other.ctx_), id_(other.id_), type_(other.type_), shape_(other.shape_)
{
  other.id_ = 0;
  other.shape_ = {};
}

Mat& Mat::operator=(const Mat& other)
{
  if (this == &other) return *this;
  if (ctx_ != other.ctx_) {
    // crossing contexts goes through the host
    Mat tmp(*ctx_, other.download());
    return *this = std::move(tmp);
  }
  return *this = other.as_expr();
}

Mat& Mat::operator=(Mat&& other) noexcept
{
  if (this == &other) return *this;
  if (id_ != 0) {
    try {
      ctx_->release_matrix(id_);
    } catch (...) {
    }
  }
  ctx_ = other.ctx_;
  id_ = other.id_;
  type_ = other.type_;
  shape_ = other.shape_;
  other.id_ = 0;
  other.shape_ = {};
  return *this;
}

Mat& Mat::operator=(const Expr& expr)
{
  if (id_ == 0) throw Error("assignment to a moved-from matrix");
  const ExecutionPlan p = plan(id_, expr);
  ctx_->run(p);
  shape_ = p.output_shape;
  type_ = p.output_type;
  return *this;
}

Expr Mat::as_expr() const
{
  if (id_ == 0) throw Error("use of a moved-from matrix");
  return leaf(id_, type_, shape_);
}

BufferHandle Mat::buffer() const
{
  const auto it = ctx_->bindings_.find(id_);
  if (it == ctx_->bindings_.end()) throw Error("matrix has no buffer");
  return it->second;
}

Expr Mat::t() const { return transpose(as_expr()); }

Expr Mat::diag(std::int64_t k) const
{
  if (id_ == 0) throw Error("use of a moved-from matrix");
  return kfuse::diag(id_, type_, shape_, k);
}

Expr Mat::submat(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const
{
  if (id_ == 0) throw Error("use of a moved-from matrix");
  if (r1 < r0 || c1 < c0 || r1 >= shape_.n_rows || c1 >= shape_.n_cols) {
    throw BoundsError("submat: rows " + std::to_string(r0) + ".." + std::to_string(r1) + ", cols " +
                      std::to_string(c0) + ".." + std::to_string(c1) + " outside " + to_string(shape_));
  }
  return subview(id_, type_, shape_, r0, c0, MatShape{r1 - r0 + 1, c1 - c0 + 1});
}

void Mat::check_index(std::size_t r, std::size_t c) const
{
  if (r >= shape_.n_rows || c >= shape_.n_cols) {
    throw BoundsError("element (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " +
                      to_string(shape_));
  }
}

double Mat::elem_get(std::size_t r, std::size_t c) const
{
  check_index(r, c);
  return download().at(r, c);
}

void Mat::elem_set(std::size_t r, std::size_t c, double v)
{
  check_index(r, c);
  HostMatrix m = download();
  m.set(r, c, v);
  kfuse::upload(ctx_->backend(), buffer(), m);
}

void Mat::set_values(const HostMatrix& values)
{
  if (values.shape() != shape_ || values.type() != type_) {
    Mat tmp(*ctx_, values);
    *this = std::move(tmp);
    return;
  }
  kfuse::upload(ctx_->backend(), buffer(), values);
}

HostMatrix Mat::download() const
{
  ctx_->sync();
  return kfuse::download(ctx_->backend(), buffer(), shape_);
}

void Mat::print(std::ostream& os) const { os << format_matrix(download()); }

std::string Mat::print() const { return format_matrix(download()); }

// -- free functions ---------------------------------------------------------

Expr conv_to(const Expr& expr, ElemType target) { return conv(expr, target); }

double accu(const Expr& expr, Context& ctx) { return ctx.accu(expr); }

double accu(const Mat& m) { return m.context().accu(m.as_expr()); }

Mat zeros(Context& ctx, std::size_t n_rows, std::size_t n_cols, ElemType type)
{
  return Mat(ctx, HostMatrix(type, {n_rows, n_cols}));
}

Mat ones(Context& ctx, std::size_t n_rows, std::size_t n_cols, ElemType type)
{
  return fill(ctx, n_rows, n_cols, 1.0, type);
}

Mat fill(Context& ctx, std::size_t n_rows, std::size_t n_cols, double value, ElemType type)
{
  HostMatrix m(type, {n_rows, n_cols});
  for (std::size_t i = 0; i < m.n_elem(); ++i) m.set(i, value);
  return Mat(ctx, m);
}

Mat eye(Context& ctx, std::size_t n, ElemType type)
{
  HostMatrix m(type, {n, n});
  for (std::size_t i = 0; i < n; ++i) m.set(i, i, 1.0);
  return Mat(ctx, m);
}

std::uint64_t random_bits(std::uint64_t seed, std::uint64_t index) noexcept
{
  std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

HostMatrix randu_host(MatShape shape, std::uint64_t seed, ElemType type)
{
  HostMatrix m(type, shape);
  const std::size_t n = shape.n_elem();
  if (type == ElemType::f32) {
    auto d = m.data<float>();
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = static_cast<float>(random_bits(seed, i) >> 40) * 0x1p-24f;
    }
  } else if (type == ElemType::f64) {
    auto d = m.data<double>();
    for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<double>(random_bits(seed, i) >> 11) * 0x1p-53;
  } else {
    throw TypeError("randu: floating-point element type required, got " + std::string(to_string(type)));
  }
  return m;
}

HostMatrix randi_host(MatShape shape, std::int64_t lo, std::int64_t hi, std::uint64_t seed, ElemType type)
{
  if (hi <= lo) throw Error("randi: empty range");
  const auto range = static_cast<unsigned __int128>(static_cast<std::uint64_t>(hi - lo));
  HostMatrix m(type, shape);
  for (std::size_t i = 0; i < shape.n_elem(); ++i) {
    const auto off = static_cast<std::uint64_t>((range * random_bits(seed, i)) >> 64);
    m.set(i, static_cast<double>(lo + static_cast<std::int64_t>(off)));
  }
  return m;
}

Mat randu(Context& ctx, std::size_t n_rows, std::size_t n_cols, std::uint64_t seed, ElemType type)
{
  return Mat(ctx, randu_host({n_rows, n_cols}, seed, type));
}

Mat randi(Context& ctx, std::size_t n_rows, std::size_t n_cols, std::int64_t lo, std::int64_t hi,
          std::uint64_t seed, ElemType type)
{
  return Mat(ctx, randi_host({n_rows, n_cols}, lo, hi, seed, type));
}

// -- text I/O ---------------------------------------------------------------

namespace {

std::string format_value(double v, ElemType t)
{
  if (!is_floating(t)) return std::to_string(static_cast<long long>(v));
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  const int digits = t == ElemType::f32 ? std::numeric_limits<float>::max_digits10
                                        : std::numeric_limits<double>::max_digits10;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

} // namespace

void write_text(std::ostream& os, const HostMatrix& m)
{
  os << m.n_rows() << ' ' << m.n_cols() << ' ' << to_string(m.type()) << '\n';
  for (std::size_t c = 0; c < m.n_cols(); ++c) {
    for (std::size_t r = 0; r < m.n_rows(); ++r) {
      if (r) os << ' ';
      os << format_value(m.at(r, c), m.type());
    }
    os << '\n';
  }
}

HostMatrix read_text(std::istream& is)
{
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::string type_name;
  if (!(is >> n_rows >> n_cols >> type_name)) throw Error("read_text: malformed header");
  const ElemType type = parse_elem_type(type_name);
  HostMatrix m(type, {n_rows, n_cols});
  std::string tok;
  for (std::size_t i = 0; i < m.n_elem(); ++i) {
    if (!(is >> tok)) throw Error("read_text: expected " + std::to_string(m.n_elem()) + " values, got " + std::to_string(i));
    char* end = nullptr;
    if (is_floating(type)) {
      const double v = std::strtod(tok.c_str(), &end);
      if (*end != '\0') throw Error("read_text: bad value '" + tok + "'");
      if (type == ElemType::f32) m.data<float>()[i] = static_cast<float>(v);
      else m.data<double>()[i] = v;
    } else {
      const long long v = std::strtoll(tok.c_str(), &end, 10);
      if (*end != '\0') throw Error("read_text: bad value '" + tok + "'");
      const bool ok = type == ElemType::u32 ? (v >= 0 && v <= 0xFFFFFFFFll)
                                            : (v >= INT32_MIN && v <= INT32_MAX);
      if (!ok) throw Error("read_text: value '" + tok + "' out of range for " + type_name);
      m.set(i, static_cast<double>(v));
    }
  }
  return m;
}

void save_text(const std::string& path, const HostMatrix& m)
{
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_text(out, m);
  if (!out) throw Error("write to " + path + " failed");
}

HostMatrix load_text(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_text(in);
}

std::string format_matrix(const HostMatrix& m)
{
  std::string out;
  char buf[64];
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
      std::snprintf(buf, sizeof buf, c ? " %.4f" : "%.4f", m.at(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

} // namespace kfuse
