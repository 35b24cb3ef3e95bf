#pragma once

// User-facing lazy matrices.
//
//   kfuse::Context ctx;
//   auto X = kfuse::randu(ctx, 1000, 1000, 42);
//   auto Y = kfuse::randu(ctx, 1000, 1000, 43);
//   kfuse::Mat Z(ctx);
//   Z = 2 * (X.t() + Y) + 2 * (X + Y.t());   // one fused kernel
//   Z.print(std::cout);                       // synchronises
//
// Assignment plans the expression, compiles each fused kernel once per
// expression signature and enqueues the launches without waiting. Element
// access, printing, download and accu() synchronise first; they are the slow
// path.

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>

#include "kfuse/backend.hpp"
#include "kfuse/expr.hpp"
#include "kfuse/host_matrix.hpp"
#include "kfuse/kernel_gen.hpp"

namespace kfuse {

class Mat;

struct CacheKey
{
  SkeletonKind skeleton;
  std::string signature;
  friend bool operator<(const CacheKey& a, const CacheKey& b)
  {
    return std::tie(a.skeleton, a.signature) < std::tie(b.skeleton, b.signature);
  }
};

class KernelCache
{
 public:
  struct Entry
  {
    KernelHandle handle;
    KernelSource source;
  };

  // Compiles on the first request for a signature.
  KernelHandle get(Backend& be, const FusedKernelStep& step);

  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }
  std::size_t compiles() const noexcept { return misses_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::vector<KernelSource> sources() const;

 private:
  std::map<CacheKey, Entry> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

// Owns a backend, its in-order queue and the kernel cache. Mats must not
// outlive their context.
class Context
{
 public:
  Context();  // reference backend
  explicit Context(std::unique_ptr<Backend> backend);
  ~Context();

  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  Backend& backend() noexcept { return *backend_; }
  KernelCache& cache() noexcept { return cache_; }
  const KernelCache& cache() const noexcept { return cache_; }

  std::size_t launches() const noexcept { return launches_; }
  std::size_t matmuls() const noexcept { return matmuls_; }
  const ExecutionPlan* last_plan() const noexcept { return last_plan_ ? &*last_plan_ : nullptr; }

  void sync();

  // Runs a plan against buffers bound to this context.
  void run(const ExecutionPlan& plan);

  // Sum of every element of a MatMul-free (after splitting) expression.
  double accu(const Expr& expr);

 private:
  friend class Mat;

  MatrixId register_matrix();
  void release_matrix(MatrixId id);

  std::unique_ptr<Backend> backend_;
  KernelCache cache_;
  std::unordered_map<MatrixId, BufferHandle> bindings_;
  std::size_t launches_ = 0;
  std::size_t matmuls_ = 0;
  std::optional<ExecutionPlan> last_plan_;
};

void sync(Context& ctx);

class Mat
{
 public:
  explicit Mat(Context& ctx, ElemType type = ElemType::f32);
  Mat(Context& ctx, std::size_t n_rows, std::size_t n_cols, ElemType type = ElemType::f32);
  Mat(Context& ctx, const HostMatrix& values);
  ~Mat();

  // Copies go through a copy kernel; moves transfer the buffer.
  Mat(const Mat& other);
  Mat(Mat&& other) noexcept;
  Mat& operator=(const Mat& other);
  Mat& operator=(Mat&& other) noexcept;

  // Evaluates `expr` into this matrix, resizing when the shapes differ.
  Mat& operator=(const Expr& expr);

  operator Expr() const { return as_expr(); }
  Expr as_expr() const;

  Context& context() const noexcept { return *ctx_; }
  MatrixId id() const noexcept { return id_; }
  ElemType type() const noexcept { return type_; }
  MatShape shape() const noexcept { return shape_; }
  std::size_t n_rows() const noexcept { return shape_.n_rows; }
  std::size_t n_cols() const noexcept { return shape_.n_cols; }
  std::size_t n_elem() const noexcept { return shape_.n_elem(); }
  BufferHandle buffer() const;

  Expr t() const;
  Expr diag(std::int64_t k = 0) const;
  // Rows [r0, r1] and columns [c0, c1], inclusive.
  Expr submat(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const;

  // Slow path: synchronises and copies a single element.
  double operator()(std::size_t r, std::size_t c) const { return elem_get(r, c); }
  double elem_get(std::size_t r, std::size_t c) const;
  void elem_set(std::size_t r, std::size_t c, double v);

  void set_values(const HostMatrix& values);
  HostMatrix download() const;

  void print(std::ostream& os) const;
  std::string print() const;

 private:
  void check_index(std::size_t r, std::size_t c) const;

  Context* ctx_;
  MatrixId id_ = 0;
  ElemType type_;
  MatShape shape_;
};

// Expression operators taking (Mat, Mat) operands through Expr conversion.
inline Expr operator+(const Mat& a, const Mat& b) { return a.as_expr() + b.as_expr(); }
inline Expr operator-(const Mat& a, const Mat& b) { return a.as_expr() - b.as_expr(); }
inline Expr operator%(const Mat& a, const Mat& b) { return a.as_expr() % b.as_expr(); }
inline Expr operator/(const Mat& a, const Mat& b) { return a.as_expr() / b.as_expr(); }
inline Expr operator*(const Mat& a, const Mat& b) { return a.as_expr() * b.as_expr(); }
inline Expr operator+(const Mat& a, double s) { return a.as_expr() + s; }
inline Expr operator+(double s, const Mat& a) { return s + a.as_expr(); }
inline Expr operator-(const Mat& a, double s) { return a.as_expr() - s; }
inline Expr operator*(double s, const Mat& a) { return s * a.as_expr(); }
inline Expr operator*(const Mat& a, double s) { return a.as_expr() * s; }
inline Expr operator/(double s, const Mat& a) { return s / a.as_expr(); }
inline Expr operator/(const Mat& a, double s) { return a.as_expr() / s; }
inline Expr operator>(const Mat& a, double s) { return a.as_expr() > s; }
inline Expr operator-(const Mat& a) { return -a.as_expr(); }
inline Expr exp(const Mat& a) { return exp(a.as_expr()); }
inline Expr log(const Mat& a) { return log(a.as_expr()); }
inline Expr sqrt(const Mat& a) { return sqrt(a.as_expr()); }
inline Expr tanh(const Mat& a) { return tanh(a.as_expr()); }
inline Expr pow(const Mat& a, int e) { return pow(a.as_expr(), e); }

Expr conv_to(const Expr& expr, ElemType target);
double accu(const Expr& expr, Context& ctx);
double accu(const Mat& m);

// -- construction -----------------------------------------------------------

Mat zeros(Context& ctx, std::size_t n_rows, std::size_t n_cols, ElemType type = ElemType::f32);
Mat ones(Context& ctx, std::size_t n_rows, std::size_t n_cols, ElemType type = ElemType::f32);
Mat fill(Context& ctx, std::size_t n_rows, std::size_t n_cols, double value,
         ElemType type = ElemType::f32);
Mat eye(Context& ctx, std::size_t n, ElemType type = ElemType::f32);

// Uniform [0, 1) from the counter-based stream below; identical bytes for
// identical (seed, shape, type) on every platform.
Mat randu(Context& ctx, std::size_t n_rows, std::size_t n_cols, std::uint64_t seed,
          ElemType type = ElemType::f32);
// Integers uniform in [lo, hi).
Mat randi(Context& ctx, std::size_t n_rows, std::size_t n_cols, std::int64_t lo, std::int64_t hi,
          std::uint64_t seed, ElemType type = ElemType::u32);

// Counter-based generator: element i of a stream with seed s is
// splitmix64(s + (i + 1) * 0x9E3779B97F4A7C15). f32 takes the top 24 bits,
// f64 the top 53 bits, scaled into [0, 1).
std::uint64_t random_bits(std::uint64_t seed, std::uint64_t index) noexcept;
HostMatrix randu_host(MatShape shape, std::uint64_t seed, ElemType type = ElemType::f32);
HostMatrix randi_host(MatShape shape, std::int64_t lo, std::int64_t hi, std::uint64_t seed,
                      ElemType type = ElemType::u32);

// -- text I/O ---------------------------------------------------------------

// First line `n_rows n_cols elem_type`, then column-major values separated by
// whitespace. Floats are written with enough digits to round-trip exactly.
void write_text(std::ostream& os, const HostMatrix& m);
HostMatrix read_text(std::istream& is);
void save_text(const std::string& path, const HostMatrix& m);
HostMatrix load_text(const std::string& path);

// Rows on separate lines, four decimals, single spaces.
std::string format_matrix(const HostMatrix& m);

} // namespace kfuse
