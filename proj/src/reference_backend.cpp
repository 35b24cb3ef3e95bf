#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#include "kfuse/backend.hpp"
#include "kfuse/elem_ops.hpp"

namespace kfuse {

std::uint32_t next_backend_id()
{
  static std::atomic<std::uint32_t> counter{1};
  return counter++;
}

struct ReferenceBackend::Buffer
{
  ElemType type;
  std::size_t n_elem;
  std::vector<std::uint64_t> words;  // 8-byte aligned storage

  Buffer(ElemType t, std::size_t n)
      : type(t), n_elem(n), words((n * byte_width(t) + 7) / 8, 0)
  {
  }

  std::byte* data() { return reinterpret_cast<std::byte*>(words.data()); }
  std::size_t size_bytes() const { return n_elem * byte_width(type); }
};

namespace {

constexpr std::size_t kBlock = 256;

enum class LoadMode : std::uint8_t { direct, subview, diag };

// One instruction of the blocked interpreter; every node of the body gets a
// register holding kBlock values of its element type.
struct Instr
{
  enum class Kind : std::uint8_t { load, unary, binary } kind;
  ElemType type;
  UnaryOp uop = UnaryOp::neg;
  BinaryOp bop = BinaryOp::plus;
  int exponent = 0;
  std::size_t slot = 0;
  ElemType src_type = ElemType::f32;
  std::size_t a = 0;
  std::size_t b = 0;
  // load
  LoadMode mode = LoadMode::direct;
  std::size_t object = 0;
  std::size_t view = 0;
  bool swapped = false;
};

struct Program
{
  std::vector<Instr> code;  // register i is written by code[i]
};

class ProgramBuilder
{
 public:
  explicit ProgramBuilder(const CollectedInputs& inputs) : naming_(inputs) {}

  Program program;

  std::size_t build(const Expr& e, bool swapped)
  {
    const Node& n = e.node();
    return std::visit(
        [&](const auto& v) -> std::size_t {
          using V = std::decay_t<decltype(v)>;
          Instr in{};
          in.type = n.type;
          if constexpr (std::is_same_v<V, LeafNode>) {
            in.kind = Instr::Kind::load;
            in.mode = LoadMode::direct;
            in.object = naming_.object_of(v.id);
            in.swapped = swapped;
          } else if constexpr (std::is_same_v<V, SubviewNode> || std::is_same_v<V, DiagNode>) {
            in.kind = Instr::Kind::load;
            in.mode = std::is_same_v<V, SubviewNode> ? LoadMode::subview : LoadMode::diag;
            in.object = naming_.object_of(v.id);
            in.view = naming_.next_view(in.object);
            in.swapped = swapped;
          } else if constexpr (std::is_same_v<V, UnaryNode>) {
            in.kind = Instr::Kind::unary;
            in.uop = v.op;
            in.exponent = v.exponent;
            if (has_scalar(v.op)) in.slot = naming_.next_scalar();
            in.src_type = v.child.type();
            in.a = build(v.child, swapped);
          } else if constexpr (std::is_same_v<V, BinaryNode>) {
            in.kind = Instr::Kind::binary;
            in.bop = v.op;
            in.a = build(v.left, swapped);
            in.b = build(v.right, swapped);
          } else if constexpr (std::is_same_v<V, TransposeNode>) {
            return build(v.child, !swapped);
          } else {
            throw PlanError("reference backend: matrix product inside a fused kernel body");
          }
          program.code.push_back(in);
          return program.code.size() - 1;
        },
        n.v);
  }

 private:
  FragmentNaming naming_;
};

struct BoundObject
{
  const std::byte* data;
  std::size_t n_elem;
  std::size_t n_rows;
  std::size_t n_cols;
  std::vector<std::pair<std::size_t, std::size_t>> views;
};

struct Registers
{
  std::vector<std::uint64_t> storage;
  explicit Registers(std::size_t n) : storage(n * kBlock, 0) {}
  template <typename T> T* at(std::size_t reg)
  {
    return reinterpret_cast<T*>(storage.data() + reg * kBlock);
  }
};

template <typename T>
void run_load(const Instr& in, const BoundObject& obj, std::size_t row0, std::size_t len,
              std::size_t col, T* dst)
{
  const T* src = reinterpret_cast<const T*>(obj.data);
  for (std::size_t i = 0; i < len; ++i) {
    std::size_t r = row0 + i;
    std::size_t c = col;
    if (in.swapped) std::swap(r, c);
    std::size_t pr = r;
    std::size_t pc = c;
    if (in.mode == LoadMode::subview) {
      pr += obj.views[in.view].first;
      pc += obj.views[in.view].second;
    } else if (in.mode == LoadMode::diag) {
      pr = r + obj.views[in.view].first;
      pc = r + obj.views[in.view].second;
    }
    const std::size_t idx = pr + pc * obj.n_rows;
    if (pr >= obj.n_rows || pc >= obj.n_cols || idx >= obj.n_elem) {
      throw BoundsError("reference backend: read of (" + std::to_string(pr) + ", " +
                        std::to_string(pc) + ") outside parent");
    }
    dst[i] = src[idx];
  }
}

template <typename T>
void exec_unary(const Instr& in, T* dst, Registers& regs, std::size_t len,
                std::span<const double> scalars)
{
  if (in.uop == UnaryOp::conv) {
    dispatch_elem_type(in.src_type, [&](auto tag) {
      using C = decltype(tag);
      const C* x = regs.at<C>(in.a);
      for (std::size_t i = 0; i < len; ++i) dst[i] = elem::convert<T>(x[i]);
    });
    return;
  }
  const T* x = regs.at<T>(in.a);
  const T s = has_scalar(in.uop) ? elem::scalar_as<T>(scalars[in.slot]) : T{};
  switch (in.uop) {
    case UnaryOp::scalar_add: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::add(x[i], s); return;
    case UnaryOp::scalar_pre_mul: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::mul(s, x[i]); return;
    case UnaryOp::scalar_pre_div: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::div(s, x[i]); return;
    case UnaryOp::scalar_post_div: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::div(x[i], s); return;
    case UnaryOp::neg: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::neg(x[i]); return;
    case UnaryOp::gt_scalar: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::gt(x[i], s); return;
    case UnaryOp::pow_int: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::powi(x[i], in.exponent); return;
    default: break;
  }
  if constexpr (std::is_floating_point_v<T>) {
    switch (in.uop) {
      case UnaryOp::exp: for (std::size_t i = 0; i < len; ++i) dst[i] = std::exp(x[i]); return;
      case UnaryOp::log: for (std::size_t i = 0; i < len; ++i) dst[i] = std::log(x[i]); return;
      case UnaryOp::sqrt: for (std::size_t i = 0; i < len; ++i) dst[i] = std::sqrt(x[i]); return;
      case UnaryOp::tanh: for (std::size_t i = 0; i < len; ++i) dst[i] = std::tanh(x[i]); return;
      default: break;
    }
  }
  throw TypeError("reference backend: operation not defined for element type");
}

template <typename T>
void exec_binary(const Instr& in, T* dst, Registers& regs, std::size_t len)
{
  const T* x = regs.at<T>(in.a);
  const T* y = regs.at<T>(in.b);
  switch (in.bop) {
    case BinaryOp::plus: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::add(x[i], y[i]); return;
    case BinaryOp::minus: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::sub(x[i], y[i]); return;
    case BinaryOp::schur: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::mul(x[i], y[i]); return;
    case BinaryOp::elem_div: for (std::size_t i = 0; i < len; ++i) dst[i] = elem::div(x[i], y[i]); return;
  }
}

void run_block(const Program& prog, std::span<const BoundObject> objects,
               std::span<const double> scalars, Registers& regs, std::size_t row0,
               std::size_t len, std::size_t col)
{
  for (std::size_t r = 0; r < prog.code.size(); ++r) {
    const Instr& in = prog.code[r];
    dispatch_elem_type(in.type, [&](auto tag) {
      using T = decltype(tag);
      T* dst = regs.at<T>(r);
      switch (in.kind) {
        case Instr::Kind::load: run_load<T>(in, objects[in.object], row0, len, col, dst); break;
        case Instr::Kind::unary: exec_unary<T>(in, dst, regs, len, scalars); break;
        case Instr::Kind::binary: exec_binary<T>(in, dst, regs, len); break;
      }
    });
  }
}

} // namespace

struct ReferenceBackend::Kernel
{
  std::string name;
  SkeletonKind skeleton;
  std::vector<ArgSpec> args;
  Expr body;
  CollectedInputs inputs;
  Program program;
};

ReferenceBackend::ReferenceBackend(ReferenceOptions options)
    : options_(options), backend_id_(next_backend_id())
{
  caps_.name = "reference";
  caps_.compiles_source = false;
  caps_.dialect = Dialect::opencl;
  caps_.max_work_size = std::numeric_limits<std::size_t>::max();
}

ReferenceBackend::~ReferenceBackend() = default;

ReferenceBackend::Buffer& ReferenceBackend::get(BufferHandle h)
{
  if (h.backend != backend_id_) throw BackendError("buffer belongs to a different backend");
  const auto it = buffers_.find(h.id);
  if (it == buffers_.end()) {
    if (freed_.contains(h.id)) throw BackendError("use of freed buffer " + std::to_string(h.id));
    throw BackendError("invalid buffer handle " + std::to_string(h.id));
  }
  return *it->second;
}

BufferHandle ReferenceBackend::alloc(ElemType type, std::size_t n_elem)
{
  const std::uint64_t id = next_buffer_++;
  buffers_.emplace(id, std::make_unique<Buffer>(type, n_elem));
  return BufferHandle{id, type, n_elem, backend_id_};
}

void ReferenceBackend::free(BufferHandle h)
{
  if (h.backend == backend_id_ && freed_.contains(h.id)) {
    throw BackendError("double free of buffer " + std::to_string(h.id));
  }
  get(h);
  buffers_.erase(h.id);
  freed_.insert(h.id);
}

void ReferenceBackend::upload(BufferHandle h, std::span<const std::byte> data)
{
  Buffer& b = get(h);
  if (data.size() != b.size_bytes()) {
    throw BackendError("upload: " + std::to_string(data.size()) + " bytes for a buffer of " +
                       std::to_string(b.size_bytes()));
  }
  if (!data.empty()) std::memcpy(b.data(), data.data(), data.size());
}

void ReferenceBackend::download(BufferHandle h, std::span<std::byte> out)
{
  Buffer& b = get(h);
  if (out.size() != b.size_bytes()) {
    throw BackendError("download: " + std::to_string(out.size()) + " bytes from a buffer of " +
                       std::to_string(b.size_bytes()));
  }
  if (!out.empty()) std::memcpy(out.data(), b.data(), out.size());
}

KernelHandle ReferenceBackend::compile(const KernelSource& source)
{
  if (!source.body) throw BackendError("reference backend: kernel '" + source.entry + "' has no interpreter form");
  auto k = std::make_unique<Kernel>();
  k->name = source.entry;
  k->skeleton = source.skeleton;
  k->args = source.args;
  k->body = source.body;
  k->inputs = collect_inputs(source.body);
  ProgramBuilder pb(k->inputs);
  pb.build(source.body, false);
  k->program = std::move(pb.program);
  kernels_.push_back(std::move(k));
  return KernelHandle{kernels_.size()};
}

void ReferenceBackend::launch(KernelHandle kernel, std::span<const KernelArg> args,
                              LaunchGeometry geometry)
{
  if (kernel.id == 0 || kernel.id > kernels_.size()) throw BackendError("invalid kernel handle");
  const Kernel& k = *kernels_[kernel.id - 1];
  check_schema(k.args, args, k.name);

  Buffer& out = get(args[0].buffer);
  const std::size_t n_rows = args[1].index;
  const std::size_t n_cols = args[2].index;
  const bool reduce = k.skeleton == SkeletonKind::reduce_accu;
  if (reduce ? (geometry.n_rows < n_cols) : (geometry.n_rows < n_rows || geometry.n_cols < n_cols)) {
    throw BackendError("launch of '" + k.name + "': geometry smaller than output");
  }
  if (out.n_elem < (reduce ? n_cols : n_rows * n_cols)) {
    throw BackendError("launch of '" + k.name + "': output buffer too small");
  }

  std::vector<BoundObject> objects;
  std::vector<double> scalars;
  EvalEnv env;
  env.audit = options_.audit;
  for (std::size_t i = 3; i < args.size(); ++i) {
    const ArgSpec& spec = k.args[i];
    switch (spec.kind) {
      case ArgKind::in_buffer: {
        Buffer& b = get(args[i].buffer);
        objects.push_back({b.data(), b.n_elem, 0, 0, {}});
        break;
      }
      case ArgKind::in_n_rows: objects.back().n_rows = args[i].index; break;
      case ArgKind::in_n_cols: objects.back().n_cols = args[i].index; break;
      case ArgKind::view_row_offset: objects.back().views.emplace_back(args[i].index, 0); break;
      case ArgKind::view_col_offset: objects.back().views.back().second = args[i].index; break;
      case ArgKind::scalar: scalars.push_back(args[i].scalar); break;
      default: break;
    }
  }

  if (options_.per_element) {
    for (std::size_t o = 0; o < objects.size(); ++o) {
      const BoundObject& b = objects[o];
      env.buffers.emplace_back(k.inputs.objects[o].id,
                               BufferView{b.data, k.inputs.objects[o].type, b.n_elem,
                                          MatShape{b.n_rows, b.n_cols}});
    }
    env.scalars = scalars;
  }

  const ElemType body_type = k.body.type();
  Registers regs(k.program.code.size());
  const std::size_t root = k.program.code.size() - 1;
  for (std::size_t col = 0; col < n_cols; ++col) {
    double acc = 0.0;
    for (std::size_t row0 = 0; row0 < n_rows; row0 += kBlock) {
      const std::size_t len = std::min(kBlock, n_rows - row0);
      if (options_.per_element) {
        for (std::size_t i = 0; i < len; ++i) {
          const double v = ref_eval_elem(k.body, row0 + i, col, env);
          if (reduce) {
            acc += v;
          } else {
            dispatch_elem_type(body_type, [&](auto tag) {
              using T = decltype(tag);
              reinterpret_cast<T*>(out.data())[row0 + i + col * n_rows] = elem::convert<T>(v);
            });
          }
        }
        continue;
      }
      run_block(k.program, objects, scalars, regs, row0, len, col);
      dispatch_elem_type(body_type, [&](auto tag) {
        using T = decltype(tag);
        const T* v = regs.at<T>(root);
        if (reduce) {
          for (std::size_t i = 0; i < len; ++i) acc += static_cast<double>(v[i]);
        } else {
          std::memcpy(reinterpret_cast<T*>(out.data()) + row0 + col * n_rows, v, len * sizeof(T));
        }
      });
    }
    if (reduce) reinterpret_cast<double*>(out.data())[col] = acc;
  }
}

void ReferenceBackend::matmul(BufferHandle dest, BufferHandle left, BufferHandle right,
                              MatShape left_shape, MatShape right_shape)
{
  if (left_shape.n_cols != right_shape.n_rows) throw BackendError("matmul: inner dimensions differ");
  Buffer& a = get(left);
  Buffer& b = get(right);
  Buffer& d = get(dest);
  const std::size_t m = left_shape.n_rows;
  const std::size_t k = left_shape.n_cols;
  const std::size_t n = right_shape.n_cols;
  if (a.type != b.type || a.type != d.type) throw BackendError("matmul: element types differ");
  if (a.n_elem != m * k || b.n_elem != k * n || d.n_elem != m * n) {
    throw BackendError("matmul: buffer sizes do not match shapes");
  }
  dispatch_elem_type(a.type, [&](auto tag) {
    using T = decltype(tag);
    const T* pa = reinterpret_cast<const T*>(a.data());
    const T* pb = reinterpret_cast<const T*>(b.data());
    T* pd = reinterpret_cast<T*>(d.data());
    std::vector<double> acc(m);
    for (std::size_t j = 0; j < n; ++j) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double bv = static_cast<double>(pb[p + j * k]);
        const T* colp = pa + p * m;
        for (std::size_t i = 0; i < m; ++i) acc[i] += static_cast<double>(colp[i]) * bv;
      }
      for (std::size_t i = 0; i < m; ++i) pd[i + j * m] = elem::convert<T>(acc[i]);
    }
  });
}

} // namespace kfuse
