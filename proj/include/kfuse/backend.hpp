#pragma once

// Device contract and the host reference implementation.
//
// Everything above this layer talks to a Backend: buffers, kernel
// compilation, launches and matrix products are all expressed through it, and
// every queue operation completes in submission order.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kfuse/expr.hpp"
#include "kfuse/host_matrix.hpp"
#include "kfuse/kernel_gen.hpp"

namespace kfuse {

struct BufferHandle
{
  std::uint64_t id = 0;
  ElemType type = ElemType::f32;
  std::size_t n_elem = 0;
  std::uint32_t backend = 0;

  explicit operator bool() const noexcept { return id != 0; }
  friend bool operator==(const BufferHandle&, const BufferHandle&) = default;
};

struct KernelHandle
{
  std::uint64_t id = 0;
};

struct BackendCaps
{
  std::string name;
  bool compiles_source = false;  // false: kernels are interpreted
  Dialect dialect = Dialect::opencl;
  std::size_t max_work_size = 0;
};

struct KernelArg
{
  enum class Kind : std::uint8_t { buffer, index, scalar };
  Kind kind = Kind::index;
  BufferHandle buffer;
  std::uint64_t index = 0;
  double scalar = 0.0;

  static KernelArg of_buffer(BufferHandle b) { return {Kind::buffer, b, 0, 0.0}; }
  static KernelArg of_index(std::uint64_t i) { return {Kind::index, {}, i, 0.0}; }
  static KernelArg of_scalar(double s) { return {Kind::scalar, {}, 0, s}; }
};

// 2D index space, one work-item per element.
struct LaunchGeometry
{
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
};

class Backend
{
 public:
  virtual ~Backend() = default;

  virtual const BackendCaps& capabilities() const = 0;

  virtual BufferHandle alloc(ElemType type, std::size_t n_elem) = 0;
  virtual void free(BufferHandle h) = 0;
  virtual void upload(BufferHandle h, std::span<const std::byte> data) = 0;
  // Waits for queued work touching the buffer, then copies it out.
  virtual void download(BufferHandle h, std::span<std::byte> out) = 0;

  virtual KernelHandle compile(const KernelSource& source) = 0;
  virtual void launch(KernelHandle kernel, std::span<const KernelArg> args, LaunchGeometry geometry) = 0;

  // dest = left * right, all column-major and dense.
  virtual void matmul(BufferHandle dest, BufferHandle left, BufferHandle right, MatShape left_shape,
                      MatShape right_shape) = 0;

  virtual void synchronize() = 0;
};

void upload(Backend& be, BufferHandle h, const HostMatrix& m);
HostMatrix download(Backend& be, BufferHandle h, MatShape shape);

// Arguments for a fused step in the order of its kernel's argument schema.
using BufferLookup = std::function<BufferHandle(MatrixId)>;
std::vector<KernelArg> launch_args(const FusedKernelStep& step, const BufferLookup& lookup);
LaunchGeometry launch_geometry(const FusedKernelStep& step);

// Validates args against a schema; throws BackendError on mismatch.
void check_schema(const std::vector<ArgSpec>& schema, std::span<const KernelArg> args,
                  const std::string& kernel);

// Instrumentation for the interpreters: every leaf read is counted, and reads
// outside the parent buffer are recorded before the BoundsError is raised.
struct BoundsAudit
{
  std::size_t reads = 0;
  std::size_t violations = 0;
};

struct EvalEnv
{
  std::vector<std::pair<MatrixId, BufferView>> buffers;
  std::vector<double> scalars;  // by slot index
  BoundsAudit* audit = nullptr;

  const BufferView& find(MatrixId id) const;
};

// Element (row, col) of a MatMul-free node, evaluated at the node's element
// type with exactly the index maps of the generated access text.
double ref_eval_elem(const Expr& node, std::size_t row, std::size_t col, const EvalEnv& env);

using HostEnv = std::map<MatrixId, HostMatrix>;

// Runs a plan entirely on host matrices: fused steps element by element via
// ref_eval_elem, products with a triple loop accumulating in f64. Temporaries
// are created in `env` and erased afterwards; a staged output replaces the
// output entry.
void ref_execute(const ExecutionPlan& plan, HostEnv& env, BoundsAudit* audit = nullptr);

// Independent evaluation route: every node of `expr` is materialised into its
// own matrix, bottom-up, using the scalar values stored in the tree.
HostMatrix ref_materialise(const Expr& expr, const HostEnv& env);

struct ReferenceOptions
{
  // Evaluate launches element by element through ref_eval_elem instead of
  // the blocked interpreter.
  bool per_element = false;
  BoundsAudit* audit = nullptr;
};

class ReferenceBackend final : public Backend
{
 public:
  explicit ReferenceBackend(ReferenceOptions options = {});
  ~ReferenceBackend() override;

  const BackendCaps& capabilities() const override { return caps_; }

  BufferHandle alloc(ElemType type, std::size_t n_elem) override;
  void free(BufferHandle h) override;
  void upload(BufferHandle h, std::span<const std::byte> data) override;
  void download(BufferHandle h, std::span<std::byte> out) override;

  KernelHandle compile(const KernelSource& source) override;
  void launch(KernelHandle kernel, std::span<const KernelArg> args, LaunchGeometry geometry) override;
  void matmul(BufferHandle dest, BufferHandle left, BufferHandle right, MatShape left_shape,
              MatShape right_shape) override;
  void synchronize() override {}

  std::size_t live_buffers() const noexcept { return buffers_.size(); }

 private:
  struct Buffer;
  struct Kernel;

  Buffer& get(BufferHandle h);

  BackendCaps caps_;
  ReferenceOptions options_;
  std::uint32_t backend_id_;
  std::uint64_t next_buffer_ = 1;
  std::unordered_map<std::uint64_t, std::unique_ptr<Buffer>> buffers_;
  std::unordered_set<std::uint64_t> freed_;
  std::vector<std::unique_ptr<Kernel>> kernels_;
};

// Allocates temporaries, runs every step on `be`, applies a staged output and
// releases temporaries. `bindings` maps user matrix ids to buffers; a staged
// output rebinds the output id (the previous buffer is freed).
using KernelProvider = std::function<KernelHandle(const FusedKernelStep&)>;

struct ExecStats
{
  std::size_t launches = 0;
  std::size_t matmuls = 0;
};

ExecStats execute_plan(Backend& be, const ExecutionPlan& plan,
                       std::unordered_map<MatrixId, BufferHandle>& bindings,
                       const KernelProvider& kernel_for);

std::uint32_t next_backend_id();

} // namespace kfuse
