#include "kfuse/host_jit_backend.hpp"

#include <dlfcn.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kfuse/elem_ops.hpp"

namespace kfuse {

namespace {

using KernelFn = void (*)(void* const*, std::uint64_t, std::uint64_t);

std::string resolve_compiler(const HostJitOptions& o)
{
  if (!o.compiler.empty()) return o.compiler;
  if (const char* env = std::getenv("KFUSE_CC"); env && *env) return env;
  return "cc";
}

std::string read_file(const std::filesystem::path& p)
{
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string excerpt(const std::string& text, std::size_t max_lines)
{
  std::istringstream in(text);
  std::string line;
  std::string out;
  for (std::size_t i = 0; i < max_lines && std::getline(in, line); ++i) out += line + "\n";
  return out;
}

} // namespace

struct HostJitBackend::Buffer
{
  ElemType type;
  std::size_t n_elem;
  std::vector<std::uint64_t> words;

  Buffer(ElemType t, std::size_t n) : type(t), n_elem(n), words((n * byte_width(t) + 7) / 8, 0) {}
  std::byte* data() { return reinterpret_cast<std::byte*>(words.data()); }
  std::size_t size_bytes() const { return n_elem * byte_width(type); }
};

struct HostJitBackend::Kernel
{
  std::string name;
  SkeletonKind skeleton;
  std::vector<ArgSpec> args;
  void* library = nullptr;
  KernelFn fn = nullptr;
};

HostJitBackend::HostJitBackend(HostJitOptions options)
    : options_(std::move(options)), backend_id_(next_backend_id())
{
  caps_.name = "host-jit";
  caps_.compiles_source = true;
  caps_.dialect = Dialect::c;
  caps_.max_work_size = std::numeric_limits<std::size_t>::max();

  static std::atomic<int> counter{0};
  work_dir_ = std::filesystem::temp_directory_path() /
              ("kfuse-jit-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(work_dir_);
  worker_ = std::thread([this] { worker_loop(); });
}

HostJitBackend::~HostJitBackend()
{
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
  for (auto& k : kernels_) {
    if (k->library) ::dlclose(k->library);
  }
  if (!options_.keep_sources) {
    std::error_code ec;
    std::filesystem::remove_all(work_dir_, ec);
  }
}

bool HostJitBackend::available(const HostJitOptions& options)
{
  const std::string cmd = resolve_compiler(options) + " --version >/dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

void HostJitBackend::worker_loop()
{
  for (;;) {
    std::function<void()> task;
    bool failed = false;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
      failed = static_cast<bool>(failure_);
    }
    std::exception_ptr error;
    try {
      // after a failure, tasks are dropped; dropping releases captured buffers
      if (!failed) task();
      else task = nullptr;
    } catch (...) {
      error = std::current_exception();
    }
    {
      std::lock_guard lock(mutex_);
      busy_ = false;
      if (error && !failure_) failure_ = error;
    }
    idle_cv_.notify_all();
  }
}

void HostJitBackend::enqueue(std::function<void()> task)
{
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
}

void HostJitBackend::synchronize()
{
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
  if (failure_) {
    auto f = failure_;
    failure_ = nullptr;
    std::rethrow_exception(f);
  }
}

HostJitBackend::Buffer& HostJitBackend::get(BufferHandle h)
{
  if (h.backend != backend_id_) throw BackendError("buffer belongs to a different backend");
  const auto it = buffers_.find(h.id);
  if (it == buffers_.end()) {
    if (freed_.contains(h.id)) throw BackendError("use of freed buffer " + std::to_string(h.id));
    throw BackendError("invalid buffer handle " + std::to_string(h.id));
  }
  return *it->second;
}

BufferHandle HostJitBackend::alloc(ElemType type, std::size_t n_elem)
{
  const std::uint64_t id = next_buffer_++;
  try {
    buffers_.emplace(id, std::make_unique<Buffer>(type, n_elem));
  } catch (const std::bad_alloc&) {
    throw BackendError("allocation of " + std::to_string(n_elem) + " elements failed");
  }
  return BufferHandle{id, type, n_elem, backend_id_};
}

void HostJitBackend::free(BufferHandle h)
{
  if (h.backend == backend_id_ && freed_.contains(h.id)) {
    throw BackendError("double free of buffer " + std::to_string(h.id));
  }
  get(h);
  auto node = buffers_.extract(h.id);
  freed_.insert(h.id);
  // released once every earlier launch has finished with it
  auto owned = std::make_shared<std::unique_ptr<Buffer>>(std::move(node.mapped()));
  enqueue([owned] { owned->reset(); });
}

void HostJitBackend::upload(BufferHandle h, std::span<const std::byte> data)
{
  Buffer& b = get(h);
  if (data.size() != b.size_bytes()) {
    throw BackendError("upload: " + std::to_string(data.size()) + " bytes for a buffer of " +
                       std::to_string(b.size_bytes()));
  }
  auto staged = std::make_shared<std::vector<std::byte>>(data.begin(), data.end());
  Buffer* dst = &b;
  enqueue([dst, staged] {
    if (!staged->empty()) std::memcpy(dst->data(), staged->data(), staged->size());
  });
}

void HostJitBackend::download(BufferHandle h, std::span<std::byte> out)
{
  Buffer& b = get(h);
  if (out.size() != b.size_bytes()) {
    throw BackendError("download: " + std::to_string(out.size()) + " bytes from a buffer of " +
                       std::to_string(b.size_bytes()));
  }
  synchronize();
  if (!out.empty()) std::memcpy(out.data(), b.data(), out.size());
}

KernelHandle HostJitBackend::compile(const KernelSource& source)
{
  if (source.dialect != Dialect::c) {
    throw BackendError("host-jit backend: kernel '" + source.entry + "' is not in the C dialect");
  }
  const auto base = work_dir_ / source.entry;
  const auto src_path = base.string() + ".c";
  const auto lib_path = base.string() + ".so";
  const auto log_path = base.string() + ".log";
  {
    std::ofstream out(src_path);
    out << source.text;
    if (!out) throw BackendError("host-jit backend: cannot write " + src_path);
  }
  const std::string cmd = resolve_compiler(options_) + " " + options_.flags + " -o '" + lib_path +
                          "' '" + src_path + "' -lm > '" + log_path + "' 2>&1";
  if (std::system(cmd.c_str()) != 0) {
    throw BackendError("compilation of kernel '" + source.entry + "' failed:\n" +
                       excerpt(read_file(log_path), 20) + "--- source excerpt ---\n" +
                       excerpt(source.text, 12));
  }
  auto k = std::make_unique<Kernel>();
  k->name = source.entry;
  k->skeleton = source.skeleton;
  k->args = source.args;
  k->library = ::dlopen(lib_path.c_str(), RTLD_NOW | RTLD_LOCAL);
  if (!k->library) throw BackendError("dlopen of kernel '" + source.entry + "' failed: " + ::dlerror());
  k->fn = reinterpret_cast<KernelFn>(::dlsym(k->library, source.entry.c_str()));
  if (!k->fn) throw BackendError("kernel entry '" + source.entry + "' not found in compiled object");
  kernels_.push_back(std::move(k));
  return KernelHandle{kernels_.size()};
}

void HostJitBackend::launch(KernelHandle kernel, std::span<const KernelArg> args,
                            LaunchGeometry geometry)
{
  if (kernel.id == 0 || kernel.id > kernels_.size()) throw BackendError("invalid kernel handle");
  const Kernel& k = *kernels_[kernel.id - 1];
  check_schema(k.args, args, k.name);

  // Values are stored in 8-byte cells; pointers to buffers are passed as is.
  struct Packed
  {
    std::vector<std::uint64_t> cells;
    std::vector<void*> ptrs;
  };
  auto packed = std::make_shared<Packed>();
  packed->cells.resize(args.size());
  packed->ptrs.resize(args.size());
  for (std::size_t i = 0; i < args.size(); ++i) {
    const KernelArg& a = args[i];
    switch (a.kind) {
      case KernelArg::Kind::buffer:
        packed->ptrs[i] = get(a.buffer).data();
        break;
      case KernelArg::Kind::index:
        packed->cells[i] = a.index;
        packed->ptrs[i] = &packed->cells[i];
        break;
      case KernelArg::Kind::scalar:
        dispatch_elem_type(k.args[i].type, [&](auto tag) {
          using T = decltype(tag);
          const T v = elem::scalar_as<T>(a.scalar);
          std::memcpy(&packed->cells[i], &v, sizeof(T));
        });
        packed->ptrs[i] = &packed->cells[i];
        break;
    }
  }
  const std::uint64_t n_cols = k.skeleton == SkeletonKind::reduce_accu ? geometry.n_rows : geometry.n_cols;
  const KernelFn fn = k.fn;
  enqueue([fn, packed, n_cols] { fn(packed->ptrs.data(), 0, n_cols); });
}

void HostJitBackend::matmul(BufferHandle dest, BufferHandle left, BufferHandle right,
                            MatShape left_shape, MatShape right_shape)
{
  if (left_shape.n_cols != right_shape.n_rows) throw BackendError("matmul: inner dimensions differ");
  Buffer& a = get(left);
  Buffer& b = get(right);
  Buffer& d = get(dest);
  const std::size_t m = left_shape.n_rows;
  const std::size_t kk = left_shape.n_cols;
  const std::size_t n = right_shape.n_cols;
  if (a.type != b.type || a.type != d.type) throw BackendError("matmul: element types differ");
  if (a.n_elem != m * kk || b.n_elem != kk * n || d.n_elem != m * n) {
    throw BackendError("matmul: buffer sizes do not match shapes");
  }
  const ElemType type = a.type;
  enqueue([pa = a.data(), pb = b.data(), pd = d.data(), m, kk, n, type] {
    // accumulates in the element type
    dispatch_elem_type(type, [&](auto tag) {
      using T = decltype(tag);
      const T* x = reinterpret_cast<const T*>(pa);
      const T* y = reinterpret_cast<const T*>(pb);
      T* z = reinterpret_cast<T*>(pd);
      for (std::size_t j = 0; j < n; ++j) {
        T* zc = z + j * m;
        std::fill(zc, zc + m, T{});
        for (std::size_t p = 0; p < kk; ++p) {
          const T bv = y[p + j * kk];
          const T* xc = x + p * m;
          for (std::size_t i = 0; i < m; ++i) zc[i] = elem::add(zc[i], elem::mul(xc[i], bv));
        }
      }
    });
  });
}

} // namespace kfuse
