#pragma once

// Device backend that compiles the generated C-dialect kernels with the system
// C compiler, loads them with dlopen, and runs them on a worker thread that
// drains an in-order queue. Launches return immediately; synchronize(),
// download() and free() observe submission order.

#include <condition_variable>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>

#include "kfuse/backend.hpp"

namespace kfuse {

struct HostJitOptions
{
  std::string compiler;  // empty: $KFUSE_CC, else "cc"
  std::string flags = "-O2 -std=c99 -fwrapv -ffp-contract=off -shared -fPIC";
  bool keep_sources = false;
};

class HostJitBackend final : public Backend
{
 public:
  explicit HostJitBackend(HostJitOptions options = {});
  ~HostJitBackend() override;

  HostJitBackend(const HostJitBackend&) = delete;
  HostJitBackend& operator=(const HostJitBackend&) = delete;

  // True when the configured C compiler can be invoked.
  static bool available(const HostJitOptions& options = {});

  const BackendCaps& capabilities() const override { return caps_; }

  BufferHandle alloc(ElemType type, std::size_t n_elem) override;
  void free(BufferHandle h) override;
  void upload(BufferHandle h, std::span<const std::byte> data) override;
  void download(BufferHandle h, std::span<std::byte> out) override;

  KernelHandle compile(const KernelSource& source) override;
  void launch(KernelHandle kernel, std::span<const KernelArg> args, LaunchGeometry geometry) override;
  void matmul(BufferHandle dest, BufferHandle left, BufferHandle right, MatShape left_shape,
              MatShape right_shape) override;
  void synchronize() override;

  const std::filesystem::path& work_dir() const noexcept { return work_dir_; }

 private:
  struct Buffer;
  struct Kernel;

  Buffer& get(BufferHandle h);
  void enqueue(std::function<void()> task);
  void worker_loop();

  HostJitOptions options_;
  BackendCaps caps_;
  std::uint32_t backend_id_;
  std::filesystem::path work_dir_;
  std::uint64_t next_buffer_ = 1;
  std::unordered_map<std::uint64_t, std::unique_ptr<Buffer>> buffers_;
  std::unordered_set<std::uint64_t> freed_;
  std::vector<std::unique_ptr<Kernel>> kernels_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<std::function<void()>> queue_;
  bool busy_ = false;
  bool stop_ = false;
  std::exception_ptr failure_;
  std::thread worker_;
};

} // namespace kfuse
