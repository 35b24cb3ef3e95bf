#include <unordered_map>

#include "kfuse/backend.hpp"

namespace kfuse {

void upload(Backend& be, BufferHandle h, const HostMatrix& m)
{
  if (h.type != m.type()) throw BackendError("upload: element type mismatch");
  be.upload(h, m.bytes());
}

HostMatrix download(Backend& be, BufferHandle h, MatShape shape)
{
  if (shape.n_elem() != h.n_elem) throw BackendError("download: shape does not match buffer size");
  HostMatrix m(h.type, shape);
  be.download(h, m.bytes());
  return m;
}

std::vector<KernelArg> launch_args(const FusedKernelStep& step, const BufferLookup& lookup)
{
  std::vector<KernelArg> args;
  args.push_back(KernelArg::of_buffer(lookup(step.output)));
  args.push_back(KernelArg::of_index(step.shape.n_rows));
  args.push_back(KernelArg::of_index(step.shape.n_cols));
  for (const InputRef& in : step.inputs.objects) {
    args.push_back(KernelArg::of_buffer(lookup(in.id)));
    args.push_back(KernelArg::of_index(in.parent.n_rows));
    args.push_back(KernelArg::of_index(in.parent.n_cols));
    for (const ViewRef& v : in.views) {
      args.push_back(KernelArg::of_index(v.row_offset));
      args.push_back(KernelArg::of_index(v.col_offset));
    }
  }
  for (const ScalarSlot& s : step.inputs.scalars) args.push_back(KernelArg::of_scalar(s.value));
  return args;
}

LaunchGeometry launch_geometry(const FusedKernelStep& step)
{
  if (step.skeleton == SkeletonKind::reduce_accu) return {step.shape.n_cols, 1};
  return {step.shape.n_rows, step.shape.n_cols};
}

void check_schema(const std::vector<ArgSpec>& schema, std::span<const KernelArg> args,
                  const std::string& kernel)
{
  if (schema.size() != args.size()) {
    throw BackendError("launch of '" + kernel + "': expected " + std::to_string(schema.size()) +
                       " arguments, got " + std::to_string(args.size()));
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const ArgSpec& s = schema[i];
    KernelArg::Kind want = KernelArg::Kind::index;
    if (s.kind == ArgKind::out_buffer || s.kind == ArgKind::in_buffer) want = KernelArg::Kind::buffer;
    if (s.kind == ArgKind::scalar) want = KernelArg::Kind::scalar;
    if (args[i].kind != want) {
      throw BackendError("launch of '" + kernel + "': argument " + std::to_string(i) + " (" +
                         s.name + ") has the wrong kind");
    }
    if (want == KernelArg::Kind::buffer && args[i].buffer.type != s.type) {
      throw BackendError("launch of '" + kernel + "': argument " + s.name + " expects " +
                         std::string(to_string(s.type)) + " data");
    }
  }
}

ExecStats execute_plan(Backend& be, const ExecutionPlan& plan,
                       std::unordered_map<MatrixId, BufferHandle>& bindings,
                       const KernelProvider& kernel_for)
{
  ExecStats stats;
  std::unordered_map<MatrixId, BufferHandle> temps;
  const auto release_temps = [&] {
    for (auto& [id, h] : temps) be.free(h);
    temps.clear();
  };

  try {
    for (const TempBuffer& t : plan.temporaries) temps.emplace(t.id, be.alloc(t.type, t.n_elem));

    if (!plan.staged_output && !plan.partials) {
      auto it = bindings.find(plan.output);
      const std::size_t want = plan.output_shape.n_elem();
      if (it == bindings.end() || it->second.n_elem != want || it->second.type != plan.output_type) {
        if (it != bindings.end()) be.free(it->second);
        bindings[plan.output] = be.alloc(plan.output_type, want);
      }
    }

    const BufferLookup lookup = [&](MatrixId id) -> BufferHandle {
      if (const auto t = temps.find(id); t != temps.end()) return t->second;
      if (const auto b = bindings.find(id); b != bindings.end()) return b->second;
      throw Error("execute: no buffer bound for matrix " + std::to_string(id));
    };

    for (const PlanStep& step : plan.steps) {
      if (const auto* mm = std::get_if<MatMulStep>(&step)) {
        be.matmul(lookup(mm->dest), lookup(mm->left), lookup(mm->right), mm->left_shape,
                  mm->right_shape);
        ++stats.matmuls;
      } else {
        const auto& fs = std::get<FusedKernelStep>(step);
        const KernelHandle k = kernel_for(fs);
        const std::vector<KernelArg> args = launch_args(fs, lookup);
        be.launch(k, args, launch_geometry(fs));
        ++stats.launches;
      }
    }
  } catch (...) {
    release_temps();
    throw;
  }

  if (plan.staged_output) {
    const BufferHandle staged = temps.at(*plan.staged_output);
    temps.erase(*plan.staged_output);
    if (const auto it = bindings.find(plan.output); it != bindings.end()) be.free(it->second);
    bindings[plan.output] = staged;
  }
  if (plan.partials) {
    bindings[*plan.partials] = temps.at(*plan.partials);
    temps.erase(*plan.partials);
  }
  release_temps();
  return stats;
}

} // namespace kfuse
