#include "kfuse/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#ifdef KFUSE_HAVE_HOST_JIT
#include "kfuse/host_jit_backend.hpp"
#endif

namespace kfuse::bench {

namespace {

const std::vector<std::string> k_suite = {
    "add2",    "add4",    "chain", "addsub2", "addsub4", "expr1", "expr2",
    "expr3",   "diagsum", "relu",  "sigmoid", "swish",   "gelu",
};

std::vector<Mat> uniform_inputs(Context& ctx, std::size_t count, MatShape shape, ElemType type,
                                std::uint64_t seed)
{
  std::vector<Mat> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(randu(ctx, shape.n_rows, shape.n_cols, seed + i, type));
  return out;
}

} // namespace

const std::vector<std::string>& suite_names() { return k_suite; }

std::optional<std::size_t> addn_count(const std::string& name)
{
  if (name.size() < 4 || name.compare(0, 3, "add") != 0) return std::nullopt;
  std::size_t k = 0;
  for (std::size_t i = 3; i < name.size(); ++i) {
    if (name[i] < '0' || name[i] > '9') return std::nullopt;
    k = k * 10 + static_cast<std::size_t>(name[i] - '0');
    if (k > 100000) return std::nullopt;
  }
  if (k == 0 || name[3] == '0') return std::nullopt;
  return k;
}

std::string addn_name(std::size_t k) { return "add" + std::to_string(k); }

bool is_known(const std::string& name)
{
  for (const auto& s : k_suite) if (s == name) return true;
  return addn_count(name).has_value();
}

Expr centred_half(const Mat& m)
{
  const std::size_t r0 = m.n_rows() / 4;
  const std::size_t c0 = m.n_cols() / 4;
  const std::size_t nr = m.n_rows() / 2;
  const std::size_t nc = m.n_cols() / 2;
  if (nr == 0 || nc == 0) throw ShapeError("centred_half: matrix " + to_string(m.shape()) + " too small");
  return m.submat(r0, c0, r0 + nr - 1, c0 + nc - 1);
}

BenchCase make_case(const std::string& name, Context& ctx, std::size_t n, ElemType type,
                    std::uint64_t seed, const BenchParams& p)
{
  if (!is_floating(type)) throw TypeError("benchmarks need a floating-point element type");
  if (n == 0) throw ShapeError("benchmark size must be positive");
  BenchCase bc;
  bc.name = name;
  const MatShape sq{n, n};
  auto& in = bc.inputs;

  if (name == "addsub2" || name == "addsub4") {
    const std::size_t k = name == "addsub2" ? 2 : 4;
    in = uniform_inputs(ctx, k, sq, type, seed);
    Expr e = centred_half(in[0]);
    for (std::size_t i = 1; i < k; ++i) e = e + centred_half(in[i]);
    bc.expr = e;
  } else if (name == "chain") {
    if (n < 16) throw ShapeError("chain needs n >= 16");
    const std::size_t d[5] = {n, n / 2, n / 4, n / 8, n / 16};
    for (std::size_t i = 0; i < 4; ++i) in.push_back(randu(ctx, d[i], d[i + 1], seed + i, type));
    bc.expr = in[0] * in[1] * in[2] * in[3];
  } else if (name == "expr1") {
    in = uniform_inputs(ctx, 2, sq, type, seed);
    const Mat& X = in[0];
    const Mat& Y = in[1];
    bc.expr = 2 * (X.t() + Y) + 2 * (X + Y.t());
  } else if (name == "expr2") {
    in = uniform_inputs(ctx, 4, sq, type, seed);
    const Mat& A = in[0];
    const Mat& B = in[1];
    const Mat& C = in[2];
    const Mat& D = in[3];
    bc.expr = p.a * A + (B + C).t() + log(pow(D, 2));
  } else if (name == "expr3") {
    in.push_back(randu(ctx, n, n, seed, type));
    in.push_back(randi(ctx, n, n, 0, 10, seed + 1, ElemType::u32));
    in.push_back(randu(ctx, n, n, seed + 2, type));
    const Mat& X = in[0];
    const Mat& Y = in[1];
    const Mat& W = in[2];
    bc.expr = 1 / (X % conv_to(Y, type) + log(log(X + 2) % W));
  } else if (name == "diagsum") {
    if (n < 2) throw ShapeError("diagsum needs n >= 2");
    in = uniform_inputs(ctx, 2, sq, type, seed);
    const Mat& X = in[0];
    const Mat& Y = in[1];
    bc.expr = (X.diag(-1) + X.diag(1)) % (Y.diag(-1) + Y.diag(1));
  } else if (name == "relu") {
    in = uniform_inputs(ctx, 1, sq, type, seed);
    const Mat& X = in[0];
    bc.expr = X % (X > 0);
  } else if (name == "sigmoid") {
    in = uniform_inputs(ctx, 1, sq, type, seed);
    const Mat& X = in[0];
    bc.expr = 1 / (1 + exp(-X));
  } else if (name == "swish") {
    in = uniform_inputs(ctx, 1, sq, type, seed);
    const Mat& X = in[0];
    const double beta = p.beta;
    bc.expr = X / (1 + exp(-beta * X));
  } else if (name == "gelu") {
    in = uniform_inputs(ctx, 1, sq, type, seed);
    const Mat& X = in[0];
    const double alpha = p.alpha;
    const double pi = p.pi;
    bc.expr = (X / 2) % (1 + tanh(std::sqrt(2 / pi) * (X + alpha * pow(X, 3))));
  } else if (const auto k = addn_count(name)) {
    in = uniform_inputs(ctx, *k, sq, type, seed);
    Expr e = in[0];
    for (std::size_t i = 1; i < *k; ++i) e = e + in[i];
    bc.expr = e;
  } else {
    throw Error("unknown benchmark expression '" + name + "'");
  }
  return bc;
}

std::unique_ptr<Backend> make_backend(const std::string& name)
{
  if (name == "ref") return std::make_unique<ReferenceBackend>();
  if (name == "device") {
#ifdef KFUSE_HAVE_HOST_JIT
    if (!HostJitBackend::available()) throw BackendError("device backend: no C compiler found (set KFUSE_CC)");
    return std::make_unique<HostJitBackend>();
#else
    throw BackendError("device backend: built without KFUSE_WITH_HOST_JIT");
#endif
  }
  throw Error("unknown backend '" + name + "' (expected ref or device)");
}

bool device_available()
{
#ifdef KFUSE_HAVE_HOST_JIT
  return HostJitBackend::available();
#else
  return false;
#endif
}

namespace {

std::uint64_t distinct_reads(const InputRef& in)
{
  if (in.direct) return in.parent.n_elem();
  if (in.views.size() == 1) return in.views[0].shape.n_elem();
  std::vector<bool> seen(in.parent.n_elem(), false);
  std::uint64_t count = 0;
  const auto mark = [&](std::size_t r, std::size_t c) {
    const std::size_t i = r + c * in.parent.n_rows;
    if (!seen[i]) {
      seen[i] = true;
      ++count;
    }
  };
  for (const ViewRef& v : in.views) {
    if (v.kind == ViewKind::diag) {
      for (std::size_t i = 0; i < v.shape.n_rows; ++i) mark(v.row_offset + i, v.col_offset + i);
    } else {
      for (std::size_t c = 0; c < v.shape.n_cols; ++c)
        for (std::size_t r = 0; r < v.shape.n_rows; ++r) mark(v.row_offset + r, v.col_offset + c);
    }
  }
  return count;
}

} // namespace

std::uint64_t bytes_moved(const ExecutionPlan& plan)
{
  std::uint64_t total = 0;
  for (const PlanStep& step : plan.steps) {
    if (const auto* mm = std::get_if<MatMulStep>(&step)) {
      const std::uint64_t w = byte_width(mm->type);
      total += (mm->left_shape.n_elem() + mm->right_shape.n_elem() +
                mm->left_shape.n_rows * mm->right_shape.n_cols) * w;
      continue;
    }
    const auto& fs = std::get<FusedKernelStep>(step);
    for (const InputRef& in : fs.inputs.objects) total += distinct_reads(in) * byte_width(in.type);
    if (fs.skeleton == SkeletonKind::reduce_accu) total += fs.shape.n_cols * byte_width(ElemType::f64);
    else total += fs.shape.n_elem() * byte_width(fs.body.type());
  }
  return total;
}

double max_rel_error(const HostMatrix& got, const HostMatrix& want)
{
  if (got.shape() != want.shape()) {
    throw ShapeError("compare: shapes " + to_string(got.shape()) + " and " + to_string(want.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < got.n_elem(); ++i) {
    const double a = got.at(i);
    const double b = want.at(i);
    if (a == b || (std::isnan(a) && std::isnan(b))) continue;
    const double e = std::abs(a - b) / std::abs(b);
    if (!(e <= worst)) worst = std::isnan(e) ? INFINITY : e;
  }
  return worst;
}

double gate_tolerance(const std::string& name) { return name == "chain" ? 1e-4 : 1e-5; }

GateResult check_case(const std::string& name, Context& ctx, std::size_t n, ElemType type,
                      std::uint64_t seed, const BenchParams& params)
{
  BenchCase bc = make_case(name, ctx, n, type, seed, params);
  Mat Z(ctx, type);
  Z = bc.expr;
  const HostMatrix got = Z.download();
  HostEnv env;
  for (const Mat& m : bc.inputs) env.emplace(m.id(), m.download());
  const HostMatrix want = ref_materialise(bc.expr, env);
  GateResult g;
  g.max_rel_error = max_rel_error(got, want);
  g.tolerance = gate_tolerance(name);
  g.ok = g.max_rel_error <= g.tolerance;
  return g;
}

BenchResult run_bench(const BenchSpec& spec)
{
  Context ctx(make_backend(spec.backend));
  return run_bench(spec, ctx);
}

BenchResult run_bench(const BenchSpec& spec, Context& ctx)
{
  if (spec.trials < 1) throw Error("trials must be at least 1");
  if (!is_known(spec.expr)) throw Error("unknown benchmark expression '" + spec.expr + "'");

  if (spec.gate) {
    Context gate_ctx(make_backend(spec.backend));
    const GateResult g = check_case(spec.expr, gate_ctx, 64, spec.type, spec.seed, spec.params);
    if (!g.ok) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s: correctness gate failed at n=64 (max rel error %.3g > %.1g)",
                    spec.expr.c_str(), g.max_rel_error, g.tolerance);
      throw GateFailure(buf);
    }
  }

  BenchResult r;
  r.expr = spec.expr;
  r.n = spec.n;
  r.type = spec.type;
  r.trials = spec.trials;
  r.warmups = spec.warmups;

  try {
    BenchCase bc = make_case(spec.expr, ctx, spec.n, spec.type, spec.seed, spec.params);
    Mat Z(ctx, spec.type);
    ctx.sync();
    const std::size_t launches0 = ctx.launches();
    const std::size_t compiles0 = ctx.cache().compiles();

    for (std::size_t i = 0; i < spec.warmups; ++i) Z = bc.expr;
    ctx.sync();

    const std::size_t compiles_warm = ctx.cache().compiles();
    const std::size_t launches_warm = ctx.launches();
    const std::size_t matmuls_warm = ctx.matmuls();
    using clock = std::chrono::steady_clock;
    r.samples.reserve(spec.trials);
    for (std::size_t i = 0; i < spec.trials; ++i) {
      ctx.sync();
      const auto t0 = clock::now();
      Z = bc.expr;
      ctx.sync();
      const auto t1 = clock::now();
      r.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }

    r.total_launches = ctx.launches() - launches0;
    r.launches_per_trial = (ctx.launches() - launches_warm) / spec.trials;
    r.matmuls_per_trial = (ctx.matmuls() - matmuls_warm) / spec.trials;
    r.compiles = ctx.cache().compiles() - compiles0;
    r.trial_compiles = ctx.cache().compiles() - compiles_warm;
    r.bytes = bytes_moved(*ctx.last_plan());
  } catch (const GateFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(spec.expr + ": " + e.what());
  }

  double sum = 0.0;
  for (const double s : r.samples) sum += s;
  r.mean_s = sum / static_cast<double>(r.samples.size());
  double sq = 0.0;
  for (const double s : r.samples) sq += (s - r.mean_s) * (s - r.mean_s);
  r.stddev_s = r.samples.size() > 1 ? std::sqrt(sq / static_cast<double>(r.samples.size() - 1)) : 0.0;
  r.gbps = static_cast<double>(r.bytes) / r.mean_s / 1e9;
  return r;
}

std::vector<BenchResult> addn_sweep(const BenchSpec& base, std::size_t k_min, std::size_t k_max)
{
  if (k_min < 1 || k_max < k_min) throw Error("addN sweep: invalid range");
  std::vector<BenchResult> out;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    BenchSpec s = base;
    s.expr = addn_name(k);
    BenchResult r = run_bench(s);
    if (r.launches_per_trial != 1 || r.matmuls_per_trial != 0) {
      throw Error(s.expr + ": expected 1 kernel launch per assignment, got " +
                  std::to_string(r.launches_per_trial));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string csv_header() { return "expr,n,elem_type,trials,warmups,mean_s,stddev_s,bytes,gbps,launches,compiles"; }

std::string csv_row(const BenchResult& r)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%zu,%s,%zu,%zu,%.17g,%.17g,%llu,%.17g,%zu,%zu", r.expr.c_str(), r.n,
                std::string(to_string(r.type)).c_str(), r.trials, r.warmups, r.mean_s, r.stddev_s,
                static_cast<unsigned long long>(r.bytes), r.gbps, r.launches_per_trial, r.compiles);
  return buf;
}

void emit_csv(std::ostream& os, const std::vector<BenchResult>& results)
{
  os << csv_header() << '\n';
  for (const BenchResult& r : results) os << csv_row(r) << '\n';
}

nlohmann::json metadata(const std::vector<BenchResult>& results)
{
  nlohmann::json j;
  j["reference_bandwidth_gbps"] = {{"theoretical_peak", reference_peak_gbps},
                                   {"measured_max", reference_measured_gbps},
                                   {"note", "reference device figures; annotations only"}};
  j["gbps_definition"] = "bytes / mean_s / 1e9";
  j["rows"] = results.size();
  return j;
}

void emit_csv(const std::filesystem::path& path, const std::vector<BenchResult>& results)
{
  {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    emit_csv(out, results);
    if (!out) throw Error("write to " + path.string() + " failed");
  }
  std::ofstream meta(metadata_path(path));
  if (!meta) throw Error("cannot open " + metadata_path(path).string() + " for writing");
  meta << metadata(results).dump(2) << '\n';
}

std::filesystem::path metadata_path(const std::filesystem::path& csv)
{
  return csv.string() + ".meta.json";
}

std::vector<std::filesystem::path> emit_kernels(const Context& ctx, const std::filesystem::path& dir)
{
  const std::vector<KernelSource> sources = ctx.cache().sources();
  return dump_kernels(dir, sources);
}

} // namespace kfuse::bench
