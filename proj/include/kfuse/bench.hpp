#pragma once

// Benchmark suite: the 13 named expressions, the add-N family, the
// warmup/trial protocol and CSV output.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kfuse/matrix.hpp"

namespace kfuse::bench {

struct BenchParams
{
  double a = 2.0;        // expr2
  double beta = 1.0;     // swish
  double alpha = 0.044715;
  double pi = 3.14159265358979;
};

struct BenchSpec
{
  std::string expr = "add2";
  std::size_t n = 2048;
  std::size_t trials = 50;
  std::size_t warmups = 2;
  ElemType type = ElemType::f32;
  std::uint64_t seed = 42;
  std::string backend = "ref";  // ref | device
  BenchParams params;
  bool gate = true;             // oracle check at n = 64 before timing
};

struct BenchResult
{
  std::string expr;
  std::size_t n = 0;
  ElemType type = ElemType::f32;
  std::size_t trials = 0;
  std::size_t warmups = 0;
  double mean_s = 0.0;
  double stddev_s = 0.0;
  std::uint64_t bytes = 0;
  double gbps = 0.0;
  std::size_t launches_per_trial = 0;  // fused kernel launches in one assignment
  std::size_t matmuls_per_trial = 0;
  std::size_t total_launches = 0;      // warmups included
  std::size_t compiles = 0;
  std::size_t trial_compiles = 0;      // compiles during timed trials
  std::vector<double> samples;
};

// The 13 suite names in table order.
const std::vector<std::string>& suite_names();

// Suite names plus add<k> for k >= 1.
bool is_known(const std::string& name);
// k for add<k>, else nothing.
std::optional<std::size_t> addn_count(const std::string& name);
std::string addn_name(std::size_t k);

// Seeded inputs and the expression over them. Inputs draw from seeds
// seed, seed + 1, ... in declaration order.
struct BenchCase
{
  std::string name;
  std::vector<Mat> inputs;
  Expr expr;
};

BenchCase make_case(const std::string& name, Context& ctx, std::size_t n, ElemType type,
                    std::uint64_t seed, const BenchParams& params = {});

// Rows [n/4, n/4 + n/2) and the same columns.
Expr centred_half(const Mat& m);

// Creates "ref" (reference interpreter) or "device" (host JIT) backends.
std::unique_ptr<Backend> make_backend(const std::string& name);
bool device_available();

// Distinct input elements read plus output elements written, in bytes, summed
// over the steps of a plan.
std::uint64_t bytes_moved(const ExecutionPlan& plan);

// max over elements of |a - b| / |b|; equal values (including matching
// infinities and NaNs) contribute 0.
double max_rel_error(const HostMatrix& got, const HostMatrix& want);

// Tolerance used by the correctness gate.
double gate_tolerance(const std::string& name);

struct GateResult
{
  bool ok = false;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
};

// Evaluates the named expression at `n` both through the context and through
// the per-node materialisation oracle.
GateResult check_case(const std::string& name, Context& ctx, std::size_t n, ElemType type,
                      std::uint64_t seed, const BenchParams& params = {});

class GateFailure : public Error
{
 public:
  using Error::Error;
};

// Gate (unless disabled), then warmups and sync-bracketed timed trials on a
// fresh context.
BenchResult run_bench(const BenchSpec& spec);
// Same protocol in an existing context.
BenchResult run_bench(const BenchSpec& spec, Context& ctx);

// One result per k in [k_min, k_max]; throws Error when any assignment needs
// more than one kernel launch.
std::vector<BenchResult> addn_sweep(const BenchSpec& base, std::size_t k_min, std::size_t k_max);

inline constexpr double reference_peak_gbps = 1008.0;
inline constexpr double reference_measured_gbps = 868.0;

std::string csv_header();
std::string csv_row(const BenchResult& r);
// Header plus one row per result, in input order.
void emit_csv(std::ostream& os, const std::vector<BenchResult>& results);
// Writes the CSV and, next to it, <path>.meta.json carrying the reference
// bandwidth annotations.
void emit_csv(const std::filesystem::path& path, const std::vector<BenchResult>& results);
std::filesystem::path metadata_path(const std::filesystem::path& csv);
nlohmann::json metadata(const std::vector<BenchResult>& results);

std::vector<std::filesystem::path> emit_kernels(const Context& ctx, const std::filesystem::path& dir);

} // namespace kfuse::bench
