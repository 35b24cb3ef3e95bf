#include <doctest.h>

#include <cmath>

#include "kfuse/backend.hpp"
#include "support/text_eval.hpp"
#include "support/tree_gen.hpp"

using namespace kfuse;
using testing::TextEnv;
using testing::TextExpr;

namespace {

std::string access_text(const Expr& e)
{
  FragmentNaming naming(collect_inputs(e));
  return access_fragment(e, "row", "col", naming);
}

EvalEnv eval_env(const Expr& e, const HostEnv& host)
{
  EvalEnv env;
  for (const auto& [id, m] : host) env.buffers.emplace_back(id, m.view());
  for (const ScalarSlot& s : collect_inputs(e).scalars) env.scalars.push_back(s.value);
  return env;
}

bool same(double a, double b, ElemType t)
{
  if (a == b || (std::isnan(a) && std::isnan(b))) return true;
  if (!is_floating(t)) return false;
  // libm and the library may round transcendental results differently
  const double tol = t == ElemType::f64 ? 1e-12 : 1e-5;
  return std::abs(a - b) <= tol * std::abs(b) + tol;
}

} // namespace

TEST_CASE("text evaluator basics")
{
  TextEnv env;
  env.values["s0"] = 3.0f;
  const HostMatrix m = HostMatrix::from<float>({2, 2}, {1, 2, 3, 4});
  env.buffers["in0"] = m.view();
  env.values["in0_n_rows"] = std::uint64_t{2};
  const TextExpr e("(in0[(row) + (col) * in0_n_rows] + s0)");
  CHECK(testing::to_double(e.eval(env, 1, 1)) == 7.0);
  const TextExpr t("((in0[(col) + (row) * in0_n_rows] > s0) ? (float)1 : (float)0)");
  CHECK(testing::to_double(t.eval(env, 1, 0)) == 0.0);
  CHECK(testing::to_double(t.eval(env, 0, 1)) == 0.0);
  CHECK(testing::to_double(t.eval(env, 1, 1)) == 1.0);
  CHECK_THROWS(TextExpr("(in0[row"));
}

TEST_CASE("property: generated access text evaluates like the interpreter")
{
  testing::TreeGenOptions o;
  o.max_depth = 6;
  o.max_dim = 8;
  testing::TreeGen g(2024, o);
  std::size_t checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Expr e = g.tree();
    const std::string text = access_text(e);
    CAPTURE(text);
    const TextExpr parsed(text);
    const TextEnv tenv = testing::text_env_for(e, g.env());
    const EvalEnv renv = eval_env(e, g.env());
    bool all = true;
    for (std::size_t c = 0; c < e.shape().n_cols; ++c)
      for (std::size_t r = 0; r < e.shape().n_rows; ++r) {
        const double want = ref_eval_elem(e, r, c, renv);
        const double got = testing::to_double(parsed.eval(tenv, r, c));
        if (!same(got, want, e.type())) all = false;
        ++checked;
      }
    CHECK(all);
  }
  CHECK(checked > 1000);
}
