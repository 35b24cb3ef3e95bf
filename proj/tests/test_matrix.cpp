#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "kfuse/matrix.hpp"

using namespace kfuse;

#ifdef KFUSE_HAVE_HOST_JIT
#include "kfuse/host_jit_backend.hpp"
#endif

namespace {

HostMatrix snapshot(const Mat& m) { return m.download(); }

} // namespace

TEST_CASE("constructors")
{
  Context ctx;
  const Mat z = zeros(ctx, 2, 2);
  CHECK(z.shape() == MatShape{2, 2});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(z(r, c) == 0.0);

  const Mat f = fill(ctx, 1, 3, 7);
  CHECK(f(0, 0) == 7.0);
  CHECK(f(0, 1) == 7.0);
  CHECK(f(0, 2) == 7.0);

  const Mat a = randu(ctx, 4, 4, 42);
  const Mat b = randu(ctx, 4, 4, 42);
  CHECK(bit_equal(a.download(), b.download()));
  const Mat c = randu(ctx, 4, 4, 43);
  CHECK_FALSE(bit_equal(a.download(), c.download()));

  const HostMatrix h = a.download();
  for (std::size_t i = 0; i < h.n_elem(); ++i) {
    CHECK(h.at(i) >= 0.0);
    CHECK(h.at(i) < 1.0);
  }
  const Mat e = eye(ctx, 3);
  CHECK(e(1, 1) == 1.0);
  CHECK(e(0, 1) == 0.0);
  const Mat empty = zeros(ctx, 0, 5);
  CHECK(empty.n_elem() == 0);
  CHECK_THROWS_AS(randu(ctx, 2, 2, 1, ElemType::u32), TypeError);
}

TEST_CASE("the random stream is the documented one")
{
  // splitmix64 finaliser over seed + (i + 1) * golden gamma, checked against
  // the published first outputs of splitmix64 seeded with 0
  CHECK(random_bits(0, 0) == 0xE220A8397B1DCDAFull);
  CHECK(random_bits(0, 1) == 0x6E789E6AA1B965F4ull);
  CHECK(random_bits(0, 2) == 0x06C45D188009454Full);

  const HostMatrix f = randu_host({1, 2}, 0, ElemType::f32);
  CHECK(f.at(0) == static_cast<double>(0xE220A8397B1DCDAFull >> 40) / 16777216.0);
  const HostMatrix d = randu_host({1, 1}, 0, ElemType::f64);
  CHECK(d.at(0) == static_cast<double>(0xE220A8397B1DCDAFull >> 11) / 9007199254740992.0);

  const HostMatrix u = randi_host({64, 64}, 0, 10, 5);
  bool seen[10] = {};
  for (std::size_t i = 0; i < u.n_elem(); ++i) {
    REQUIRE(u.at(i) >= 0);
    REQUIRE(u.at(i) < 10);
    seen[static_cast<int>(u.at(i))] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("assignment evaluates lazily built expressions")
{
  Context ctx;
  const Mat X = randu(ctx, 5, 4, 1);
  const Mat Y = randu(ctx, 5, 4, 2);
  Mat Z(ctx);
  Z = X + Y;
  CHECK(Z.shape() == MatShape{5, 4});
  const HostMatrix x = X.download(), y = Y.download();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(Z(r, c) == static_cast<double>(static_cast<float>(x.at(r, c)) + static_cast<float>(y.at(r, c))));
  CHECK(Z.elem_get(0, 0) == static_cast<double>(static_cast<float>(x.at(0, 0)) + static_cast<float>(y.at(0, 0))));
}

TEST_CASE("scalar changes reuse the compiled kernel")
{
  Context ctx;
  const Mat X = randu(ctx, 8, 8, 3);
  Mat Z(ctx);
  Z = X + 3;
  const double first = Z(2, 2);
  Z = X + 5;
  CHECK(ctx.cache().compiles() == 1);
  CHECK(ctx.cache().hits() == 1);
  CHECK(ctx.launches() == 2);
  CHECK(Z(2, 2) == static_cast<double>(static_cast<float>(first) + 2.0f));
}

TEST_CASE("four-way sum is one launch")
{
  Context ctx;
  const Mat A = randu(ctx, 16, 16, 1), B = randu(ctx, 16, 16, 2), C = randu(ctx, 16, 16, 3), D = randu(ctx, 16, 16, 4);
  Mat Z(ctx);
  Z = A + B + C + D;
  CHECK(ctx.launches() == 1);
  CHECK(ctx.matmuls() == 0);
}

TEST_CASE("assignment resizes the target")
{
  Context ctx;
  const Mat X = randu(ctx, 3, 7, 1);
  Mat Z = zeros(ctx, 2, 2);
  Z = X.t();
  CHECK(Z.shape() == MatShape{7, 3});
  CHECK(Z(6, 2) == X(2, 6));
  Z = conv_to(X, ElemType::f64);
  CHECK(Z.type() == ElemType::f64);
}

TEST_CASE("element access")
{
  Context ctx;
  Mat m = zeros(ctx, 3, 2);
  CHECK_THROWS_AS(m.elem_get(3, 0), BoundsError);
  CHECK_THROWS_AS(m.elem_get(0, 2), BoundsError);
  CHECK_THROWS_AS(m.elem_set(3, 0, 1.0), BoundsError);
  m.elem_set(2, 1, 4.5);
  CHECK(m.elem_get(2, 1) == 4.5);
  CHECK(m.elem_get(1, 1) == 0.0);
  // column-major storage
  const HostMatrix h = m.download();
  CHECK(h.data<float>()[2 + 1 * 3] == 4.5f);
}

TEST_CASE("accu")
{
  Context ctx;
  CHECK(accu(ones(ctx, 3, 3)) == 9.0);
  CHECK(accu(zeros(ctx, 7, 3)) == 0.0);
  const HostMatrix four = HostMatrix::from<float>({2, 2}, {1, 3, 2, 4});
  CHECK(accu(Mat(ctx, four)) == 10.0);

  const Mat X = randu(ctx, 33, 17, 9);
  CHECK(accu(X - X, ctx) == 0.0);

  Mat S(ctx);
  S = 2 * X - 1;
  for (int seed = 0; seed < 5; ++seed) {
    const Mat R = randu(ctx, 9, 9, static_cast<std::uint64_t>(seed));
    Mat T(ctx);
    T = R - 0.5;
    CHECK(accu(T % (T > 0), ctx) >= 0.0);
  }
  CHECK(accu(S % (S > 0), ctx) >= 0.0);

  // reductions fuse: one reduce launch
  const std::size_t before = ctx.launches();
  const Mat Y = randu(ctx, 33, 17, 10);
  const double s = accu(X + Y, ctx);
  CHECK(ctx.launches() == before + 1);
  const HostMatrix x = X.download(), y = Y.download();
  double want = 0.0;
  for (std::size_t i = 0; i < x.n_elem(); ++i) want += static_cast<float>(x.at(i)) + static_cast<float>(y.at(i));
  CHECK(s == doctest::Approx(want).epsilon(1e-12));

  // products are split out before the reduction
  const Mat P = randu(ctx, 4, 6, 1), Q = randu(ctx, 6, 3, 2);
  const HostMatrix p = P.download(), q = Q.download();
  double pq = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 6; ++k) acc += p.at(i, k) * q.at(k, j);
      pq += static_cast<float>(acc);
    }
  CHECK(accu(P * Q, ctx) == doctest::Approx(pq).epsilon(1e-6));
}

TEST_CASE("conv_to")
{
  Context ctx;
  const Mat u(ctx, HostMatrix::from<std::uint32_t>({1, 3}, {1, 2, 3}));
  Mat f(ctx);
  f = conv_to(u, ElemType::f32);
  CHECK(f.type() == ElemType::f32);
  CHECK(f(0, 0) == 1.0);
  CHECK(f(0, 1) == 2.0);
  CHECK(f(0, 2) == 3.0);

  const Mat g = fill(ctx, 1, 1, 2.9);
  Mat i(ctx);
  i = conv_to(g, ElemType::i32);
  CHECK(i(0, 0) == 2.0);
  CHECK_THROWS_AS(conv_to(u, ElemType::i32), TypeError);

  // expr3-style conversion stays inside the fused kernel
  const Mat X = randu(ctx, 8, 8, 1), W = randu(ctx, 8, 8, 2);
  const Mat Y = randi(ctx, 8, 8, 0, 10, 3);
  const ExecutionPlan p = plan(999, 1 / (X % conv_to(Y, ElemType::f32) + log(log(X + 2) % W)));
  CHECK(p.fused_steps() == 1);
  CHECK(p.matmul_steps() == 0);
}

TEST_CASE("sync and print")
{
  Context ctx;
  ctx.sync();
  sync(ctx);
  const Mat z = zeros(ctx, 1, 2);
  CHECK(z.print() == "0.0000 0.0000\n");
  const Mat m(ctx, HostMatrix::from<float>({2, 2}, {1.0f, 3.0f, 2.5f, -4.0f}));
  CHECK(m.print() == "1.0000 2.5000\n3.0000 -4.0000\n");
  Mat r(ctx);
  r = m + 1;
  std::ostringstream os;
  r.print(os);
  CHECK(os.str() == "2.0000 3.5000\n4.0000 -3.0000\n");
}

TEST_CASE("views and diagonals")
{
  Context ctx;
  const HostMatrix h = [] {
    HostMatrix m(ElemType::f32, {4, 5});
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t r = 0; r < 4; ++r) m.set(r, c, static_cast<double>(10 * r + c));
    return m;
  }();
  const Mat A(ctx, h);
  Mat S(ctx);
  S = A.submat(1, 2, 2, 4);
  CHECK(S.shape() == MatShape{2, 3});
  CHECK(S(0, 0) == 12.0);
  CHECK(S(1, 2) == 24.0);
  CHECK_THROWS_AS(A.submat(1, 2, 4, 4), BoundsError);
  CHECK_THROWS_AS(A.submat(2, 0, 1, 0), BoundsError);

  Mat D(ctx);
  D = A.diag(1);
  CHECK(D.shape() == MatShape{4, 1});
  CHECK(D(0, 0) == 1.0);
  CHECK(D(3, 0) == 34.0);
  D = A.diag(-2);
  CHECK(D.shape() == MatShape{2, 1});
  CHECK(D(0, 0) == 20.0);
  CHECK(D(1, 0) == 31.0);
}

TEST_CASE("copies, moves and aliasing")
{
  Context ctx;
  const Mat X = randu(ctx, 4, 4, 1);
  Mat copy = X;
  CHECK(copy.id() != X.id());
  CHECK(bit_equal(copy.download(), X.download()));
  Mat moved = std::move(copy);
  CHECK(bit_equal(moved.download(), X.download()));
  CHECK_THROWS_AS(copy.as_expr(), Error);

  Mat Z = randu(ctx, 6, 6, 5);
  const Mat Y = randu(ctx, 6, 6, 6);
  const HostMatrix z0 = snapshot(Z);
  const HostMatrix y0 = snapshot(Y);
  Z = Z.t() + Y;
  const HostMatrix z1 = Z.download();
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c)
      CHECK(z1.at(r, c) == static_cast<double>(static_cast<float>(z0.at(c, r)) + static_cast<float>(y0.at(r, c))));

  // safe alias in place
  Z = Z + Y;
  const HostMatrix z2 = Z.download();
  for (std::size_t i = 0; i < 36; ++i)
    CHECK(z2.at(i) == static_cast<double>(static_cast<float>(z1.at(i)) + static_cast<float>(y0.at(i))));

  // self product
  Mat P = randu(ctx, 3, 3, 8);
  const HostMatrix p0 = snapshot(P);
  P = P * P;
  const HostMatrix p1 = P.download();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += p0.at(i, k) * p0.at(k, j);
      CHECK(p1.at(i, j) == static_cast<double>(static_cast<float>(acc)));
    }

  // self-referencing diagonal
  Mat Q = randu(ctx, 5, 1, 2);
  Mat B = randu(ctx, 5, 5, 3);
  const HostMatrix b0 = snapshot(B);
  B = B.submat(0, 0, 4, 0) + B.diag(0);
  const HostMatrix b1 = B.download();
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(b1.at(i) == static_cast<double>(static_cast<float>(b0.at(i, 0)) + static_cast<float>(b0.at(i, i))));
  (void)Q;
}

TEST_CASE("matrices from another context cannot be read")
{
  Context a;
  Context b;
  const Mat X = randu(a, 2, 2, 1);
  Mat Z(b);
  CHECK_THROWS_AS(Z = X + 1, Error);
  // whole-matrix copy across contexts goes through the host
  Z = X;
  CHECK(bit_equal(Z.download(), X.download()));
}

TEST_CASE("text matrix format")
{
  const HostMatrix f = randu_host({3, 4}, 11, ElemType::f32);
  const HostMatrix d = randu_host({2, 5}, 12, ElemType::f64);
  const HostMatrix u = HostMatrix::from<std::uint32_t>({2, 2}, {0u, 7u, 0xFFFFFFFFu, 42u});
  const HostMatrix i = HostMatrix::from<std::int32_t>({1, 3}, {INT32_MIN, 0, INT32_MAX});
  HostMatrix special(ElemType::f32, {1, 4});
  special.set(0, NAN);
  special.set(1, INFINITY);
  special.set(2, -INFINITY);
  special.set(3, 1e-45);
  for (const HostMatrix* m : {&f, &d, &u, &i}) {
    std::stringstream ss;
    write_text(ss, *m);
    CHECK(bit_equal(read_text(ss), *m));
  }
  std::stringstream ss;
  write_text(ss, special);
  const HostMatrix back = read_text(ss);
  CHECK(std::isnan(back.at(0)));
  CHECK(back.at(1) == INFINITY);
  CHECK(back.at(2) == -INFINITY);
  CHECK(back.at(3) == special.at(3));

  std::stringstream head;
  write_text(head, u);
  std::string first;
  std::getline(head, first);
  CHECK(first == "2 2 u32");

  std::istringstream shorty("2 2 f32\n1 2 3\n");
  CHECK_THROWS_AS(read_text(shorty), Error);
  std::istringstream bad_type("1 1 f16\n1\n");
  CHECK_THROWS_AS(read_text(bad_type), Error);
  std::istringstream range("1 1 u32\n-1\n");
  CHECK_THROWS_AS(read_text(range), Error);

  const auto path = (std::filesystem::temp_directory_path() / "kfuse_text_io.txt").string();
  save_text(path, d);
  CHECK(bit_equal(load_text(path), d));
  std::filesystem::remove(path);
}

namespace {

// Runs a fixed program either syncing after every assignment or never.
std::vector<HostMatrix> program(Context& ctx, bool sync_each)
{
  std::vector<HostMatrix> out;
  Mat X = randu(ctx, 20, 20, 1);
  const Mat Y = randu(ctx, 20, 20, 2);
  Mat Z(ctx);
  const auto step = [&] {
    if (sync_each) ctx.sync();
  };
  Z = X + Y;
  step();
  X = Z % Y + 1;
  step();
  Z = exp(-X) * Y.t();
  step();
  X = X.t() + Z;
  step();
  Z = (X > 1) % X + Z.diag(0).t().t() * Y.submat(0, 0, 0, 19);
  step();
  out.push_back(X.download());
  out.push_back(Z.download());
  return out;
}

} // namespace

TEST_CASE("asynchrony is unobservable")
{
  Context a;
  Context b;
  const auto r1 = program(a, true);
  const auto r2 = program(b, false);
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(bit_equal(r1[i], r2[i]));

#ifdef KFUSE_HAVE_HOST_JIT
  if (HostJitBackend::available()) {
    Context c(std::make_unique<HostJitBackend>());
    Context d(std::make_unique<HostJitBackend>());
    const auto r3 = program(c, true);
    const auto r4 = program(d, false);
    for (std::size_t i = 0; i < r3.size(); ++i) CHECK(bit_equal(r3[i], r4[i]));
  }
#endif
}

TEST_CASE("property: repeated assignment compiles once")
{
  Context ctx;
  const Mat X = randu(ctx, 12, 12, 1);
  const Mat Y = randu(ctx, 12, 12, 2);
  Mat Z(ctx);
  for (int n = 1; n <= 20; ++n) {
    Z = n * (X.t() + Y) % exp(-X) + static_cast<double>(n);
    CHECK(ctx.cache().compiles() == 1);
    CHECK(ctx.launches() == static_cast<std::size_t>(n));
  }
}
