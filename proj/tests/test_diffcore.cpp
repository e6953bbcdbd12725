#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "expres/archive.hpp"
#include "expres/errors.hpp"
#include "expres/gradcheck.hpp"
#include "expres/kernels.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"

using namespace expres;

namespace {

Tensor uniform(Dims dims, float lo, float hi, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor(std::move(dims), lo, hi, rng);
}

std::string bytes_of(const Tensor& t) {
  std::ostringstream os;
  write_tensor(os, t);
  return os.str();
}

// sum(f(x) * r): a scalar probe of every output coordinate.
Var weighted_sum(Graph& g, Var y, const Tensor& r) { return ops::sum(g, ops::mul(g, y, g.constant(r))); }

}  // namespace

// ---------------------------------------------------------------------------
TEST_CASE("tensor construction and reshape") {
  Tensor t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.dim(1) == 3);
  CHECK(t.at(1, 2) == 1.5f);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK(t.reshaped({3, 2}).dims() == Dims{3, 2});
  CHECK_THROWS_AS(t.dim(2), ShapeError);
  Tensor z({2}, std::vector<float>{0.0f, 1.0f});
  Tensor nz({2}, std::vector<float>{-0.0f, 1.0f});
  CHECK(z.equals(nz));
  CHECK_FALSE(z.bit_equal(nz));
}

TEST_CASE("XT01 record layout") {
  const std::string b = bytes_of(Tensor({2}, std::vector<float>{1.0f, -2.0f}));
  const unsigned char expect[] = {'X', 'T', '0', '1', 0, 1, 2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  REQUIRE(b.size() == sizeof(expect));
  CHECK(std::memcmp(b.data(), expect, sizeof(expect)) == 0);
}

TEST_CASE("tensor and archive round trips are bit exact") {
  const Tensor t = uniform({3, 4, 5}, -3.0f, 3.0f, 1);
  std::istringstream is(bytes_of(t));
  CHECK(read_tensor(is).bit_equal(t));

  TensorMap m{{"a", t}, {"b.c", uniform({7}, 0, 1, 2)}, {"scalar", Tensor::scalar(-0.0f)}};
  std::ostringstream os;
  write_archive(os, m);
  std::istringstream ia(os.str());
  const TensorMap back = read_archive(ia);
  REQUIRE(back.size() == m.size());
  for (const auto& [name, v] : m) CHECK(back.at(name).bit_equal(v));
}

TEST_CASE("truncated or corrupt input is a format error") {
  const std::string b = bytes_of(uniform({4, 4}, 0, 1, 3));
  for (std::size_t cut : {0ul, 3ul, 5ul, 9ul, b.size() - 1}) {
    std::istringstream is(b.substr(0, cut));
    CHECK_THROWS_AS(read_tensor(is), FormatError);
  }
  std::string bad = b;
  bad[0] = 'Y';
  std::istringstream is(bad);
  CHECK_THROWS_AS(read_tensor(is), FormatError);
  std::string dtype = b;
  dtype[4] = 7;
  std::istringstream id(dtype);
  CHECK_THROWS_AS(read_tensor(id), FormatError);

  std::ostringstream os;
  write_archive(os, {{"w", uniform({8}, 0, 1, 4)}});
  const std::string a = os.str();
  std::istringstream ia(a.substr(0, a.size() - 2));
  CHECK_THROWS_AS(read_archive(ia), FormatError);
}

TEST_CASE("missing files are I/O errors") {
  CHECK_THROWS_AS(load_tensor("/nonexistent/dir/x.xt"), IoError);
  CHECK_THROWS_AS(load_archive("/nonexistent/dir/x.xt"), IoError);
}

TEST_CASE("git blob hash") {
  // `printf 'hello\n' | git hash-object --stdin`
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  TensorMap a{{"x", uniform({3}, 0, 1, 5)}, {"y", uniform({2}, 0, 1, 6)}};
  TensorMap b;
  b.emplace("y", a.at("y"));
  b.emplace("x", a.at("x"));
  CHECK(content_hash(a) == content_hash(b));
  b.at("x")[0] += 1.0f;
  CHECK(content_hash(a) != content_hash(b));
}

TEST_CASE("derived seeds are stable and label sensitive") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  Rng r(9);
  for (int i = 0; i < 1000; ++i) CHECK(std::fabs(r.trunc_normal(0.5f)) <= 1.0f);
}

// ---------------------------------------------------------------------------
TEST_CASE("kernel backends agree bit for bit with the scalar reference") {
  const auto& ref = kernels::scalar::kTable;
  for (kernels::Backend be : kernels::available()) {
    CAPTURE(kernels::name(be));
    const auto& k = kernels::table(be);
    for (std::size_t trial = 0; trial < 40; ++trial) {
      const std::size_t m = 1 + trial % 5, kk = 1 + (trial * 7) % 19, n = 1 + (trial * 13) % 37;
      const Tensor a = uniform({m, kk}, -2, 2, trial), b = uniform({kk, n}, -2, 2, trial + 100);
      Tensor o1({m, n}), o2({m, n});
      ref.gemm(a.data(), b.data(), o1.data(), m, kk, n);
      k.gemm(a.data(), b.data(), o2.data(), m, kk, n);
      CHECK(o1.bit_equal(o2));

      Tensor c1({n}), c2({n});
      ref.column_sum(b.data(), kk, n, c1.data());
      k.column_sum(b.data(), kk, n, c2.data());
      CHECK(c1.bit_equal(c2));

      const Tensor x = uniform({n}, -1, 1, trial + 200), y = uniform({n}, -1, 1, trial + 300);
      Tensor s1({n}), s2({n});
      ref.add(x.data(), y.data(), s1.data(), n);
      k.add(x.data(), y.data(), s2.data(), n);
      CHECK(s1.bit_equal(s2));
      ref.scale(x.data(), 0.37f, s1.data(), n);
      k.scale(x.data(), 0.37f, s2.data(), n);
      CHECK(s1.bit_equal(s2));
      Tensor a1 = y, a2 = y;
      ref.accumulate(x.data(), a1.data(), n);
      k.accumulate(x.data(), a2.data(), n);
      CHECK(a1.bit_equal(a2));
    }
  }
}

TEST_CASE("gemm matches a double-precision oracle") {
  const Tensor a = uniform({3, 17}, -1, 1, 7), b = uniform({17, 5}, -1, 1, 8);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 17; ++k) s += static_cast<double>(a.at(i, k)) * b.at(k, j);
      CHECK(c.at(i, j) == static_cast<float>(s));
    }
}

TEST_CASE("scoped backend selection restores the previous backend") {
  const auto before = kernels::active();
  {
    kernels::ScopedBackend s(kernels::Backend::Scalar);
    CHECK(kernels::active() == kernels::Backend::Scalar);
  }
  CHECK(kernels::active() == before);
}

// ---------------------------------------------------------------------------
TEST_CASE("primitive examples") {
  Graph g;
  SUBCASE("softmax of equal logits") {
    const Tensor s = g.value(ops::softmax(g, g.constant(Tensor({2}, std::vector<float>{0, 0}))));
    CHECK(s[0] == 0.5f);
    CHECK(s[1] == 0.5f);
  }
  SUBCASE("layer norm of a constant vector maps to beta") {
    Var x = g.constant(Tensor({5}, 3.25f));
    const Tensor y = g.value(ops::layer_norm(g, x, g.constant(Tensor({5}, 1.0f)), g.constant(Tensor({5}, 0.0f))));
    for (float v : y.values()) CHECK(v == 0.0f);
  }
  SUBCASE("gelu fixes the origin") { CHECK(g.value(ops::gelu(g, g.constant(Tensor::scalar(0))))[0] == 0.0f); }
  SUBCASE("gelu uses the erf form") {
    CHECK(gelu_value(1.0f) == doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))).epsilon(1e-7));
  }
}

TEST_CASE("d/dx x*x at 3 is 6") {
  ParamStore s;
  s.add("x", Tensor::scalar(3), true);
  Graph g(s);
  Var x = g.param("x");
  const TensorMap grads = g.gradient(ops::mul(g, x, x), {"x"});
  CHECK(grads.at("x")[0] == 6.0f);
}

TEST_CASE("softmax cross-entropy gradient at equal logits") {
  ParamStore s;
  s.add("z", Tensor({1, 2}, 0.0f), true);
  Graph g(s);
  const TensorMap grads = g.gradient(ops::cross_entropy(g, g.param("z"), {0}), {"z"});
  CHECK(grads.at("z")[0] == -0.5f);
  CHECK(grads.at("z")[1] == 0.5f);
}

TEST_CASE("gradient requests are validated") {
  ParamStore s;
  s.add("w", Tensor::scalar(2), true);
  s.add("frozen", Tensor::scalar(1), false);
  Graph g(s);
  Var l = ops::mul(g, g.param("w"), g.param("frozen"));
  CHECK_THROWS_AS(g.gradient(l, {"frozen"}), ContractError);
  CHECK_THROWS_AS(g.gradient(l, {"nope"}), ContractError);
  Graph g2(s);
  Var v = ops::scale(g2, g2.param("w"), 1.0f);
  Var two = ops::concat(g2, {v, v}, 0);
  CHECK_THROWS_AS(g2.gradient(two, {"w"}), ContractError);
}

TEST_CASE("shape errors name the node") {
  Graph g;
  Graph::Scope scope(g, "block");
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({2, 3}));
  try {
    ops::matmul(g, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("block/matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(g, a, g.constant(Tensor({3, 2}))), ShapeError);
  CHECK_THROWS_AS(ops::add_bias(g, a, g.constant(Tensor({2}))), ShapeError);
}

TEST_CASE("non-finite intermediates are numeric errors naming the node") {
  Graph g;
  Var big = g.constant(Tensor({2}, 3e38f));
  try {
    ops::scale(g, big, 10.0f);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
}

TEST_CASE("evaluation and gradients are bit reproducible") {
  auto run = [] {
    ParamStore s;
    s.add("w", uniform({4, 6}, -1, 1, 11), true);
    Graph g(s);
    Var x = g.constant(uniform({3, 4}, -1, 1, 12));
    Var h = ops::gelu(g, ops::matmul(g, x, g.param("w")));
    Var y = ops::softmax(g, h);
    Var l = ops::sum(g, ops::mul(g, y, h));
    return std::make_pair(g.value(l), g.gradient(l, {"w"}).at("w"));
  };
  const auto a = run(), b = run();
  CHECK(a.first.bit_equal(b.first));
  CHECK(a.second.bit_equal(b.second));
}

TEST_CASE("softmax and layer norm properties") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Graph g;
    const Tensor x = uniform({4, 9}, -6, 6, seed);
    const Tensor s = g.value(ops::softmax(g, g.constant(x), 0.7f));
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 9; ++c) sum += s.at(r, c);
      CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
    const Tensor y = g.value(ops::layer_norm(g, g.constant(x), g.constant(Tensor({9}, 1.0f)),
                                             g.constant(Tensor({9}, 0.0f))));
    for (std::size_t r = 0; r < 4; ++r) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < 9; ++c) mean += y.at(r, c);
      mean /= 9;
      for (std::size_t c = 0; c < 9; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
      var /= 9;
      CHECK(std::fabs(mean) < 1e-5);
      CHECK(std::fabs(var - 1.0) < 1e-3);
    }
  }
}

TEST_CASE("masked softmax ignores -inf entries") {
  Graph g;
  Tensor mask({1, 3}, 0.0f);
  mask[1] = -INFINITY;
  const Tensor s = g.value(ops::softmax(g, g.constant(Tensor({1, 3}, std::vector<float>{1, 5, 1})), 1.0f, &mask));
  CHECK(s[1] == 0.0f);
  CHECK(s[0] == 0.5f);
  CHECK(s[2] == 0.5f);
}

TEST_CASE("split of concat is bit exact along every axis") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Graph g;
    const Tensor a = uniform({3, 4, 2}, -1, 1, seed), b = uniform({3, 4, 2}, -1, 1, seed + 50);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Dims db = b.dims();
      db[axis] = 1 + seed % 3;
      const Tensor bb = uniform(db, -1, 1, seed + 99);
      Var c = ops::concat(g, {g.constant(a), g.constant(bb)}, axis);
      const auto parts = ops::split(g, c, axis, {a.dim(axis), bb.dim(axis)});
      CHECK(g.value(parts[0]).bit_equal(a));
      CHECK(g.value(parts[1]).bit_equal(bb));
      CHECK(g.value(ops::slice(g, c, axis, a.dim(axis), bb.dim(axis))).bit_equal(bb));
    }
  }
}

TEST_CASE("bilinear resize uses half-pixel centres") {
  // in = 2, out = 4: centres at -0.25, 0.25, 0.75, 1.25 clamp to [0, 1].
  const auto taps = bilinear_taps(2, 4);
  CHECK(taps[0].w0 == doctest::Approx(1.0));
  CHECK(taps[1].w0 == doctest::Approx(0.75));
  CHECK(taps[1].w1 == doctest::Approx(0.25));
  CHECK(taps[2].w0 == doctest::Approx(0.25));
  CHECK(taps[3].i0 == 1);
  const Tensor c = bilinear_resize(Tensor({2, 3, 3}, 0.625f), 7, 5);
  for (float v : c.values()) CHECK(v == 0.625f);
}

// ---------------------------------------------------------------------------
// Finite differences for every primitive on seeded well-conditioned instances.

namespace {

void check_fd(ParamStore& s, const LossFn& loss) {
  for (const std::string& name : s.trainable_names()) {
    const FiniteDiffReport r = finite_diff_report(s, loss, name, 1e-3f);
    CAPTURE(name);
    CAPTURE(r.analytic);
    CAPTURE(r.numeric);
    CHECK(r.max_rel_error < 1e-3f);
  }
}

}  // namespace

TEST_CASE("finite differences agree with every primitive over 100 seeded trials") {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    const std::uint64_t seed = derive_seed(trial, "fd-primitive");
    Rng rng(seed);
    auto pos = [&](Dims d) { return uniform_tensor(std::move(d), 0.5f, 1.5f, rng); };

    // Signed weights keep the loss comparable to each gradient coordinate.
    auto signed_r = [&](Dims d) {
      Tensor r = uniform_tensor(std::move(d), 0.5f, 1.5f, rng);
      for (float& v : r.values()) v = rng.uniform() < 0.5 ? -v : v;
      return r;
    };

    SUBCASE("matmul") {
      ParamStore s;
      s.add("a", pos({1, 2}), true);
      s.add("b", pos({2, 2}), true);
      const Tensor r = pos({1, 2});
      check_fd(s, [&](Graph& g) { return weighted_sum(g, ops::matmul(g, g.param("a"), g.param("b")), r); });
    }
    SUBCASE("add, add_bias, mul, scale") {
      ParamStore s;
      s.add("a", pos({1, 2}), true);
      s.add("b", pos({1, 2}), true);
      s.add("c", pos({2}), true);
      const Tensor r = signed_r({1, 2});
      check_fd(s, [&](Graph& g) {
        Var x = ops::add(g, g.param("a"), ops::mul(g, g.param("a"), g.param("b")));
        return weighted_sum(g, ops::scale(g, ops::add_bias(g, x, g.param("c")), 0.75f), r);
      });
    }
    SUBCASE("softmax with temperature") {
      ParamStore s;
      s.add("x", uniform_tensor({1, 3}, -0.5f, 0.5f, rng), true);
      Tensor r({1, 3}, 0.0f);
      r[rng.index(3)] = 1.0f;
      check_fd(s, [&](Graph& g) { return weighted_sum(g, ops::softmax(g, g.param("x"), 1.5f), r); });
    }
    SUBCASE("masked softmax") {
      ParamStore s;
      s.add("x", uniform_tensor({1, 4}, -0.5f, 0.5f, rng), true);
      Tensor mask({1, 4}, 0.0f);
      mask[3] = -INFINITY;
      Tensor r({1, 4}, 0.0f);
      r[rng.index(3)] = 1.0f;
      check_fd(s, [&](Graph& g) {
        // The masked coordinate has zero gradient both ways; offset it so the check stays relative.
        Var y = ops::softmax(g, g.param("x"), 1.0f, &mask);
        return ops::add(g, weighted_sum(g, y, r), ops::sum(g, ops::slice(g, g.param("x"), 1, 3, 1)));
      });
    }
    SUBCASE("layer norm input") {
      // Output 0 of a row whose first entry sits near the row mean.
      Tensor x = uniform_tensor({4}, -1.0f, 1.0f, rng);
      x[0] = (x[1] + x[2] + x[3]) / 3.0f + static_cast<float>(rng.uniform(-0.05, 0.05));
      ParamStore s;
      s.add("x", x, true);
      Tensor r({4}, 0.0f);
      r[0] = 1.0f;
      const Tensor gam = pos({4}), bet = pos({4});
      check_fd(s, [&](Graph& g) {
        return weighted_sum(g, ops::layer_norm(g, g.param("x"), g.constant(gam), g.constant(bet)), r);
      });
    }
    SUBCASE("layer norm affine") {
      Tensor x({4}, std::vector<float>{-1.5f, -0.5f, 0.5f, 1.5f});
      for (std::size_t i = 3; i > 0; --i) std::swap(x[i], x[rng.index(i + 1)]);
      for (float& v : x.values()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
      ParamStore s;
      s.add("g", pos({4}), true);
      s.add("b", pos({4}), true);
      const Tensor r = pos({4});
      check_fd(s, [&](Graph& g) {
        return weighted_sum(g, ops::layer_norm(g, g.constant(x), g.param("g"), g.param("b")), r);
      });
    }
    SUBCASE("gelu") {
      ParamStore s;
      s.add("x", uniform_tensor({2}, 0.2f, 2.0f, rng), true);
      const Tensor r = signed_r({2});
      check_fd(s, [&](Graph& g) { return weighted_sum(g, ops::gelu(g, g.param("x")), r); });
    }
    SUBCASE("transpose") {
      ParamStore s;
      s.add("x", pos({2, 3}), true);
      const Tensor r = signed_r({3, 2});
      check_fd(s, [&](Graph& g) { return weighted_sum(g, ops::transpose(g, g.param("x")), r); });
    }
    SUBCASE("reshape") {
      ParamStore s;
      s.add("x", pos({2, 3}), true);
      const Tensor r = signed_r({3, 2});
      check_fd(s, [&](Graph& g) { return weighted_sum(g, ops::reshape(g, g.param("x"), {3, 2}), r); });
    }
    SUBCASE("mean") {
      ParamStore s;
      s.add("x", pos({2, 2}), true);
      const Tensor r = signed_r({2});
      check_fd(s, [&](Graph& g) { return weighted_sum(g, ops::mean(g, g.param("x"), 0), r); });
    }
    SUBCASE("concat, slice, split") {
      ParamStore s;
      s.add("a", pos({1, 2}), true);
      s.add("b", pos({1, 2}), true);
      const Tensor r = pos({2, 2}), r2 = pos({2, 1});
      check_fd(s, [&](Graph& g) {
        Var c = ops::concat(g, {g.param("a"), g.param("b")}, 0);
        const auto parts = ops::split(g, c, 0, {1, 1});
        Var sl = ops::slice(g, c, 1, 1, 1);
        return ops::add(g, weighted_sum(g, ops::concat(g, {parts[1], parts[0]}, 0), r), weighted_sum(g, sl, r2));
      });
    }
    SUBCASE("bilinear resize") {
      ParamStore s;
      s.add("x", pos({1, 2, 2}), true);
      const Tensor r = pos({1, 3, 3});
      check_fd(s, [&](Graph& g) { return weighted_sum(g, ops::bilinear_resize(g, g.param("x"), 3, 3), r); });
    }
    SUBCASE("cross entropy") {
      ParamStore s;
      s.add("z", uniform_tensor({2, 3}, -0.5f, 0.5f, rng), true);
      const std::vector<int> t{static_cast<int>(rng.index(3)), static_cast<int>(rng.index(3))};
      check_fd(s, [&](Graph& g) { return ops::cross_entropy(g, g.param("z"), t); });
    }
  }
}

TEST_CASE("finite differences of a quadratic are essentially exact") {
  const LossFn quad = [](Graph& g) {
    Var x = g.param("x");
    return ops::sum(g, ops::mul(g, x, x));
  };
  SUBCASE("dyadic point and step: no rounding at all") {
    ParamStore s;
    s.add("x", Tensor({3}, std::vector<float>{0.5f, 1.0f, 1.5f}), true);
    CHECK(finite_diff_check(s, quad, "x", 0.0078125f) == 0.0f);
  }
  SUBCASE("generic steps up to 1e-2") {
    for (float eps : {1e-2f, 3e-3f, 1e-3f}) {
      ParamStore s;
      s.add("x", Tensor({3}, std::vector<float>{0.021f, 0.034f, 0.047f}), true);
      CHECK(finite_diff_check(s, quad, "x", eps) < 1e-5f);
    }
  }
}

TEST_CASE("finite differences refuse frozen names and restore the store") {
  ParamStore s;
  s.add("w", Tensor({2}, 1.0f), false);
  s.add("x", Tensor({2}, std::vector<float>{0.25f, 0.75f}), true);
  const LossFn loss = [](Graph& g) { return ops::sum(g, ops::mul(g, g.param("x"), g.param("w"))); };
  CHECK_THROWS_AS(finite_diff_check(s, loss, "w", 1e-3f), ContractError);
  const Tensor before = s.value("x");
  finite_diff_check(s, loss, "x", 1e-3f);
  CHECK(s.value("x").bit_equal(before));
}

TEST_CASE("param store partitions") {
  ParamStore s;
  s.add("b", Tensor({2}), false);
  s.add("a", Tensor({3}), true);
  CHECK(s.names() == std::vector<std::string>{"a", "b"});
  CHECK(s.trainable_names() == std::vector<std::string>{"a"});
  CHECK(s.parameter_count(false) == 2);
  CHECK_THROWS_AS(s.assign("a", Tensor({4})), ShapeError);
  CHECK_THROWS_AS(s.add("a", Tensor({3}), true), ContractError);
}
