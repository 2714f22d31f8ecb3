#include "doctest.h"
#include "test_utils.hpp"

#include "unimov/autodiff.hpp"
#include "unimov/checkpoint.hpp"
#include "unimov/nn.hpp"
#include "unimov/rng.hpp"

#include <cstdio>
#include <filesystem>

using namespace unimov;
using ad::Mat;
using ad::ParamStore;
using ad::Tape;
using ad::Var;
using testutil::gradient_check;
using testutil::random_mat;

namespace {

// Wraps a tape expression into the loss_fn shape gradient_check expects.
double check_expr(ParamStore& store,
                  const std::function<Var(Tape&, ParamStore&)>& build,
                  double tol = 1e-7) {
  auto loss_fn = [&](bool with_grad) {
    Tape t;
    Var loss = build(t, store);
    if (with_grad) t.backward(loss);
    return loss.scalar();
  };
  return gradient_check(store, loss_fn, 1e-6, 1);
}

}  // namespace

TEST_CASE("every primitive matches central finite differences") {
  Rng rng(11);
  ParamStore store;
  store.create("a", random_mat(rng, 4, 5));
  store.create("b", random_mat(rng, 4, 5));
  store.create("m", random_mat(rng, 5, 3));
  store.create("r", random_mat(rng, 1, 5));
  store.create("s", random_mat(rng, 4, 1));
  store.create("k", random_mat(rng, 1, 1));

  auto A = [](Tape& t, ParamStore& s) { return t.param(s.at("a")); };

  std::vector<std::pair<const char*, std::function<Var(Tape&, ParamStore&)>>> cases = {
      {"add", [&](Tape& t, ParamStore& s) { return t.sum(t.add(A(t, s), t.param(s.at("b")))); }},
      {"sub", [&](Tape& t, ParamStore& s) { return t.sum(t.sub(A(t, s), t.param(s.at("b")))); }},
      {"hadamard",
       [&](Tape& t, ParamStore& s) { return t.sum(t.hadamard(A(t, s), t.param(s.at("b")))); }},
      {"matmul",
       [&](Tape& t, ParamStore& s) { return t.sum(t.matmul(A(t, s), t.param(s.at("m")))); }},
      {"transpose", [&](Tape& t, ParamStore& s) { return t.sum(t.transpose(A(t, s))); }},
      {"scale", [&](Tape& t, ParamStore& s) { return t.sum(t.scale(A(t, s), -2.5)); }},
      {"add_scalar", [&](Tape& t, ParamStore& s) { return t.sum(t.add_scalar(A(t, s), 1.5)); }},
      {"mul_scalar",
       [&](Tape& t, ParamStore& s) { return t.sum(t.mul_scalar(A(t, s), t.param(s.at("k")))); }},
      {"reciprocal",
       [&](Tape& t, ParamStore& s) { return t.sum(t.reciprocal(t.add_scalar(t.sigmoid(A(t, s)), 0.5))); }},
      {"add_rowvec",
       [&](Tape& t, ParamStore& s) { return t.sum(t.add_rowvec(A(t, s), t.param(s.at("r")))); }},
      {"mul_rowvec",
       [&](Tape& t, ParamStore& s) { return t.sum(t.mul_rowvec(A(t, s), t.param(s.at("r")))); }},
      {"scale_rows",
       [&](Tape& t, ParamStore& s) { return t.sum(t.scale_rows(A(t, s), t.param(s.at("s")))); }},
      {"exp", [&](Tape& t, ParamStore& s) { return t.sum(t.exp(A(t, s))); }},
      {"log",
       [&](Tape& t, ParamStore& s) { return t.sum(t.log(t.add_scalar(t.sigmoid(A(t, s)), 0.5))); }},
      {"tanh", [&](Tape& t, ParamStore& s) { return t.sum(t.tanh(A(t, s))); }},
      {"sigmoid", [&](Tape& t, ParamStore& s) { return t.sum(t.sigmoid(A(t, s))); }},
      {"sqrt",
       [&](Tape& t, ParamStore& s) { return t.sum(t.sqrt(t.add_scalar(t.sigmoid(A(t, s)), 0.5))); }},
      {"mean", [&](Tape& t, ParamStore& s) { return t.mean(t.exp(A(t, s))); }},
      {"row_sum", [&](Tape& t, ParamStore& s) { return t.sum(t.tanh(t.row_sum(A(t, s)))); }},
      {"row_softmax",
       [&](Tape& t, ParamStore& s) { return t.sum(t.hadamard(t.row_softmax(A(t, s)), t.param(s.at("b")))); }},
      {"row_logsumexp", [&](Tape& t, ParamStore& s) { return t.sum(t.row_logsumexp(A(t, s))); }},
      {"rows_l2_normalize",
       [&](Tape& t, ParamStore& s) { return t.sum(t.hadamard(t.rows_l2_normalize(A(t, s)), t.param(s.at("b")))); }},
      {"take_diag", [&](Tape& t, ParamStore& s) { return t.sum(t.take_diag(A(t, s))); }},
      {"concat_cols",
       [&](Tape& t, ParamStore& s) { return t.sum(t.tanh(t.concat_cols(A(t, s), t.param(s.at("b"))))); }},
      {"concat_rows",
       [&](Tape& t, ParamStore& s) { return t.sum(t.tanh(t.concat_rows(A(t, s), t.param(s.at("b"))))); }},
      {"slice_cols", [&](Tape& t, ParamStore& s) { return t.sum(t.slice_cols(A(t, s), 1, 3)); }},
      {"gather_rows",
       [&](Tape& t, ParamStore& s) { return t.sum(t.tanh(t.gather_rows(A(t, s), {0, 2, 2, 3}))); }},
      {"resample_rows",
       [&](Tape& t, ParamStore& s) { return t.sum(t.tanh(t.resample_rows_linear(A(t, s), 7))); }},
  };

  for (auto& [name, build] : cases) {
    CAPTURE(name);
    CHECK(check_expr(store, build) < 1e-6);
  }
}

TEST_CASE("argmax-routed primitives away from ties") {
  Rng rng(3);
  ParamStore store;
  // Spread values so +/- step never crosses an argmax boundary.
  Mat a = random_mat(rng, 6, 4);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) += 0.5 * static_cast<double>(r * 4 + c);
  store.create("a", a);

  CHECK(check_expr(store, [](Tape& t, ParamStore& s) {
          return t.sum(t.col_max(t.param(s.at("a"))));
        }) < 1e-6);
  CHECK(check_expr(store, [](Tape& t, ParamStore& s) {
          return t.sum(t.tanh(t.row_maxpool2(t.param(s.at("a")))));
        }) < 1e-6);
  // Odd row count exercises the trailing single-row window.
  ParamStore store5;
  Mat a5 = a.topRows(5);
  store5.create("a", a5);
  CHECK(check_expr(store5, [](Tape& t, ParamStore& s) {
          return t.sum(t.tanh(t.row_maxpool2(t.param(s.at("a")))));
        }) < 1e-6);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  ParamStore store;
  store.create("x", Mat::Constant(1, 1, 0.7));
  Tape t;
  Var x = t.param(store.at("x"));
  Var y = t.add(t.hadamard(x, x), t.scale(x, 3.0));  // x^2 + 3x
  t.backward(t.sum(y));
  CHECK(store.at("x").grad(0, 0) == doctest::Approx(2.0 * 0.7 + 3.0).epsilon(1e-12));
}

TEST_CASE("rows_l2_normalize maps zero rows to a fixed unit vector") {
  Tape t;
  Mat x = Mat::Zero(2, 4);
  x.row(1) << 3.0, 0.0, 4.0, 0.0;
  Var y = t.rows_l2_normalize(t.input(x));
  CHECK(y.value()(0, 0) == 1.0);
  CHECK(y.value().row(0).norm() == doctest::Approx(1.0));
  CHECK(y.value()(1, 0) == doctest::Approx(0.6));
  CHECK(y.value()(1, 2) == doctest::Approx(0.8));
}

TEST_CASE("resample_rows_linear endpoints and constant signals") {
  Tape t;
  Mat x(3, 2);
  x << 0.0, 1.0, 1.0, 1.0, 2.0, 1.0;
  Var y = t.resample_rows_linear(t.input(x), 5);
  CHECK(y.value()(0, 0) == doctest::Approx(0.0));
  CHECK(y.value()(4, 0) == doctest::Approx(2.0));
  CHECK(y.value()(2, 0) == doctest::Approx(1.0));
  for (Eigen::Index r = 0; r < 5; ++r) CHECK(y.value()(r, 1) == doctest::Approx(1.0));
}

TEST_CASE("adamw decays weights and follows gradients deterministically") {
  auto run = [] {
    ParamStore store;
    store.create("w", Mat::Constant(2, 2, 1.0));
    ad::AdamW opt(0.1, 0.9, 0.999, 1e-8, 0.01);
    for (int i = 0; i < 5; ++i) {
      store.zero_grads();
      Tape t;
      Var w = t.param(store.at("w"));
      t.backward(t.sum(t.hadamard(w, w)));
      opt.step(store);
    }
    return store.at("w").value(0, 0);
  };
  const double a = run();
  const double b = run();
  CHECK(a == b);
  CHECK(a < 1.0);  // moved downhill
}

TEST_CASE("checkpoint round-trips through float32") {
  Rng rng(5);
  ParamStore store;
  store.create("layer.w", random_mat(rng, 3, 4));
  store.create("layer.b", random_mat(rng, 1, 4));

  const auto path = std::filesystem::temp_directory_path() / "unimov_ckpt_test.bin";
  save_checkpoint(store, path.string());

  ParamStore loaded;
  loaded.create("layer.w", Mat::Zero(3, 4));
  loaded.create("layer.b", Mat::Zero(1, 4));
  load_checkpoint(loaded, path.string());

  // float32 storage: values agree to single precision.
  CHECK((loaded.at("layer.w").value - store.at("layer.w").value).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((loaded.at("layer.b").value - store.at("layer.b").value).cwiseAbs().maxCoeff() < 1e-6);

  ParamStore wrong;
  wrong.create("layer.w", Mat::Zero(4, 3));
  wrong.create("layer.b", Mat::Zero(1, 4));
  CHECK_THROWS(load_checkpoint(wrong, path.string()));
  std::filesystem::remove(path);
}

TEST_CASE("rng is deterministic and platform-pinned") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  // First draw for seed 42, frozen; catches accidental algorithm changes.
  Rng c(42);
  CHECK(c.next_u64() == 13679457532755275413ULL);
  Rng d(42);
  double u = d.uniform();
  CHECK(u >= 0.0);
  CHECK(u < 1.0);
}

TEST_CASE("token block composes without shape drift") {
  Rng rng(7);
  ParamStore store;
  nn::TokenBlock block(store, "blk", 8, rng);
  Tape t;
  Var x = t.input(random_mat(rng, 5, 8));
  Var y = block.apply(t, x);
  CHECK(y.rows() == 5);
  CHECK(y.cols() == 8);
  CHECK(y.value().allFinite());
}
