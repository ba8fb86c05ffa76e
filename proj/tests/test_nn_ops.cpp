#include "doctest.h"

#include "support/gradcheck.hpp"
#include "v2xcalib/nn/checkpoint.hpp"
#include "v2xcalib/nn/optim.hpp"

#include <filesystem>

using namespace v2xcalib;
using namespace v2xcalib::nn;
using v2xcalib::testing::GradTol;
using v2xcalib::testing::gradcheck;
using v2xcalib::testing::random_tensor;

namespace {

template <typename S>
using Fn = std::function<Var<S>(const std::vector<Var<S>>&)>;

template <typename S>
void expect_grad(const char* what, const Fn<S>& f, const std::vector<Tensor<S>>& inputs,
                 const std::vector<bool>& differentiate = {}) {
  const auto r = gradcheck<S>(f, inputs, GradTol<S>::eps, 64, 7, differentiate);
  INFO(std::string(what) << " rel_err=" << r.rel_err << " checked=" << r.checked);
  CHECK(r.checked > 0);
  CHECK(r.rel_err < GradTol<S>::rel);
}

}  // namespace

TEST_CASE_TEMPLATE("elementwise and broadcast primitives match finite differences", S, float, double) {
  const Tensor<S> a = random_tensor<S>({3, 4, 5}, 1);
  const Tensor<S> b = random_tensor<S>({3, 4, 5}, 2);
  const Tensor<S> row = random_tensor<S>({1, 4, 1}, 3, S(0.5), S(1.5));
  expect_grad<S>("add", [](auto& v) { return v[0] + v[1]; }, {a, b});
  expect_grad<S>("sub_bcast", [](auto& v) { return v[0] - v[1]; }, {a, row});
  expect_grad<S>("mul_bcast", [](auto& v) { return v[0] * v[1]; }, {a, row});
  expect_grad<S>("div_bcast", [](auto& v) { return v[0] / v[1]; }, {a, row});
  expect_grad<S>("scale", [](auto& v) { return scale(v[0], S(2.5)) + S(1); }, {a});
  expect_grad<S>("relu", [](auto& v) { return relu(v[0]); }, {a});
  expect_grad<S>("sigmoid", [](auto& v) { return sigmoid(v[0]); }, {a});
  expect_grad<S>("tanh", [](auto& v) { return tanh(v[0]); }, {a});
  expect_grad<S>("exp", [](auto& v) { return exp(v[0]); }, {a});
  expect_grad<S>("softplus", [](auto& v) { return softplus(v[0]); }, {a});
  expect_grad<S>("silu", [](auto& v) { return silu(v[0]); }, {a});
  expect_grad<S>("square", [](auto& v) { return square(v[0]); }, {a});
  expect_grad<S>("abs", [](auto& v) { return abs(v[0]); }, {a});
  const Tensor<S> pos = random_tensor<S>({3, 4, 5}, 4, S(0.5), S(2));
  expect_grad<S>("sqrt", [](auto& v) { return sqrt(v[0]); }, {pos});
  expect_grad<S>("log", [](auto& v) { return log(v[0]); }, {pos});
  const Tensor<S> unit = random_tensor<S>({3, 4, 5}, 5, S(-0.9), S(0.9));
  expect_grad<S>("acos", [](auto& v) { return acos(v[0]); }, {unit});
  Tensor<S> away = a;  // keep every element clear of the clamp kinks
  for (auto& v : away.values()) {
    if (std::abs(std::abs(v) - S(0.5)) < S(0.02)) v += S(0.05);
  }
  expect_grad<S>("clamp", [](auto& v) { return clamp(v[0], S(-0.5), S(0.5)); }, {away});
}

TEST_CASE_TEMPLATE("reduction and shape primitives match finite differences", S, float, double) {
  const Tensor<S> a = random_tensor<S>({3, 4, 5}, 11);
  expect_grad<S>("sum", [](auto& v) { return sum(v[0]); }, {a});
  expect_grad<S>("mean", [](auto& v) { return mean(v[0]); }, {a});
  expect_grad<S>("sum_axis", [](auto& v) { return sum(v[0], 1, true); }, {a});
  expect_grad<S>("permute", [](auto& v) { return permute(v[0], {2, 0, 1}); }, {a});
  expect_grad<S>("slice", [](auto& v) { return slice(v[0], 2, 1, 3); }, {a});
  expect_grad<S>("concat", [](auto& v) { return concat<S>({v[0], v[1]}, 1); }, {a, random_tensor<S>({3, 2, 5}, 12)});
  expect_grad<S>("row_norm", [](auto& v) { return row_norm(reshape(v[0], {12, 5})); }, {a});
}

TEST_CASE_TEMPLATE("linear algebra and image primitives match finite differences", S, float, double) {
  expect_grad<S>("matmul", [](auto& v) { return matmul(v[0], v[1]); },
                 {random_tensor<S>({3, 4}, 21), random_tensor<S>({4, 5}, 22)});
  expect_grad<S>("linear", [](auto& v) { return linear(v[0], v[1], v[2]); },
                 {random_tensor<S>({3, 4}, 23), random_tensor<S>({4, 5}, 24), random_tensor<S>({5}, 25)});
  const Tensor<S> img = random_tensor<S>({2, 3, 6, 7}, 26);
  for (int stride : {1, 2}) {
    expect_grad<S>("conv2d", [stride](auto& v) { return conv2d(v[0], v[1], v[2], Conv2dOptions::same(3, stride)); },
                   {img, random_tensor<S>({4, 3, 3, 3}, 27), random_tensor<S>({4}, 28)});
  }
  expect_grad<S>("conv2d_1x1", [](auto& v) { return conv2d(v[0], v[1], v[2]); },
                 {img, random_tensor<S>({4, 3, 1, 1}, 29), random_tensor<S>({4}, 30)});
  expect_grad<S>("avg_pool2d", [](auto& v) { return avg_pool2d(v[0], 2, 2); }, {img});
  Tensor<S> distinct = img;  // distinct values, no near-ties inside a window
  {
    std::vector<S> vals(distinct.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = S(0.01) * static_cast<S>(i);
    std::mt19937_64 rng(5);
    std::shuffle(vals.begin(), vals.end(), rng);
    distinct.values().assign(vals.begin(), vals.end());
  }
  expect_grad<S>("max_pool2d", [](auto& v) { return max_pool2d(v[0], 2, 2); }, {distinct});
  expect_grad<S>("resize_bilinear", [](auto& v) { return resize_bilinear(v[0], 11, 9); }, {img});
  // Non-integer coordinates, some outside the image to exercise clamping.
  const Tensor<S> grid = random_tensor<S>({2, 4, 5, 2}, 31, S(-0.7), S(6.3));
  expect_grad<S>("grid_sample", [](auto& v) { return grid_sample(v[0], v[1]); }, {img, grid});
}

TEST_CASE_TEMPLATE("sequence primitives match finite differences", S, float, double) {
  const Tensor<S> x = random_tensor<S>({5, 8}, 41);
  expect_grad<S>("layer_norm", [](auto& v) { return layer_norm(v[0], v[1], v[2]); },
                 {x, random_tensor<S>({8}, 42), random_tensor<S>({8}, 43)});
  const Tensor<S> a = random_tensor<S>({6, 3, 4}, 44, S(0.2), S(0.95));
  const Tensor<S> b = random_tensor<S>({6, 3, 4}, 45);
  expect_grad<S>("linear_scan_fwd", [](auto& v) { return linear_scan(v[0], v[1], false); }, {a, b});
  expect_grad<S>("linear_scan_rev", [](auto& v) { return linear_scan(v[0], v[1], true); }, {a, b});
  expect_grad<S>("quat_to_rotmat", [](auto& v) { return quat_to_rotmat(v[0]); }, {random_tensor<S>({4}, 46)});
}

TEST_CASE("conv of zeros with zero bias is zero") {
  Var<float> x(Tensor<float>::zeros({1, 3, 8, 8}));
  std::mt19937_64 rng(1);
  Var<float> w(Tensor<float>::randn({5, 3, 3, 3}, rng));
  Var<float> b(Tensor<float>::zeros({5}));
  const Var<float> y = conv2d(x, w, b, Conv2dOptions::same(3, 2));
  CHECK(y.shape() == Shape{1, 5, 4, 4});
  CHECK(y.value().array().abs().maxCoeff() == 0.0f);
}

TEST_CASE("bilinear sampling at integer coordinates returns the source value") {
  const Tensor<float> img = random_tensor<float>({1, 2, 4, 5}, 3);
  Tensor<float> grid({1, 1, 3, 2}, std::vector<float>{0, 0, 2, 3, 3, 4});
  const Var<float> y = grid_sample(Var<float>(img), Var<float>(grid));
  for (int c = 0; c < 2; ++c) {
    CHECK(y.value()[c * 3 + 0] == img[c * 20 + 0]);
    CHECK(y.value()[c * 3 + 1] == img[c * 20 + 2 * 5 + 3]);
    CHECK(y.value()[c * 3 + 2] == img[c * 20 + 3 * 5 + 4]);
  }
}

TEST_CASE("shape mismatches name the offending op") {
  Var<float> a(Tensor<float>::zeros({2, 3}));
  Var<float> b(Tensor<float>::zeros({4, 5}));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_WITH_AS(conv2d(a, b, Var<float>()), doctest::Contains("conv2d"), ShapeError);
  CHECK_THROWS_WITH_AS(concat<float>({a, b}, 0), doctest::Contains("concat"), ShapeError);
}

TEST_CASE("linear scan matches a direct loop and is linear in its input") {
  const int L = 7, M = 3;
  const Tensor<double> a = random_tensor<double>({L, M}, 51, 0.1, 0.9);
  const Tensor<double> b1 = random_tensor<double>({L, M}, 52);
  const Tensor<double> b2 = random_tensor<double>({L, M}, 53);
  auto run = [&](const Tensor<double>& b) { return linear_scan(Var<double>(a), Var<double>(b)).value(); };
  const Tensor<double> h1 = run(b1);
  for (int m = 0; m < M; ++m) {
    double h = 0;
    for (int t = 0; t < L; ++t) {
      h = a[t * M + m] * h + b1[t * M + m];
      CHECK(h1[t * M + m] == doctest::Approx(h).epsilon(1e-12));
    }
  }
  Tensor<double> mix = b1;
  mix.array() = 2.0 * b1.array() - 3.0 * b2.array();
  const Tensor<double> h2 = run(b2);
  const Tensor<double> hm = run(mix);
  for (std::size_t i = 0; i < hm.size(); ++i) CHECK(hm[i] == doctest::Approx(2.0 * h1[i] - 3.0 * h2[i]).epsilon(1e-12));
}

TEST_CASE("forward passes are deterministic") {
  const Tensor<float> img = random_tensor<float>({1, 3, 8, 8}, 61);
  const Tensor<float> w = random_tensor<float>({4, 3, 3, 3}, 62);
  auto run = [&] { return tanh(conv2d(Var<float>(img), Var<float>(w), Var<float>(), Conv2dOptions::same(3))).value(); };
  CHECK(run() == run());
}

TEST_CASE("gradients accumulate across backward calls on leaves") {
  Var<double> x = Var<double>::parameter(Tensor<double>({2}, {1.0, 2.0}));
  sum(square(x)).backward();
  sum(square(x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad mode records no graph") {
  Var<float> x = Var<float>::parameter(Tensor<float>::ones({3}));
  NoGradGuard guard;
  const Var<float> y = sum(x * x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam minimizes a quadratic") {
  Var<float> x = Var<float>::parameter(Tensor<float>({3}, {3.0f, -2.0f, 1.0f}));
  Adam opt({x});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    sum(square(x)).backward();
    opt.step(0.05);
  }
  CHECK(x.value().array().abs().maxCoeff() < 1e-2f);
}

TEST_CASE("step decay halves on schedule") {
  StepDecay d{1e-4, 0.5, 20};
  CHECK(d.at(0) == doctest::Approx(1e-4));
  CHECK(d.at(19) == doctest::Approx(1e-4));
  CHECK(d.at(20) == doctest::Approx(5e-5));
  CHECK(d.at(45) == doctest::Approx(2.5e-5));
}

TEST_CASE("checkpoint round-trips bitwise and rejects bad files") {
  std::mt19937_64 rng(3);
  Conv2d<float> conv(3, 4, 3, 1, rng);
  Linear<float> fc(5, 2, rng);
  NamedParams<float> ps;
  conv.collect(ps, "conv");
  fc.collect(ps, "fc");
  const auto dir = std::filesystem::temp_directory_path() / "v2xcalib_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.ckpt";
  save_checkpoint(path, ps, R"({"stage":1})");

  const Checkpoint ck = read_checkpoint(path);
  CHECK(ck.metadata == R"({"stage":1})");
  std::mt19937_64 rng2(99);
  Conv2d<float> conv2(3, 4, 3, 1, rng2);
  Linear<float> fc2(5, 2, rng2);
  NamedParams<float> ps2;
  conv2.collect(ps2, "conv");
  fc2.collect(ps2, "fc");
  load_params(ck, ps2);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i].second.value() == ps2[i].second.value());

  Linear<float> wrong(6, 2, rng2);
  NamedParams<float> ps3;
  wrong.collect(ps3, "fc");
  CHECK_THROWS_AS(load_params(ck, ps3), CheckpointError);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 7);
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
  std::filesystem::remove_all(dir);
}
