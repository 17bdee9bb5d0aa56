#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "roadseg/model.hpp"
#include "roadseg/rng.hpp"
#include "roadseg/tape.hpp"
#include "testutil.hpp"

using namespace roadseg;
using testutil::grad_check;
using testutil::random_tensor;
using testutil::random_tensor_away_from_zero;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("d(x^2)/dx at x=3 is 6") {
  Tape<double> tape;
  auto x = tape.param("x", Tensor<double>::scalar(3.0));
  auto loss = tape.sum(tape.mul(x, x));
  CHECK(tape.value(loss).value() == doctest::Approx(9.0));
  const auto grads = tape.backward(loss);
  CHECK(grads.at("x")[0] == doctest::Approx(6.0));
}

TEST_CASE("kernel gradient of sum(conv2d(ones3x3, k2x2)) is 4 everywhere") {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>::full({3, 3, 1}, 1.0));
  auto k = tape.param("k", Tensor<double>::full({2, 2, 1, 1}, 1.0));
  auto b = tape.param("b", Tensor<double>({1}));
  auto loss = tape.sum(tape.conv2d(x, k, b, {}));
  const auto grads = tape.backward(loss);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(grads.at("k")[i] == doctest::Approx(4.0));
  CHECK(grads.at("b")[0] == doctest::Approx(4.0));  // 4 output pixels
}

TEST_CASE("gradient accumulation is additive across consumers") {
  Tape<double> tape;
  auto x = tape.param("x", Tensor<double>::scalar(1.5));
  auto loss = tape.sum(tape.add(x, x));  // x consumed twice
  const auto grads = tape.backward(loss);
  CHECK(grads.at("x")[0] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects invalid losses") {
  Tape<double> tape;
  auto v = tape.param("v", Tensor<double>({3}, {1.0, 2.0, 3.0}));
  CHECK_THROWS_AS(tape.backward(Val<double>{}), ShapeError);       // not on any tape
  CHECK_THROWS_AS(tape.backward(Val<double>{999}), ShapeError);    // unknown id
  CHECK_THROWS_AS(tape.backward(v), ShapeError);                   // non-scalar
}

TEST_CASE("unreached parameters get zero gradients") {
  Tape<double> tape;
  auto x = tape.param("x", Tensor<double>::scalar(2.0));
  tape.param("unused", Tensor<double>({4}, {1.0, 2.0, 3.0, 4.0}));
  auto loss = tape.sum(tape.mul(x, x));
  const auto grads = tape.backward(loss);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(grads.at("unused")[i] == 0.0);
}

TEST_CASE("tape replay is deterministic bit for bit") {
  Rng rng(55);
  auto x = random_tensor<double>({5, 6, 2}, rng);
  auto k = random_tensor<double>({3, 3, 2, 2}, rng);
  auto b = random_tensor<double>({2}, rng);
  auto run = [&] {
    Tape<double> tape;
    auto xv = tape.param("x", x);
    auto kv = tape.param("k", k);
    auto bv = tape.param("b", b);
    auto y = tape.activation(tape.conv2d(xv, kv, bv, {1, 1, 1, 1}), ops::Act::tanh);
    auto loss = tape.sum(y);
    auto grads = tape.backward(loss);
    return std::pair{tape.value(loss).value(), std::move(grads)};
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  CHECK(l1 == l2);
  for (const auto& [name, g] : g1) CHECK(g == g2.at(name));
}

TEST_CASE("finite differences: conv2d in all four encoder configurations") {
  // reduced channel counts, the exact kernel extents / strides / paddings
  struct Cfg {
    const char* name;
    int kh, kw, cin, cout, H, W;
    ops::Conv2dSpec spec;
  };
  const Cfg cfgs[] = {
      {"conv1", 11, 11, 2, 3, 16, 21, {5, 5, 3, 3}},
      {"conv2", 1, 1, 3, 2, 4, 5, {1, 1, 0, 0}},
      {"conv3", 5, 5, 2, 2, 7, 8, {2, 2, 2, 2}},
      {"conv4", 15, 1, 2, 3, 15, 4, {1, 1, 0, 0}},
  };
  Rng rng(29);
  for (const Cfg& c : cfgs) {
    CAPTURE(c.name);
    std::map<std::string, Tensor<double>> inputs;
    inputs["x"] = random_tensor<double>({c.H, c.W, c.cin}, rng);
    inputs["k"] = random_tensor<double>({c.kh, c.kw, c.cin, c.cout}, rng);
    inputs["b"] = random_tensor<double>({c.cout}, rng);
    const int oh = ops::conv_out_extent(c.H, c.kh, c.spec.sh, c.spec.ph);
    const int ow = ops::conv_out_extent(c.W, c.kw, c.spec.sw, c.spec.pw);
    const auto w = random_tensor<double>({oh, ow, c.cout}, rng);
    const double err = grad_check<double>(
        inputs, [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
          return t.sum(t.mul(t.conv2d(v.at("x"), v.at("k"), v.at("b"), c.spec), t.input(w)));
        });
    CHECK(err < kTol);
  }
}

TEST_CASE("finite differences: dense, linear, matmul") {
  Rng rng(31);
  std::map<std::string, Tensor<double>> inputs;
  inputs["x"] = random_tensor<double>({5}, rng);
  inputs["w"] = random_tensor<double>({5, 4}, rng);
  inputs["b"] = random_tensor<double>({4}, rng);
  const auto wy = random_tensor<double>({4}, rng);
  CHECK(grad_check<double>(inputs,
                           [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
                             return t.sum(t.mul(t.dense(v.at("x"), v.at("w"), v.at("b")),
                                                t.input(wy)));
                           }) < kTol);
  CHECK(grad_check<double>(inputs,
                           [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
                             return t.sum(t.mul(t.linear(v.at("x"), v.at("w")), t.input(wy)));
                           }) < kTol);

  std::map<std::string, Tensor<double>> mm;
  mm["a"] = random_tensor<double>({3, 5}, rng);
  mm["b"] = random_tensor<double>({5, 4}, rng);
  const auto wm = random_tensor<double>({3, 4}, rng);
  CHECK(grad_check<double>(mm,
                           [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
                             return t.sum(t.mul(t.matmul(v.at("a"), v.at("b")), t.input(wm)));
                           }) < kTol);
}

TEST_CASE("finite differences: activations") {
  Rng rng(37);
  for (ops::Act act : {ops::Act::sigmoid, ops::Act::tanh, ops::Act::relu}) {
    std::map<std::string, Tensor<double>> inputs;
    // keep relu probes away from its kink
    inputs["x"] = act == ops::Act::relu ? random_tensor_away_from_zero<double>({4, 5}, rng)
                                        : random_tensor<double>({4, 5}, rng, -2.0, 2.0);
    const auto w = random_tensor<double>({4, 5}, rng);
    CHECK(grad_check<double>(inputs,
                             [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
                               return t.sum(t.mul(t.activation(v.at("x"), act), t.input(w)));
                             }) < kTol);
  }
}

TEST_CASE("finite differences: elementwise, concat, row, stack, reshape, add_rowvec") {
  Rng rng(41);
  std::map<std::string, Tensor<double>> inputs;
  inputs["a"] = random_tensor<double>({3, 4}, rng);
  inputs["b"] = random_tensor<double>({3, 4}, rng);
  inputs["v"] = random_tensor<double>({4}, rng);
  const auto w34 = random_tensor<double>({3, 4}, rng);
  const auto w4 = random_tensor<double>({4}, rng);
  const auto w8 = random_tensor<double>({8}, rng);
  const auto w24 = random_tensor<double>({2, 4}, rng);
  const auto w12 = random_tensor<double>({12}, rng);

  auto check = [&](auto build) { CHECK(grad_check<double>(inputs, build) < kTol); };

  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    return t.sum(t.mul(t.add(v.at("a"), v.at("b")), t.input(w34)));
  });
  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    return t.sum(t.mul(t.sub(v.at("a"), v.at("b")), t.input(w34)));
  });
  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    return t.sum(t.mul(t.mul(v.at("a"), v.at("b")), t.input(w34)));
  });
  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    return t.sum(t.mul(t.affine(v.at("a"), -2.5, 0.75), t.input(w34)));
  });
  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    return t.sum(t.mul(t.add_rowvec(v.at("a"), v.at("v")), t.input(w34)));
  });
  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    return t.sum(t.mul(t.concat(t.row(v.at("a"), 1), t.row(v.at("b"), 2)), t.input(w8)));
  });
  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    std::vector<Val<double>> rows{t.row(v.at("a"), 0), t.row(v.at("b"), 1)};
    return t.sum(t.mul(t.stack_rows(rows), t.input(w24)));
  });
  check([&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
    return t.sum(t.mul(t.reshape(v.at("a"), {12}), t.input(w12)));
  });
}

TEST_CASE("finite differences: abs away from the kink") {
  Rng rng(43);
  std::map<std::string, Tensor<double>> inputs;
  inputs["x"] = random_tensor_away_from_zero<double>({6}, rng);
  const auto w = random_tensor<double>({6}, rng);
  CHECK(grad_check<double>(inputs,
                           [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
                             return t.sum(t.mul(t.abs(v.at("x")), t.input(w)));
                           }) < kTol);
}

TEST_CASE("finite differences: upsample_linear_1d") {
  Rng rng(47);
  std::map<std::string, Tensor<double>> inputs;
  inputs["x"] = random_tensor<double>({6}, rng);
  const auto w = random_tensor<double>({17}, rng);
  CHECK(grad_check<double>(inputs,
                           [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
                             return t.sum(t.mul(t.upsample_linear_1d(v.at("x"), 17), t.input(w)));
                           }) < kTol);
}

TEST_CASE("finite differences: gru_step chained over 5 steps") {
  // reduced dimensions; the cell equations are dimension-generic
  const int nx = 6, nh = 4, steps = 5;
  Rng rng(53);
  std::map<std::string, Tensor<double>> inputs;
  for (const char* n : {"Wz", "Wr", "Wh"}) inputs[n] = random_tensor<double>({nx, nh}, rng);
  for (const char* n : {"Uz", "Ur", "Uh"}) inputs[n] = random_tensor<double>({nh, nh}, rng);
  for (const char* n : {"bz", "br", "bh"}) inputs[n] = random_tensor<double>({nh}, rng);
  std::vector<Tensor<double>> xs;
  for (int s = 0; s < steps; ++s) xs.push_back(random_tensor<double>({nx}, rng));
  const auto w = random_tensor<double>({nh}, rng);

  const double err = grad_check<double>(
      inputs, [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
        GruCellVals<double> cell{v.at("Wz"), v.at("Wr"), v.at("Wh"), v.at("Uz"), v.at("Ur"),
                                 v.at("Uh"), v.at("bz"), v.at("br"), v.at("bh")};
        Val<double> h = t.input(Tensor<double>({nh}));
        for (int s = 0; s < steps; ++s) h = gru_step(t, t.input(xs[static_cast<std::size_t>(s)]), h, cell);
        return t.sum(t.mul(h, t.input(w)));
      });
  CHECK(err < kTol);
}

TEST_CASE("finite differences: decoder") {
  Rng rng(59);
  std::map<std::string, Tensor<double>> inputs;
  inputs["w1"] = random_tensor<double>({8, 6}, rng);
  inputs["b1"] = random_tensor<double>({6}, rng);
  inputs["w2"] = random_tensor<double>({6, 2}, rng);
  inputs["b2"] = random_tensor<double>({2}, rng);
  inputs["ctx"] = random_tensor<double>({8}, rng);
  const auto w = random_tensor<double>({2}, rng);
  const double err = grad_check<double>(
      inputs, [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
        DecoderVals<double> d{v.at("w1"), v.at("b1"), v.at("w2"), v.at("b2")};
        return t.sum(t.mul(decode(t, v.at("ctx"), d), t.input(w)));
      });
  CHECK(err < kTol);
}

TEST_CASE("finite differences: mae loss composite") {
  Rng rng(61);
  std::map<std::string, Tensor<double>> inputs;
  // keep |pred - target| away from the abs kink
  inputs["pred"] = random_tensor<double>({62}, rng, 0.3, 0.5);
  const auto target = random_tensor<double>({62}, rng, 0.0, 0.2);
  const double err = grad_check<double>(
      inputs, [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
        auto diff = t.abs(t.sub(v.at("pred"), t.input(target)));
        return t.affine(t.sum(diff), 1.0 / 62.0, 0.0);
      });
  CHECK(err < kTol);
}

TEST_CASE("random small-tensor gradient sweep across composed ops") {
  Rng rng(67);
  for (int trial = 0; trial < 5; ++trial) {
    std::map<std::string, Tensor<double>> inputs;
    inputs["x"] = random_tensor<double>({4, 3}, rng);
    inputs["w"] = random_tensor<double>({3, 3}, rng);
    const auto mask = random_tensor<double>({4, 3}, rng);
    const double err = grad_check<double>(
        inputs, [&](Tape<double>& t, const std::map<std::string, Val<double>>& v) {
          auto h = t.activation(t.matmul(v.at("x"), v.at("w")), ops::Act::tanh);
          auto g = t.activation(h, ops::Act::sigmoid);
          return t.sum(t.mul(g, t.input(mask)));
        });
    CHECK(err < kTol);
  }
}
