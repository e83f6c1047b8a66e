#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "saanet/grad_check.hpp"
#include "saanet/ops.hpp"
#include "saanet/rng.hpp"
#include "saanet/tensor_io.hpp"

using namespace saanet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
}

void check_values(const Tensor& t, std::initializer_list<double> expect, double tol = 1e-6) {
    REQUIRE(t.numel() == expect.size());
    std::size_t i = 0;
    for (double e : expect) CHECK(t[i++] == doctest::Approx(e).epsilon(tol));
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
    Tensor t({2, 3}, Real(1.5));
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == Real(1.5));
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<Real>(3)), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{0, 2}), DimensionError);
    CHECK_THROWS_AS(t.item(), ContractError);
    CHECK(to_string(t.shape()) == "[2x3]");
}

TEST_CASE("matmul") {
    check_values(matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2, 2}, {2, 3, 4, 5})), {2, 3, 4, 5});
    check_values(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})), {11});
    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient of sum matches central differences") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    const auto r = grad_check([&] { return sum_all(matmul(a, b)); }, {a, b}, 1e-3, 1e-4);
    CHECK(r.max_abs < 1e-4);
}

TEST_CASE("softmax") {
    check_values(softmax(Tensor::from({2}, {0, 0}), 0), {0.5, 0.5});
    check_values(softmax(Tensor::from({3}, {1000, 1000, 1000}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3});
    // extended-precision oracle for [1, 2, 3]
    const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), s = e1 + e2 + e3;
    const Tensor y = softmax(Tensor::from({3}, {1, 2, 3}), 0);
    CHECK(std::abs(y[0] - static_cast<double>(e1 / s)) < 1e-6);
    CHECK(std::abs(y[1] - static_cast<double>(e2 / s)) < 1e-6);
    CHECK(std::abs(y[2] - static_cast<double>(e3 / s)) < 1e-6);

    Rng rng(3);
    const Tensor x = random_tensor({5, 7, 4}, rng, -50, 50);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const Tensor p = softmax(x, axis);
        const Tensor total = sum(p, axis);
        for (Real v : total.data()) CHECK(std::abs(v - 1) <= 1e-6);
        for (Real v : p.data()) CHECK(v >= 0);
    }
}

TEST_CASE("conv2d") {
    const Tensor y = conv2d(Tensor({1, 3, 3}, Real(1)), Tensor({1, 1, 3, 3}, Real(1)), Tensor(), {1, 1, 1});
    CHECK(y.at({0, 1, 1}) == 9);
    CHECK(y.at({0, 0, 0}) == 4);
    CHECK(y.at({0, 0, 1}) == 6);

    const Tensor big = conv2d(Tensor({1, 224, 224}), Tensor({1, 1, 7, 7}), Tensor(), {4, 3, 1});
    CHECK(big.shape() == Shape{1, 56, 56});

    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 5, 5}), Tensor(), {1, 0, 1}), ConfigError);
    CHECK_THROWS_AS(conv2d(Tensor({3, 4, 4}), Tensor({2, 1, 3, 3}), Tensor(), {1, 1, 2}), ConfigError);
}

TEST_CASE("conv2d weight gradient matches central differences") {
    Rng rng(5);
    Tensor x = random_tensor({2, 5, 4}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    const auto r = grad_check([&] { return sum_all(square(conv2d(x, w, b, {2, 1, 1}))); }, {w}, 1e-2, 1e-3);
    CHECK(r.max_rel < 1e-3);
}

TEST_CASE("grad_check reports") {
    Tensor x = Tensor::from({3}, {0.3f, -0.7f, 2.0f});
    const auto r = grad_check([](const Tensor& t) { return sum_all(t); }, x, 1e-3, 1e-3);
    CHECK(r.passed);
    CHECK(r.max_abs < 1e-3);

    Tensor y = Tensor::from({2}, {1, 2});
    const auto q = grad_check([](const Tensor& t) { return sum_all(square(t)); }, y, 1e-2, 1e-2);
    CHECK(q.passed);
    CHECK(q.checked == 2);

    CHECK_THROWS_AS(grad_check([](const Tensor& t) { return t; }, Tensor::from({2}, {1, 2}), 1e-3, 1e-3), ContractError);
}

TEST_CASE("backward populates leaf gradients") {
    Tensor a = Tensor::from({2}, {1, 2});
    a.set_requires_grad();
    backward(sum_all(square(a)));
    check_values(a.grad(), {2, 4});
    CHECK(Tape::current().size() == 0);

    // accumulation across two passes, then reset
    backward(sum_all(square(a)));
    check_values(a.grad(), {4, 8});
    a.zero_grad();
    backward(sum_all(square(a)));
    check_values(a.grad(), {2, 4});
    CHECK_THROWS_AS(backward(square(a)), ContractError);
}

TEST_CASE("tape visits every node once") {
    Tensor a = Tensor::from({2}, {1, 2});
    a.set_requires_grad();
    const Tensor b = mul(a, a);
    const Tensor c = add(b, a);
    const Tensor d = sum_all(c);
    const std::size_t recorded = Tape::current().size();
    CHECK(recorded >= 3);
    backward(d);
    CHECK(Tape::current().last_visit_count() == recorded);
}

TEST_CASE("no-grad guard suppresses recording") {
    Tensor a = Tensor::from({2}, {1, 2});
    a.set_requires_grad();
    {
        NoGradGuard g;
        const Tensor b = square(a);
        CHECK_FALSE(b.requires_grad());
        CHECK(Tape::current().size() == 0);
    }
    CHECK(grad_enabled());
}

TEST_CASE("broadcasting is limited to trailing extents and scalars") {
    const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    check_values(add(x, Tensor::from({3}, {10, 20, 30})), {11, 22, 33, 14, 25, 36});
    check_values(mul(x, Tensor::scalar(2)), {2, 4, 6, 8, 10, 12});
    check_values(mul(Tensor::scalar(2), x), {2, 4, 6, 8, 10, 12});
    CHECK_THROWS_AS(add(x, Tensor::from({2}, {1, 2})), DimensionError);
    CHECK_THROWS_AS(add(x, Tensor({2, 1})), DimensionError);
}

TEST_CASE("reshape and transpose round trip") {
    Rng rng(8);
    const Tensor x = random_tensor({4, 6}, rng);
    const Tensor back = transpose(transpose(x));
    const Tensor flat = reshape(reshape(x, {24}), {4, 6});
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(back[i] == x[i]);
        CHECK(flat[i] == x[i]);
    }
    CHECK(transpose(x).at({5, 3}) == x.at({3, 5}));
    CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);
}

TEST_CASE("concat, slice, reductions") {
    const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}), b = Tensor::from({1, 2}, {5, 6});
    const std::vector<Tensor> parts{a, b};
    const Tensor c = concat(parts, 0);
    check_values(c, {1, 2, 3, 4, 5, 6});
    check_values(slice(c, 0, 1, 2), {3, 4, 5, 6});
    check_values(slice(c, 1, 1, 1), {2, 4, 6});
    check_values(sum(c, 0), {9, 12});
    check_values(mean(c, 1), {1.5, 3.5, 5.5});
    check_values(mean_all(c), {3.5});
    CHECK_THROWS_AS(slice(c, 0, 2, 2), DimensionError);
}

TEST_CASE("layer norm, activations, embedding") {
    const Tensor x = Tensor::from({1, 4}, {1, 2, 3, 4});
    const Tensor y = layer_norm(x, Tensor({4}, Real(1)), Tensor({4}));
    double m = 0, v = 0;
    for (Real e : y.data()) m += e;
    for (Real e : y.data()) v += e * e;
    CHECK(std::abs(m) < 1e-5);
    CHECK(v / 4 == doctest::Approx(1.0).epsilon(1e-4));

    // tanh-GELU reference values
    const Tensor g = gelu(Tensor::from({3}, {-1, 0, 1}));
    CHECK(g[0] == doctest::Approx(-0.158808).epsilon(1e-5));
    CHECK(g[1] == 0);
    CHECK(g[2] == doctest::Approx(0.841192).epsilon(1e-5));
    check_values(relu(Tensor::from({2}, {-1, 2})), {0, 2});
    check_values(softplus(Tensor::from({1}, {0})), {std::log(2.0)});
    check_values(abs(Tensor::from({2}, {-3, 2})), {3, 2});

    const Tensor table = Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21});
    const std::vector<std::size_t> idx{2, 0, 2};
    check_values(embedding(table, idx), {20, 21, 0, 1, 20, 21});
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(embedding(table, bad), DimensionError);
}

TEST_CASE("two backward passes give identical gradients") {
    Rng rng(21);
    Tensor w = random_tensor({4, 3}, rng);
    w.set_requires_grad();
    const Tensor x = random_tensor({5, 4}, rng);
    auto run = [&] {
        w.zero_grad();
        backward(sum_all(gelu(layer_norm(matmul(x, w), Tensor({3}, Real(1)), Tensor({3})))));
        auto g = w.grad_data();
        return std::vector<Real>(g.begin(), g.end());
    };
    CHECK(run() == run());
}

TEST_CASE("SAAT round trip and format") {
    const Tensor t = Tensor::from({2, 3}, {1, -2, 3.5f, 0, 1e-3f, 7});
    std::stringstream ss;
    write_saat(ss, t);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 1 + 1 + 2 * 8 + 6 * 4);
    CHECK(bytes.substr(0, 4) == "SAAT");
    CHECK(static_cast<unsigned char>(bytes[4]) == kSaatVersion);
    CHECK(static_cast<unsigned char>(bytes[5]) == 2);
    CHECK(static_cast<unsigned char>(bytes[6]) == 2);   // extent 0, little-endian low byte
    CHECK(static_cast<unsigned char>(bytes[14]) == 3);  // extent 1
    // 1.0f little-endian: 00 00 80 3f
    CHECK(static_cast<unsigned char>(bytes[22]) == 0x00);
    CHECK(static_cast<unsigned char>(bytes[25]) == 0x3f);

    const Tensor back = read_saat(ss);
    CHECK(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);

    std::stringstream bad("SAAX....");
    CHECK_THROWS_AS(read_saat(bad), FormatError);

    const auto path = std::filesystem::temp_directory_path() / "saanet_unit_multi.saat";
    save_tensors(path, {{"a", t}, {"b", Tensor::scalar(4)}});
    const auto all = load_tensors(path);
    REQUIRE(all.size() == 2);
    CHECK(all[1].item() == 4);
    std::filesystem::remove(path);
}
