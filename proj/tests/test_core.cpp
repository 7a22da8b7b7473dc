#include <cmath>
#include <cstdint>
#include <set>

#include "doctest.h"
#include "msgode/errors.hpp"
#include "msgode/rng.hpp"
#include "msgode/tensor.hpp"
#include "test_util.hpp"

using namespace msgode;

TEST_SUITE("core") {

TEST_CASE("splitmix64 matches the reference stream") {
    // first three outputs of the splitmix64 generator seeded with 0
    CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
    std::uint64_t s1 = 0x9E3779B97F4A7C15ULL;
    CHECK(splitmix64(s1) == 0x6E789E6AA1B965F4ULL);
}

TEST_CASE("derive_seed is deterministic and path-sensitive") {
    CHECK(derive_seed(7, {1, 2}) == derive_seed(7, {1, 2}));
    CHECK(derive_seed(7, {1, 2}) != derive_seed(7, {2, 1}));
    CHECK(derive_seed(7, {1, 2}) != derive_seed(7, {1}));
    CHECK(derive_seed(7, {1}) != derive_seed(8, {1}));
    CHECK(derive_seed(7, {seed_tag::kSystem, 0}) !=
          derive_seed(7, {seed_tag::kSystem, 1}));
}

TEST_CASE("rng streams are reproducible and seed-dependent") {
    Rng a(123), b(123), c(124);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        std::uint64_t x = a.next_u64();
        all_equal = all_equal && (x == b.next_u64());
        any_diff = any_diff || (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform stays in range with the expected mean") {
    Rng rng(7);
    const int n = 20000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    double mean = sum / n;
    double three_sigma = 3.0 / std::sqrt(12.0 * n);
    CHECK(std::abs(mean - 0.5) < three_sigma);

    double lo = rng.uniform(-2.0, 5.0);
    CHECK(lo >= -2.0);
    CHECK(lo < 5.0);
}

TEST_CASE("uniform_int covers the range uniformly") {
    Rng rng(99);
    std::set<std::uint64_t> seen;
    int counts[6] = {0};
    const int n = 6000;
    for (int i = 0; i < n; ++i) {
        std::uint64_t k = rng.uniform_int(6);
        REQUIRE(k < 6);
        seen.insert(k);
        counts[k]++;
    }
    CHECK(seen.size() == 6);
    for (int k = 0; k < 6; ++k) {
        // 3 sigma for binomial(n, 1/6)
        CHECK(std::abs(counts[k] - n / 6.0) < 3.0 * std::sqrt(n * (1.0 / 6.0) * (5.0 / 6.0)));
    }
}

TEST_CASE("bernoulli frequency matches p") {
    Rng rng(5);
    const int n = 20000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3) ? 1 : 0;
    double freq = static_cast<double>(hits) / n;
    CHECK(std::abs(freq - 0.3) < 3.0 * std::sqrt(0.3 * 0.7 / n));
}

TEST_CASE("normal has standard moments") {
    Rng rng(11);
    const int n = 20000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    double mean = s / n;
    double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    // var of sample variance of a normal is ~2/n
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("tensor ranks, shapes and accessors") {
    Tensor s = Tensor::scalar(3.5);
    CHECK(s.rank() == 0);
    CHECK(s.value() == 3.5);
    CHECK(s.shape().empty());

    Vector v(3);
    v << 1, 2, 3;
    Tensor t = Tensor::from_vector(v);
    CHECK(t.rank() == 1);
    CHECK(t.shape() == std::vector<Eigen::Index>{3});
    CHECK(t[1] == 2.0);

    Tensor m = Tensor::zeros(2, 4);
    CHECK(m.rank() == 2);
    CHECK(m.shape() == std::vector<Eigen::Index>{2, 4});
    m(1, 3) = 7.0;
    CHECK(m(1, 3) == 7.0);

    CHECK(Tensor::zeros_like(t).rank() == 1);
    CHECK(!t.same_shape(m));
    CHECK(t.same_shape(Tensor::zero_vector(3)));
    // same storage shape but different rank is not the same shape
    CHECK(!Tensor::from_vector(Vector::Zero(1)).same_shape(Tensor::scalar(0.0)));
}

TEST_CASE("tensor arithmetic and finiteness checks") {
    Tensor a = Tensor::zeros(2, 2), b = Tensor::zeros(2, 2);
    a(0, 0) = 1;
    b(0, 0) = 2;
    CHECK((a + b)(0, 0) == 3.0);
    CHECK((a - b)(0, 0) == -1.0);
    CHECK((2.0 * a)(0, 0) == 2.0);
    CHECK((a * 2.0)(0, 0) == 2.0);
    CHECK_THROWS_AS(a + Tensor::zeros(2, 3), NumericError);

    a(1, 1) = std::nan("");
    CHECK(!a.all_finite());
    CHECK_THROWS_WITH_AS(a.check_finite("decoder"),
                         "non-finite values in decoder", NumericError);
    CHECK(b.all_finite());
}

TEST_CASE("error hierarchy carries messages") {
    CHECK_THROWS_WITH_AS(throw ConfigError("bad field"), "bad field", ConfigError);
    ConfigError c("x");
    DataError d("y");
    NumericError n("z");
    CHECK(dynamic_cast<std::runtime_error*>(&c) != nullptr);
    CHECK(dynamic_cast<std::runtime_error*>(&d) != nullptr);
    CHECK(dynamic_cast<std::runtime_error*>(&n) != nullptr);
}

}  // TEST_SUITE
