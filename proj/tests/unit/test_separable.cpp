#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hjsynth/separable.hpp"

#include <cmath>
#include <random>

using namespace hjsynth;

TEST_CASE("factor evaluation") {
    CHECK(eval_factor(Factor1D::monomial(3), 2.0) == doctest::Approx(8.0));
    CHECK(eval_factor(Factor1D::scaled_exponential(1.5, -0.1, 1), 0.0) == doctest::Approx(0.0));
    CHECK(eval_factor(Factor1D::scaled_exponential(1.5, -0.1, 1), 1.0) ==
          doctest::Approx(1.5 * std::exp(-0.1)));
    CHECK(eval_factor(Factor1D::constant(0.2), 7.0) == doctest::Approx(0.2));
    CHECK(eval_factor(Factor1D::custom([](double x) { return std::sin(x); }), 1.0) ==
          doctest::Approx(std::sin(1.0)));
}

TEST_CASE("interval invariants") {
    CHECK_THROWS_AS(Interval(1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(Interval(2.0, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(Hyperrectangle(std::vector<Interval>{}), std::invalid_argument);
}

TEST_CASE("separable evaluation") {
    SeparableScalar s(2);
    s.add_term({Factor1D::monomial(1), Factor1D::monomial(1)});
    Eigen::VectorXd x(2);
    x << 3.0, 4.0;
    CHECK(eval_separable(s, x) == doctest::Approx(12.0));

    Eigen::VectorXd bad(3);
    CHECK_THROWS_AS(eval_separable(s, bad), std::invalid_argument);

    SeparableScalar e(1);
    e.add_term({Factor1D::scaled_exponential(1.5, -0.1, 1)});
    Eigen::VectorXd one(1);
    one << 1.0;
    CHECK(eval_separable(e, one) == doctest::Approx(1.5 * std::exp(-0.1)));
}

TEST_CASE("separable equals closed form on random points") {
    // f(x) = x1 x2 + 0.5 x2^2 e^{x2} - 2 x1^3
    SeparableScalar s(2);
    s.add_term({Factor1D::monomial(1), Factor1D::monomial(1)});
    s.add_term({Factor1D::constant(1.0), Factor1D::scaled_exponential(0.5, 1.0, 2)});
    s.add_term({Factor1D::scaled_monomial(-2.0, 3), Factor1D::constant(1.0)});
    auto dense = [](double x1, double x2) {
        return x1 * x2 + 0.5 * x2 * x2 * std::exp(x2) - 2.0 * x1 * x1 * x1;
    };
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int k = 0; k < 100; ++k) {
        Eigen::VectorXd x(2);
        x << dist(rng), dist(rng);
        const double expected = dense(x[0], x[1]);
        CHECK(eval_separable(s, x) ==
              doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("gauss-legendre rules") {
    const Interval unit(-1.0, 1.0);
    SUBCASE("order 1 is the midpoint rule") {
        const auto q = gauss_legendre(1, unit);
        REQUIRE(q.nodes.size() == 1);
        CHECK(q.nodes[0] == doctest::Approx(0.0));
        CHECK(q.weights[0] == doctest::Approx(2.0));
    }
    SUBCASE("order 2 nodes and weights") {
        const auto q = gauss_legendre(2, unit);
        CHECK(q.nodes[0] == doctest::Approx(-1.0 / std::sqrt(3.0)));
        CHECK(q.nodes[1] == doctest::Approx(1.0 / std::sqrt(3.0)));
        CHECK(q.weights[0] == doctest::Approx(1.0));
        CHECK(q.weights[1] == doctest::Approx(1.0));
    }
    SUBCASE("x^2 integrates exactly with order 2") {
        const auto q = gauss_legendre(2, unit);
        double sum = 0;
        for (size_t k = 0; k < q.nodes.size(); ++k) sum += q.weights[k] * q.nodes[k] * q.nodes[k];
        CHECK(sum == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    }
    SUBCASE("polynomial exactness up to degree 2n-1") {
        for (int order = 1; order <= 8; ++order) {
            const auto q = gauss_legendre(order, Interval(-0.5, 1.5));
            for (int deg = 0; deg <= 2 * order - 1; ++deg) {
                double sum = 0;
                for (size_t k = 0; k < q.nodes.size(); ++k)
                    sum += q.weights[k] * ipow(q.nodes[k], deg);
                const double exact =
                    (ipow(1.5, deg + 1) - ipow(-0.5, deg + 1)) / (deg + 1);
                CHECK(std::abs(sum - exact) < 1e-13 * (1.0 + std::abs(exact)));
            }
        }
    }
    SUBCASE("nodes inside the mapped interval, weights positive") {
        const auto q = gauss_legendre(9, Interval(0.25, 3.0));
        for (size_t k = 0; k < q.nodes.size(); ++k) {
            CHECK(q.nodes[k] > 0.25);
            CHECK(q.nodes[k] < 3.0);
            CHECK(q.weights[k] > 0.0);
        }
    }
}

TEST_CASE("integrate_factor_product") {
    const Interval unit(-1.0, 1.0);
    const auto q = gauss_legendre(16, unit);
    SUBCASE("x * x") {
        const double v =
            integrate_factor_product({Factor1D::monomial(1), Factor1D::monomial(1)}, unit, q);
        CHECK(v == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    }
    SUBCASE("odd integrand vanishes") {
        const double v = integrate_factor_product({Factor1D::monomial(1)}, unit, q);
        CHECK(std::abs(v) < 1e-15);
    }
    SUBCASE("x^2 e^x against the antiderivative (x^2-2x+2)e^x") {
        const double v = integrate_factor_product(
            {Factor1D::monomial(2), Factor1D::scaled_exponential(1.0, 1.0, 0)}, unit, q);
        const double exact = std::exp(1.0) - 5.0 / std::exp(1.0);
        CHECK(v == doctest::Approx(exact).epsilon(1e-12));
    }
    SUBCASE("linear in a constant prefactor") {
        auto value = [&](double a) {
            return integrate_factor_product(
                {Factor1D::scaled_exponential(a, 0.3, 2), Factor1D::monomial(1)}, unit, q);
        };
        CHECK(value(3.0) == doctest::Approx(3.0 * value(1.0)).epsilon(1e-12));
        CHECK(value(-2.0) == doctest::Approx(-2.0 * value(1.0)).epsilon(1e-12));
    }
    SUBCASE("non-finite factor value raises") {
        const auto bad = Factor1D::custom([](double) { return std::nan(""); });
        CHECK_THROWS_AS(integrate_factor_product({bad}, unit, q), std::runtime_error);
    }
}

TEST_CASE("separable map shapes") {
    Eigen::VectorXd b(3);
    b << 0.0, 1.0, 2.0;
    const auto m = SeparableMap::constant_column(3, b);
    CHECK(m.out_rows == 3);
    CHECK(m.out_cols == 1);
    Eigen::VectorXd x = Eigen::VectorXd::Constant(3, 0.7);
    CHECK((m.eval(x) - b).norm() == doctest::Approx(0.0));
    CHECK_FALSE(m.is_structurally_zero());
    CHECK(SeparableMap::zero(3, 3, 1).is_structurally_zero());
}
