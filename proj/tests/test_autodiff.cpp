#include <cmath>

#include <gtest/gtest.h>

#include "racestrat/autodiff.hpp"

using racestrat::ad::Dual;

namespace {

template <typename T>
T f(const T& x, const T& y) {
    using std::exp;
    using std::sin;
    using std::sqrt;
    using std::tanh;
    return sin(x) * exp(y) / (1.0 + x * x) + sqrt(2.0 + y) - tanh(x * y);
}

double fd(double x, double y, int dir) {
    const double h = 1e-6;
    return dir == 0 ? (f(x + h, y) - f(x - h, y)) / (2 * h) : (f(x, y + h) - f(x, y - h)) / (2 * h);
}

}  // namespace

TEST(Autodiff, GradientMatchesCentralDifferences) {
    for (double x : {-1.3, 0.2, 0.9}) {
        for (double y : {-0.7, 0.4, 1.5}) {
            const auto r = f(Dual<double, 2>::variable(x, 0), Dual<double, 2>::variable(y, 1));
            EXPECT_NEAR(r.val, f(x, y), 1e-15);
            EXPECT_NEAR(r.grad[0], fd(x, y, 0), 1e-8);
            EXPECT_NEAR(r.grad[1], fd(x, y, 1), 1e-8);
        }
    }
}

TEST(Autodiff, NestedDualGivesSymmetricHessian) {
    using D1 = Dual<double, 2>;
    using D2 = Dual<D1, 2>;
    const double x = 0.3, y = 0.8;
    D2 a, b;
    a.val = D1::variable(x, 0);
    a.grad[0] = D1(1.0);
    b.val = D1::variable(y, 1);
    b.grad[1] = D1(1.0);
    const auto r = f(a, b);
    const double h = 1e-4;
    auto fxy = [&](double dx, double dy) { return f(x + dx, y + dy); };
    const double hxx = (fxy(h, 0) - 2 * fxy(0, 0) + fxy(-h, 0)) / (h * h);
    const double hxy = (fxy(h, h) - fxy(h, -h) - fxy(-h, h) + fxy(-h, -h)) / (4 * h * h);
    EXPECT_NEAR(r.grad[0].grad[0], hxx, 1e-5);
    EXPECT_NEAR(r.grad[0].grad[1], hxy, 1e-5);
    EXPECT_DOUBLE_EQ(r.grad[0].grad[1], r.grad[1].grad[0]);
}
