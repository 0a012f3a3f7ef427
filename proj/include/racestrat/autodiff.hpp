#pragma once

// Forward-mode automatic differentiation with fixed-width gradients.
//
// Dual<T, N> carries a value and N directional derivatives. Nesting
// (Dual<Dual<double, N>, N>) yields exact second derivatives in a single
// evaluation, which is how the transcription computes Lagrangian Hessians of
// its small per-node model functions.

#include <array>
#include <cmath>
#include <type_traits>

namespace racestrat::ad {

template <typename T, int N>
struct Dual {
    T val{};
    std::array<T, N> grad{};

    constexpr Dual() = default;
    constexpr Dual(double v) : val(v) {}  // NOLINT: implicit lift of constants
    Dual(const T& v, const std::array<T, N>& g) : val(v), grad(g) {}

    /// Independent variable `v` seeded with unit derivative in slot `i`.
    static Dual variable(const T& v, int i) {
        Dual d(v, {});
        d.grad[static_cast<std::size_t>(i)] = T(1.0);
        return d;
    }

    Dual& operator+=(const Dual& o) { return *this = *this + o; }
    Dual& operator-=(const Dual& o) { return *this = *this - o; }
    Dual& operator*=(const Dual& o) { return *this = *this * o; }
    Dual& operator/=(const Dual& o) { return *this = *this / o; }
};

template <typename>
struct is_dual : std::false_type {};
template <typename T, int N>
struct is_dual<Dual<T, N>> : std::true_type {};

/// Innermost primal value of a (possibly nested) dual number.
inline double value_of(double x) { return x; }
template <typename T, int N>
double value_of(const Dual<T, N>& x) {
    return value_of(x.val);
}

// Chain rule helper: result value f, derivative factor df.
template <typename T, int N>
Dual<T, N> chain(const Dual<T, N>& a, const T& f, const T& df) {
    Dual<T, N> r;
    r.val = f;
    for (int i = 0; i < N; ++i) r.grad[i] = a.grad[i] * df;
    return r;
}

template <typename T, int N>
Dual<T, N> operator+(const Dual<T, N>& a, const Dual<T, N>& b) {
    Dual<T, N> r;
    r.val = a.val + b.val;
    for (int i = 0; i < N; ++i) r.grad[i] = a.grad[i] + b.grad[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator-(const Dual<T, N>& a, const Dual<T, N>& b) {
    Dual<T, N> r;
    r.val = a.val - b.val;
    for (int i = 0; i < N; ++i) r.grad[i] = a.grad[i] - b.grad[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator-(const Dual<T, N>& a) {
    Dual<T, N> r;
    r.val = -a.val;
    for (int i = 0; i < N; ++i) r.grad[i] = -a.grad[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator*(const Dual<T, N>& a, const Dual<T, N>& b) {
    Dual<T, N> r;
    r.val = a.val * b.val;
    for (int i = 0; i < N; ++i) r.grad[i] = a.grad[i] * b.val + a.val * b.grad[i];
    return r;
}
template <typename T, int N>
Dual<T, N> operator/(const Dual<T, N>& a, const Dual<T, N>& b) {
    Dual<T, N> r;
    const T inv = T(1.0) / b.val;
    r.val = a.val * inv;
    for (int i = 0; i < N; ++i) r.grad[i] = (a.grad[i] - r.val * b.grad[i]) * inv;
    return r;
}

// Mixed operations with plain doubles.
template <typename T, int N>
Dual<T, N> operator+(const Dual<T, N>& a, double b) {
    Dual<T, N> r = a;
    r.val = a.val + b;
    return r;
}
template <typename T, int N>
Dual<T, N> operator+(double a, const Dual<T, N>& b) {
    return b + a;
}
template <typename T, int N>
Dual<T, N> operator-(const Dual<T, N>& a, double b) {
    Dual<T, N> r = a;
    r.val = a.val - b;
    return r;
}
template <typename T, int N>
Dual<T, N> operator-(double a, const Dual<T, N>& b) {
    Dual<T, N> r = -b;
    r.val = a - b.val;
    return r;
}
template <typename T, int N>
Dual<T, N> operator*(const Dual<T, N>& a, double b) {
    Dual<T, N> r;
    r.val = a.val * b;
    for (int i = 0; i < N; ++i) r.grad[i] = a.grad[i] * b;
    return r;
}
template <typename T, int N>
Dual<T, N> operator*(double a, const Dual<T, N>& b) {
    return b * a;
}
template <typename T, int N>
Dual<T, N> operator/(const Dual<T, N>& a, double b) {
    return a * (1.0 / b);
}
template <typename T, int N>
Dual<T, N> operator/(double a, const Dual<T, N>& b) {
    const T inv = T(1.0) / b.val;
    return chain(b, a * inv, -a * inv * inv);
}

template <typename T, int N>
bool operator<(const Dual<T, N>& a, const Dual<T, N>& b) {
    return value_of(a) < value_of(b);
}
template <typename T, int N>
bool operator<(const Dual<T, N>& a, double b) {
    return value_of(a) < b;
}
template <typename T, int N>
bool operator>(const Dual<T, N>& a, double b) {
    return value_of(a) > b;
}
template <typename T, int N>
bool operator>=(const Dual<T, N>& a, double b) {
    return value_of(a) >= b;
}
template <typename T, int N>
bool operator<=(const Dual<T, N>& a, double b) {
    return value_of(a) <= b;
}

template <typename T, int N>
Dual<T, N> sqrt(const Dual<T, N>& a) {
    using std::sqrt;
    const T s = sqrt(a.val);
    return chain(a, s, T(0.5) / s);
}
template <typename T, int N>
Dual<T, N> sin(const Dual<T, N>& a) {
    using std::cos;
    using std::sin;
    return chain(a, sin(a.val), cos(a.val));
}
template <typename T, int N>
Dual<T, N> cos(const Dual<T, N>& a) {
    using std::cos;
    using std::sin;
    return chain(a, cos(a.val), -sin(a.val));
}
template <typename T, int N>
Dual<T, N> tanh(const Dual<T, N>& a) {
    using std::tanh;
    const T t = tanh(a.val);
    return chain(a, t, T(1.0) - t * t);
}
template <typename T, int N>
Dual<T, N> exp(const Dual<T, N>& a) {
    using std::exp;
    const T e = exp(a.val);
    return chain(a, e, e);
}
template <typename T, int N>
Dual<T, N> log(const Dual<T, N>& a) {
    using std::log;
    return chain(a, log(a.val), T(1.0) / a.val);
}

/// Square, kept as a named helper so model code reads the same for all scalars.
template <typename T>
T sq(const T& x) {
    return x * x;
}

}  // namespace racestrat::ad
