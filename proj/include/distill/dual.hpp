#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace distill {

/// Forward-mode dual number: value plus one directional derivative.
/// Used as an Eigen scalar so any scalar-templated evaluation can be
/// differentiated along a single tangent in one pass.
template <typename T>
struct Dual {
  T value{};
  T tangent{};

  constexpr Dual() = default;
  constexpr Dual(T v) : value(v), tangent(0) {}  // NOLINT: implicit lift of constants
  constexpr Dual(T v, T d) : value(v), tangent(d) {}

  constexpr Dual& operator+=(const Dual& o) {
    value += o.value;
    tangent += o.tangent;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    value -= o.value;
    tangent -= o.tangent;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    tangent = tangent * o.value + value * o.tangent;
    value *= o.value;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    tangent = (tangent * o.value - value * o.tangent) / (o.value * o.value);
    value /= o.value;
    return *this;
  }
};

template <typename T>
constexpr Dual<T> operator-(const Dual<T>& a) {
  return {-a.value, -a.tangent};
}
template <typename T>
constexpr Dual<T> operator+(Dual<T> a, const Dual<T>& b) {
  return a += b;
}
template <typename T>
constexpr Dual<T> operator-(Dual<T> a, const Dual<T>& b) {
  return a -= b;
}
template <typename T>
constexpr Dual<T> operator*(Dual<T> a, const Dual<T>& b) {
  return a *= b;
}
template <typename T>
constexpr Dual<T> operator/(Dual<T> a, const Dual<T>& b) {
  return a /= b;
}

template <typename T>
constexpr bool operator==(const Dual<T>& a, const Dual<T>& b) {
  return a.value == b.value;
}
template <typename T>
constexpr bool operator!=(const Dual<T>& a, const Dual<T>& b) {
  return a.value != b.value;
}
template <typename T>
constexpr bool operator<(const Dual<T>& a, const Dual<T>& b) {
  return a.value < b.value;
}
template <typename T>
constexpr bool operator>(const Dual<T>& a, const Dual<T>& b) {
  return a.value > b.value;
}
template <typename T>
constexpr bool operator<=(const Dual<T>& a, const Dual<T>& b) {
  return a.value <= b.value;
}
template <typename T>
constexpr bool operator>=(const Dual<T>& a, const Dual<T>& b) {
  return a.value >= b.value;
}

template <typename T>
Dual<T> tanh(const Dual<T>& a) {
  using std::tanh;
  const T y = tanh(a.value);
  return {y, (T(1) - y * y) * a.tangent};
}
template <typename T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {sin(a.value), cos(a.value) * a.tangent};
}
template <typename T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {cos(a.value), -sin(a.value) * a.tangent};
}
template <typename T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  const T y = exp(a.value);
  return {y, y * a.tangent};
}
template <typename T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T y = sqrt(a.value);
  return {y, a.tangent / (T(2) * y)};
}
template <typename T>
Dual<T> abs(const Dual<T>& a) {
  return a.value < T(0) ? -a : a;
}
template <typename T>
bool isfinite(const Dual<T>& a) {
  using std::isfinite;
  return isfinite(a.value) && isfinite(a.tangent);
}

/// Scalar accessors so templated code can read either double or Dual.
inline double value_of(double x) { return x; }
template <typename T>
T value_of(const Dual<T>& x) {
  return x.value;
}

}  // namespace distill

namespace Eigen {

template <typename T>
struct NumTraits<distill::Dual<T>> : NumTraits<T> {
  using Real = distill::Dual<T>;
  using NonInteger = distill::Dual<T>;
  using Nested = distill::Dual<T>;
  using Literal = distill::Dual<T>;

  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2 * NumTraits<T>::ReadCost,
    AddCost = 2 * NumTraits<T>::AddCost,
    MulCost = 3 * NumTraits<T>::MulCost + NumTraits<T>::AddCost
  };

  static inline Real epsilon() { return Real(NumTraits<T>::epsilon()); }
  static inline Real dummy_precision() { return Real(NumTraits<T>::dummy_precision()); }
  static inline Real highest() { return Real(NumTraits<T>::highest()); }
  static inline Real lowest() { return Real(NumTraits<T>::lowest()); }
  static inline int digits10() { return NumTraits<T>::digits10(); }
};

}  // namespace Eigen
