#pragma once

// Spectral operators on a uniform periodic grid. Sizes are desk scale
// (N <= a few hundred), so a direct O(N^2) transform keeps the code
// dependency-free and bit-deterministic.

#include <complex>
#include <functional>
#include <vector>

#include "angd/core.hpp"

namespace angd {

struct PeriodicGrid {
  int n;
  double length;  // domain [0, length)

  double dx() const { return length / n; }

  Vector points() const {
    Vector x(n);
    for (int j = 0; j < n; ++j) x[j] = j * dx();
    return x;
  }

  // Wavenumber of mode m in the standard DFT ordering.
  double wavenumber(int m) const {
    const int half = n / 2;
    const int mm = (m <= half) ? m : m - n;
    return 2.0 * M_PI * mm / length;
  }
};

namespace detail {

using Cvec = std::vector<std::complex<double>>;

inline Cvec dft(const Vector& u) {
  const int n = static_cast<int>(u.size());
  Cvec out(n);
  for (int m = 0; m < n; ++m) {
    std::complex<double> acc = 0.0;
    for (int j = 0; j < n; ++j) {
      const double ang = -2.0 * M_PI * m * j / n;
      acc += u[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[m] = acc;
  }
  return out;
}

inline Vector idft_real(const Cvec& c) {
  const int n = static_cast<int>(c.size());
  Vector out(n);
  for (int j = 0; j < n; ++j) {
    std::complex<double> acc = 0.0;
    for (int m = 0; m < n; ++m) {
      const double ang = 2.0 * M_PI * m * j / n;
      acc += c[m] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[j] = acc.real() / n;
  }
  return out;
}

}  // namespace detail

// Applies a Fourier-multiplier operator with the given complex symbol.
inline Vector apply_symbol(const PeriodicGrid& grid, const Vector& u,
                           const std::function<std::complex<double>(double)>& symbol) {
  require(static_cast<int>(u.size()) == grid.n, "apply_symbol: grid size mismatch");
  auto c = detail::dft(u);
  for (int m = 0; m < grid.n; ++m) c[m] *= symbol(grid.wavenumber(m));
  return detail::idft_real(c);
}

inline Vector spectral_derivative(const PeriodicGrid& grid, const Vector& u) {
  return apply_symbol(grid, u, [](double k) { return std::complex<double>(0.0, k); });
}

inline Vector spectral_laplacian(const PeriodicGrid& grid, const Vector& u) {
  return apply_symbol(grid, u, [](double k) { return std::complex<double>(-k * k, 0.0); });
}

// (I - Delta)^{sign}: sign = +1 applies 1 + k^2, sign = -1 its inverse.
inline Vector helmholtz(const PeriodicGrid& grid, const Vector& u, int sign) {
  require(sign == 1 || sign == -1, "helmholtz: sign must be +-1");
  return apply_symbol(grid, u, [sign](double k) {
    const double s = 1.0 + k * k;
    return std::complex<double>(sign == 1 ? s : 1.0 / s, 0.0);
  });
}

inline double grid_inner(const PeriodicGrid& grid, const Vector& a, const Vector& b) {
  return a.dot(b) * grid.dx();
}

}  // namespace angd
