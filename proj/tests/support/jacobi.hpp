#pragma once

// Dense symmetric eigensolver used as an independent oracle in tests.
// Classic cyclic Jacobi rotations; plenty for the n <= 16 matrices the tests
// feed it. Returns eigenvalues ascending and column eigenvectors.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace testsupport {

struct EigenResult {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // n x n, column k is the k-th eigenvector
};

inline EigenResult jacobi_eigen(std::vector<double> a, int n) {
  if (n <= 0 || static_cast<int>(a.size()) != n * n)
    throw std::runtime_error("jacobi_eigen: bad dimensions");
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;

    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * n + p], aqq = a[q * n + q];
        double theta = (aqq - app) / (2 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;

        for (int k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return a[i * n + i] < a[j * n + j]; });

  EigenResult r;
  r.values.resize(n);
  r.vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    r.values[k] = a[order[k] * n + order[k]];
    for (int i = 0; i < n; ++i) r.vectors[i * n + k] = v[i * n + order[k]];
  }
  return r;
}

// Chebyshev polynomial evaluated at scalar x via the same recurrence the
// filter uses; oracle for spectral-domain checks.
inline double cheb_scalar(int k, double x) {
  if (k == 0) return 1.0;
  if (k == 1) return x;
  double tm2 = 1.0, tm1 = x, t = 0;
  for (int i = 2; i <= k; ++i) {
    t = 2 * x * tm1 - tm2;
    tm2 = tm1;
    tm1 = t;
  }
  return t;
}

}  // namespace testsupport
