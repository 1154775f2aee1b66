// SPDX-License-Identifier: Apache-2.0
#pragma once
// Independent reference computations used by the tests. Nothing here calls
// into the library's metric, softmax or gradient code.
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

/// softmax in long double.
inline std::vector<double> softmax(const std::vector<double>& z) {
  long double m = z[0];
  for (double v : z) m = std::max<long double>(m, v);
  long double s = 0;
  std::vector<long double> e(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(z[i]) - m);
    s += e[i];
  }
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<double>(e[i] / s);
  return out;
}

struct Rec {
  double confidence;
  bool correct;
};

/// ECE straight from the definition: for each bin k, scan every record and
/// test k/K <= c < (k+1)/K (the last bin also takes c = 1).
inline double ece(const std::vector<Rec>& recs, std::size_t K) {
  long double total = 0;
  const long double n = static_cast<long double>(recs.size());
  for (std::size_t k = 0; k < K; ++k) {
    const long double lo = static_cast<long double>(k) / K;
    const long double hi = static_cast<long double>(k + 1) / K;
    long double cnt = 0, acc = 0, conf = 0;
    for (const auto& r : recs) {
      const long double c = r.confidence;
      const bool in = (c >= lo && c < hi) || (k + 1 == K && c == 1.0L);
      if (!in) continue;
      cnt += 1;
      acc += r.correct ? 1 : 0;
      conf += c;
    }
    if (cnt == 0) continue;
    total += (cnt / n) * std::fabs(acc / cnt - conf / cnt);
  }
  return static_cast<double>(total);
}

/// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                  std::vector<double> x, std::size_t i, double h = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

/// |a - b| / max(|a|, |b|), or the absolute difference when both are tiny.
inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-4,
                       double abs_tol = 1e-6, double small = 1e-3) {
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  if (scale < small) return std::fabs(analytic - numeric) <= abs_tol;
  return std::fabs(analytic - numeric) / scale < rel_tol;
}

}  // namespace oracle
