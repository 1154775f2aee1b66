// SPDX-License-Identifier: Apache-2.0
#include "cme/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cme/errors.hpp"

namespace cme {

PredictionRecord make_record(std::string id, int label, std::span<const double> probabilities) {
  if (probabilities.empty()) throw MetricError("prediction record with no classes");
  PredictionRecord r;
  r.id = std::move(id);
  r.label = label;
  std::size_t best = 0;
  for (std::size_t c = 1; c < probabilities.size(); ++c) {
    if (probabilities[c] > probabilities[best]) best = c;
  }
  r.predicted = static_cast<int>(best);
  r.confidence = probabilities[best];
  r.probabilities.assign(probabilities.begin(), probabilities.end());
  return r;
}

std::vector<PredictionRecord> records_from_logits(std::span<const std::string> ids,
                                                  std::span<const int> labels, const Tensor2D& logits,
                                                  double temperature) {
  if (labels.size() != logits.rows()) throw ShapeError("records_from_logits: one label per logit row required");
  std::vector<PredictionRecord> out;
  out.reserve(labels.size());
  std::vector<double> p(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    double mx = z[0] / temperature;
    for (double v : z) mx = std::max(mx, v / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) s += (p[c] = std::exp(z[c] / temperature - mx));
    for (double& v : p) v /= s;
    out.push_back(make_record(i < ids.size() ? ids[i] : std::to_string(i), labels[i], p));
  }
  return out;
}

std::size_t bin_index(double confidence, std::size_t K) {
  const double Kd = static_cast<double>(K);
  auto lower = [&](std::size_t k) { return static_cast<double>(k) / Kd; };
  double f = std::floor(confidence * Kd);
  std::size_t k = f <= 0.0 ? 0 : std::min(K - 1, static_cast<std::size_t>(f));
  // floor(c*K) can land one off the interval test c >= k/K near bin edges.
  while (k > 0 && confidence < lower(k)) --k;
  while (k + 1 < K && confidence >= lower(k + 1)) ++k;
  return k;
}

namespace {

void finish(CalibrationBin& b, double correct_sum, double conf_sum) {
  if (b.count == 0) {
    b.accuracy = 0.0;
    b.mean_confidence = 0.0;
    b.error = 0.0;
    return;
  }
  const double n = static_cast<double>(b.count);
  b.accuracy = correct_sum / n;
  b.mean_confidence = conf_sum / n;
  b.error = std::fabs(correct_sum - conf_sum) / n;
}

void check(std::span<const PredictionRecord> records, std::size_t K) {
  if (records.empty()) throw MetricError("calibration metrics on an empty record set");
  if (K == 0) throw ConfigError("number of bins must be positive");
}

}  // namespace

std::vector<CalibrationBin> bin_predictions(std::span<const PredictionRecord> records, std::size_t K,
                                            Binning binning) {
  check(records, K);
  std::vector<CalibrationBin> bins(K);
  std::vector<double> correct(K, 0.0), conf(K, 0.0);
  if (binning == Binning::EqualWidth) {
    for (std::size_t k = 0; k < K; ++k) {
      bins[k].index = k;
      bins[k].lower = static_cast<double>(k) / static_cast<double>(K);
      bins[k].upper = static_cast<double>(k + 1) / static_cast<double>(K);
    }
    for (const auto& r : records) {
      const std::size_t k = bin_index(r.confidence, K);
      ++bins[k].count;
      correct[k] += r.correct() ? 1.0 : 0.0;
      conf[k] += r.confidence;
    }
  } else {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].confidence < records[b].confidence; });
    const std::size_t n = records.size();
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t begin = k * n / K;
      const std::size_t end = (k + 1) * n / K;
      bins[k].index = k;
      bins[k].count = end - begin;
      if (begin < end) {
        bins[k].lower = records[order[begin]].confidence;
        bins[k].upper = records[order[end - 1]].confidence;
      }
      for (std::size_t p = begin; p < end; ++p) {
        const auto& r = records[order[p]];
        correct[k] += r.correct() ? 1.0 : 0.0;
        conf[k] += r.confidence;
      }
    }
  }
  for (std::size_t k = 0; k < K; ++k) finish(bins[k], correct[k], conf[k]);
  return bins;
}

double ece(std::span<const CalibrationBin> bins) {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) throw MetricError("ECE over empty bins");
  double total = 0.0;
  for (const auto& b : bins) total += static_cast<double>(b.count) / static_cast<double>(n) * b.error;
  return total;
}

double ece(std::span<const PredictionRecord> records, std::size_t K, Binning binning) {
  return ece(bin_predictions(records, K, binning));
}

double accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw MetricError("accuracy of an empty record set");
  std::size_t ok = 0;
  for (const auto& r : records) ok += r.correct() ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<ReliabilityPoint> reliability_data(std::span<const PredictionRecord> records, std::size_t K,
                                               Binning binning) {
  std::vector<ReliabilityPoint> pts;
  for (const auto& b : bin_predictions(records, K, binning)) {
    ReliabilityPoint p{b.lower, b.upper, b.mean_confidence, b.accuracy, b.count};
    if (b.count == 0) {
      p.mean_confidence = 0.5 * (b.lower + b.upper);
      p.accuracy = 0.0;
    }
    pts.push_back(p);
  }
  return pts;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string reliability_csv(std::span<const ReliabilityPoint> points) {
  std::ostringstream os;
  os << "bin,lower,upper,mean_confidence,accuracy,count\n";
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& p = points[k];
    os << k << ',' << fmt(p.lower) << ',' << fmt(p.upper) << ',' << fmt(p.mean_confidence) << ','
       << fmt(p.accuracy) << ',' << p.count << '\n';
  }
  return os.str();
}

std::string reliability_svg(std::span<const ReliabilityPoint> points, const std::string& title) {
  constexpr double W = 360, H = 360, M = 40;
  const double plot = W - 2 * M;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H + 20
     << "\" viewBox=\"0 0 " << W << ' ' << H + 20 << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H + 20 << "\" fill=\"white\"/>\n";
  std::string esc;
  for (char c : title) {
    if (c == '<') esc += "&lt;";
    else if (c == '>') esc += "&gt;";
    else if (c == '&') esc += "&amp;";
    else esc += c;
  }
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
     << esc << "</text>\n";
  const double y0 = H - M + 20;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& p = points[k];
    const double x = M + p.lower * plot;
    const double w = std::max(0.0, (p.upper - p.lower) * plot - 1.0);
    const double h = p.accuracy * plot;
    os << "<rect x=\"" << fmt2(x) << "\" y=\"" << fmt2(y0 - h) << "\" width=\"" << fmt2(w) << "\" height=\""
       << fmt2(h) << "\" fill=\"#4a78c2\" stroke=\"#23406e\"><title>bin " << k << ": acc " << fmt2(p.accuracy)
       << ", conf " << fmt2(p.mean_confidence) << ", n=" << p.count << "</title></rect>\n";
    if (p.count > 0) {
      const double gap_top = y0 - std::max(p.accuracy, p.mean_confidence) * plot;
      const double gap_h = std::fabs(p.accuracy - p.mean_confidence) * plot;
      os << "<rect x=\"" << fmt2(x) << "\" y=\"" << fmt2(gap_top) << "\" width=\"" << fmt2(w) << "\" height=\""
         << fmt2(gap_h) << "\" fill=\"#e06666\" fill-opacity=\"0.35\"/>\n";
    }
  }
  os << "<line x1=\"" << M << "\" y1=\"" << y0 << "\" x2=\"" << M + plot << "\" y2=\"" << y0 - plot
     << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  os << "<rect x=\"" << M << "\" y=\"" << y0 - plot << "\" width=\"" << plot << "\" height=\"" << plot
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H + 12 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"11\">confidence</text>\n";
  os << "<text x=\"12\" y=\"" << y0 - plot / 2 << "\" transform=\"rotate(-90 12 " << y0 - plot / 2
     << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">accuracy</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace cme
