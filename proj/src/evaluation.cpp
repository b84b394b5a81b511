#include "depthopt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace depthopt {

namespace {

struct PixelPair {
  double est;
  double gt;
};

std::vector<PixelPair> evaluation_set(const DepthField& estimate, const DepthField& gt,
                                      const Grid<std::uint8_t>* region,
                                      const MetricOptions& options) {
  if (!estimate.values.same_size(gt.values)) {
    throw std::invalid_argument("compute_metrics: dimension mismatch");
  }
  if (region && !estimate.values.same_size(*region)) {
    throw std::invalid_argument("compute_metrics: region dimension mismatch");
  }
  std::vector<PixelPair> pairs;
  for (int y = 0; y < estimate.height(); ++y) {
    for (int x = 0; x < estimate.width(); ++x) {
      if (!estimate.is_valid(x, y) || !gt.is_valid(x, y)) continue;
      if (region && !region->at(x, y)) continue;
      double g = gt.values.at(x, y);
      double e = estimate.values.at(x, y);
      if (options.min_depth && g < *options.min_depth) continue;
      if (options.max_depth && g > *options.max_depth) continue;
      if (options.min_depth) e = std::max(e, *options.min_depth);
      if (options.max_depth) e = std::min(e, *options.max_depth);
      pairs.push_back({e, g});
    }
  }
  return pairs;
}

double lower_median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return xs[(xs.size() - 1) / 2];
}

}  // namespace

MetricReport compute_metrics(const DepthField& estimate, const DepthField& groundtruth,
                             const Grid<std::uint8_t>* region, const MetricOptions& options) {
  const std::vector<PixelPair> pairs = evaluation_set(estimate, groundtruth, region, options);
  if (pairs.empty()) {
    throw std::invalid_argument("compute_metrics: empty evaluation set");
  }
  const std::size_t n = pairs.size();
  std::vector<double> abs_rel(n), sq_rel(n), sq(n), sq_log(n);
  std::int64_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pairs[i].est, g = pairs[i].gt;
    const double diff = e - g;
    abs_rel[i] = std::abs(diff) / g;
    sq_rel[i] = diff * diff / g;
    sq[i] = diff * diff;
    const double dl = std::log(e) - std::log(g);
    sq_log[i] = dl * dl;
    const double ratio = std::max(e / g, g / e);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  MetricReport r;
  r.abs_rel = pairwise_mean(abs_rel);
  r.sq_rel = pairwise_mean(sq_rel);
  r.rmse = std::sqrt(pairwise_mean(sq));
  r.rmse_log = std::sqrt(pairwise_mean(sq_log));
  r.delta1 = static_cast<double>(d1) / static_cast<double>(n);
  r.delta2 = static_cast<double>(d2) / static_cast<double>(n);
  r.delta3 = static_cast<double>(d3) / static_cast<double>(n);
  r.pixel_count = static_cast<std::int64_t>(n);
  return r;
}

std::pair<DepthField, double> median_scale(const DepthField& estimate,
                                           const DepthField& groundtruth) {
  if (!estimate.values.same_size(groundtruth.values)) {
    throw std::invalid_argument("median_scale: dimension mismatch");
  }
  std::vector<double> est, gt;
  for (int y = 0; y < estimate.height(); ++y) {
    for (int x = 0; x < estimate.width(); ++x) {
      if (!estimate.is_valid(x, y) || !groundtruth.is_valid(x, y)) continue;
      est.push_back(estimate.values.at(x, y));
      gt.push_back(groundtruth.values.at(x, y));
    }
  }
  if (est.empty()) throw std::invalid_argument("median_scale: no co-valid pixel");
  const double med_est = lower_median(est);
  if (med_est == 0.0) throw std::invalid_argument("median_scale: zero estimate median");
  const double scale = lower_median(gt) / med_est;
  DepthField scaled = estimate;
  for (std::size_t i = 0; i < scaled.values.size(); ++i) {
    if (scaled.valid[i]) scaled.values[i] *= scale;
  }
  return {scaled, scale};
}

SplitReport split_eval(const DepthField& estimate, const DepthField& groundtruth,
                       const InstanceMask& instances, const MetricOptions& options) {
  SplitReport report;
  report.full = compute_metrics(estimate, groundtruth, nullptr, options);
  report.full.region = "F+B";
  Grid<std::uint8_t> human(instances.width(), instances.height(), 0);
  int human_covalid = 0;
  for (int y = 0; y < instances.height(); ++y) {
    for (int x = 0; x < instances.width(); ++x) {
      if (!instances.is_human(x, y)) continue;
      human.at(x, y) = 1;
      if (estimate.is_valid(x, y) && groundtruth.is_valid(x, y)) ++human_covalid;
    }
  }
  if (human_covalid > 0) {
    MetricReport f = compute_metrics(estimate, groundtruth, &human, options);
    f.region = "F";
    report.human = f;
  }
  return report;
}

namespace {

std::string pair_cell(double full, const std::optional<MetricReport>& human,
                      double MetricReport::*member) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << full << " / ";
  if (human) {
    os << (*human).*member;
  } else {
    os << "-";
  }
  return os.str();
}

}  // namespace

std::string metric_row_header() {
  return "abs_rel | sq_rel | rmse | rmse_log | d<1.25 | d<1.25^2 | d<1.25^3 (F+B / F)";
}

std::string format_metric_row(const SplitReport& report) {
  std::ostringstream os;
  os << pair_cell(report.full.abs_rel, report.human, &MetricReport::abs_rel) << " | "
     << pair_cell(report.full.sq_rel, report.human, &MetricReport::sq_rel) << " | "
     << pair_cell(report.full.rmse, report.human, &MetricReport::rmse) << " | "
     << pair_cell(report.full.rmse_log, report.human, &MetricReport::rmse_log) << " | "
     << pair_cell(report.full.delta1, report.human, &MetricReport::delta1) << " | "
     << pair_cell(report.full.delta2, report.human, &MetricReport::delta2) << " | "
     << pair_cell(report.full.delta3, report.human, &MetricReport::delta3);
  return os.str();
}

}  // namespace depthopt
