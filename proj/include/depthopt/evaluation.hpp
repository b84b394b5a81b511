#pragma once

#include <optional>
#include <string>
#include <utility>

#include "depthopt/image.hpp"

namespace depthopt {

/// Standard depth error and accuracy metrics over an evaluation set.
struct MetricReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;  // ratio threshold 1.25
  double delta2 = 0.0;  // 1.25^2
  double delta3 = 0.0;  // 1.25^3
  std::int64_t pixel_count = 0;
  std::string region = "F+B";
  std::string scaling = "none";
};

struct MetricOptions {
  // Optional depth-range restriction for dataset-parity runs, off by default:
  // pixels whose groundtruth is outside the range are dropped and the
  // estimate is clamped into it.
  std::optional<double> min_depth;
  std::optional<double> max_depth;
};

/// Metrics over pixels valid in both maps (and inside `region` when given).
/// Throws when the evaluation set is empty.
MetricReport compute_metrics(const DepthField& estimate, const DepthField& groundtruth,
                             const Grid<std::uint8_t>* region = nullptr,
                             const MetricOptions& options = {});

/// Rescales the estimate by median(groundtruth)/median(estimate) over
/// co-valid pixels (lower median for even counts). Returns the scaled field
/// and the factor. Throws when there is no co-valid pixel or the median is 0.
std::pair<DepthField, double> median_scale(const DepthField& estimate,
                                           const DepthField& groundtruth);

/// Whole-image metrics plus metrics restricted to human pixels. The human
/// report is absent when no human pixel is co-valid.
struct SplitReport {
  MetricReport full;               // F+B
  std::optional<MetricReport> human;  // F
};

SplitReport split_eval(const DepthField& estimate, const DepthField& groundtruth,
                       const InstanceMask& instances, const MetricOptions& options = {});

/// One table row, "F+B / F" per metric, columns separated by " | ".
std::string format_metric_row(const SplitReport& report);
std::string metric_row_header();

}  // namespace depthopt
