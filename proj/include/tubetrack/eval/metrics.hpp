#pragma once

#include <vector>

#include <json.hpp>

#include "tubetrack/grid/polyline.hpp"
#include "tubetrack/grid/volume.hpp"

namespace tubetrack {

struct EvalConfig {
  double tolerance_mm = 10.0;
  void validate() const;
};

// Arc length of GT followed in order before the first tracking error. GT is
// resampled at 1 mm and oriented to start at the end nearest pred's first
// point. Pred point i is an error when it is farther than the tolerance from
// GT, when its matched arc falls more than the tolerance behind the furthest
// arc reached so far, or when the matched arc jumps ahead by more than
// |p_i - p_{i-1}| + tolerance (crossing into another fold). The score counts
// from the first point's matched arc. Empty pred -> 0.
double max_tracked_length(const Polyline& pred, const Polyline& gt, const EvalConfig& cfg = {});

// |cylinders(pred) ∩ segmentation| / |segmentation|. Throws DataError on an
// empty segmentation.
double coverage(const Polyline& pred, const MaskVolume& segmentation, double radius_mm = 6.0);

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  double median = 0.0;
  double p20 = 0.0;
  double p80 = 0.0;
  double max = 0.0;
};

// Percentiles interpolate linearly between order statistics at q * (n - 1).
// Throws ConfigError on an empty list.
Summary summarize(std::vector<double> values);
double percentile_sorted(const std::vector<double>& sorted, double q);

nlohmann::json to_json(const Summary& s);

}  // namespace tubetrack
