#pragma once

// Accuracy/robustness trade-off analysis: Pareto frontiers, the
// endpoint-extended frontier AUC, and cross-method comparisons.

#include <map>
#include <string>
#include <vector>

namespace ftlab {

struct ParetoPoint {
  double accuracy = 0.0;
  double robustness = 0.0;
  std::size_t step = 0;
  std::string source;
};

// Sorted by ascending accuracy with strictly descending robustness.
using Frontier = std::vector<ParetoPoint>;

// Maximal non-dominated subset. Among points with identical coordinates the
// first one is kept. AnalysisError on empty or non-finite input.
Frontier pareto_frontier(const std::vector<ParetoPoint>& points);

// Area under the curve that runs horizontally from accuracy 0 at the
// robustness peak, linearly through the frontier points, and drops
// vertically at the accuracy peak.
double auc(const Frontier& frontier);

// (auc / mean - 1) * 100 per method. AnalysisError with fewer than two
// methods or a zero mean.
std::map<std::string, double> relative_auc(const std::map<std::string, double>& auc_by_method);

struct SlopeProfile {
  std::vector<double> slopes;  // d robustness / d accuracy per segment
  double max_abs_slope = 0.0;
  double curve_length = 0.0;
};

// Empty profile for fewer than two points.
SlopeProfile frontier_slope_profile(const Frontier& frontier);

}  // namespace ftlab
