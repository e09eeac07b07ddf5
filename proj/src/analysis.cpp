#include "ftlab/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "ftlab/error.hpp"

namespace ftlab {

Frontier pareto_frontier(const std::vector<ParetoPoint>& points) {
  if (points.empty()) throw AnalysisError("pareto frontier of an empty point set");
  for (const auto& p : points)
    if (!std::isfinite(p.accuracy) || !std::isfinite(p.robustness))
      throw AnalysisError("non-finite point at step " + std::to_string(p.step));
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Descending accuracy, then descending robustness, then input order.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].accuracy != points[b].accuracy) return points[a].accuracy > points[b].accuracy;
    return points[a].robustness > points[b].robustness;
  });
  Frontier out;
  double best = -INFINITY;
  for (auto i : order)
    if (points[i].robustness > best) {
      out.push_back(points[i]);
      best = points[i].robustness;
    }
  std::reverse(out.begin(), out.end());
  return out;
}

double auc(const Frontier& frontier) {
  if (frontier.empty()) throw AnalysisError("auc of an empty frontier");
  double area = frontier.front().accuracy * frontier.front().robustness;
  for (std::size_t i = 1; i < frontier.size(); ++i) {
    const auto& a = frontier[i - 1];
    const auto& b = frontier[i];
    area += (b.accuracy - a.accuracy) * (a.robustness + b.robustness) / 2.0;
  }
  return area;
}

std::map<std::string, double> relative_auc(const std::map<std::string, double>& auc_by_method) {
  if (auc_by_method.size() < 2) throw AnalysisError("relative auc needs at least two methods");
  double mean = 0.0;
  for (const auto& [m, v] : auc_by_method) mean += v;
  mean /= static_cast<double>(auc_by_method.size());
  if (mean == 0.0) throw AnalysisError("relative auc with a zero column mean");
  std::map<std::string, double> out;
  for (const auto& [m, v] : auc_by_method) out[m] = (v / mean - 1.0) * 100.0;
  return out;
}

SlopeProfile frontier_slope_profile(const Frontier& frontier) {
  SlopeProfile p;
  if (frontier.size() < 2) return p;
  for (std::size_t i = 1; i < frontier.size(); ++i) {
    const double dx = frontier[i].accuracy - frontier[i - 1].accuracy;
    const double dy = frontier[i].robustness - frontier[i - 1].robustness;
    p.slopes.push_back(dy / dx);
    p.max_abs_slope = std::max(p.max_abs_slope, std::abs(dy / dx));
    p.curve_length += std::hypot(dx, dy);
  }
  return p;
}

}  // namespace ftlab
