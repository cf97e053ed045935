#include <algorithm>
#include <cmath>
#include <limits>

#include "htrlab/codes/codes.hpp"
#include "htrlab/error.hpp"

namespace htrlab::codes {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::vector<std::vector<double>> plus_plus_seeds(const std::vector<std::vector<double>>& pts, std::int64_t k,
                                                 Rng& rng) {
  std::vector<std::vector<double>> c{pts[rng.index(pts.size())]};
  std::vector<double> d2(pts.size());
  while (static_cast<std::int64_t>(c.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& m : c) d2[i] = std::min(d2[i], sq_dist(pts[i], m));
      total += d2[i];
    }
    double u = rng.uniform() * total;
    std::size_t pick = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      u -= d2[i];
      if (u < 0.0) break;
    }
    c.push_back(pts[pick]);
  }
  return c;
}

}  // namespace

std::int64_t nearest_centroid(const std::vector<std::vector<double>>& centroids, const std::vector<double>& v) {
  require(!centroids.empty(), ErrorCode::InvalidArgument, "no centroids");
  std::int64_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    require(centroids[j].size() == v.size(), ErrorCode::ShapeMismatch, "centroid length differs from the vector");
    const double d = sq_dist(centroids[j], v);
    if (d < bd) {
      bd = d;
      best = static_cast<std::int64_t>(j);
    }
  }
  return best;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::int64_t k, Rng& rng, std::int64_t max_iter,
                    double tol, std::int64_t max_restarts) {
  require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
  require(max_iter >= 1 && tol >= 0.0 && max_restarts >= 0, ErrorCode::InvalidArgument, "bad k-means settings");
  {
    auto distinct = points;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    require(static_cast<std::int64_t>(distinct.size()) >= k, ErrorCode::InsufficientSamples,
            "k-means needs at least k distinct points");
  }
  const std::size_t n = points.size(), d = points.front().size();
  for (const auto& p : points) require(p.size() == d, ErrorCode::ShapeMismatch, "points differ in length");

  for (std::int64_t attempt = 0; attempt <= max_restarts; ++attempt) {
    KMeansResult r;
    r.restarts = attempt;
    r.centroids = plus_plus_seeds(points, k, rng);
    r.assignment.assign(n, 0);
    bool empty = false;
    for (std::int64_t it = 0; it < max_iter; ++it) {
      double sse = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        r.assignment[i] = nearest_centroid(r.centroids, points[i]);
        sse += sq_dist(points[i], r.centroids[static_cast<std::size_t>(r.assignment[i])]);
      }
      r.sse_history.push_back(sse);

      std::vector<std::vector<double>> next(static_cast<std::size_t>(k), std::vector<double>(d, 0.0));
      std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
      for (std::size_t i = 0; i < n; ++i) {
        auto& c = next[static_cast<std::size_t>(r.assignment[i])];
        for (std::size_t j = 0; j < d; ++j) c[j] += points[i][j];
        ++count[static_cast<std::size_t>(r.assignment[i])];
      }
      empty = false;
      double shift = 0.0;
      for (std::size_t c = 0; c < next.size(); ++c) {
        if (count[c] == 0) {
          empty = true;
          next[c] = r.centroids[c];
          continue;
        }
        for (double& v : next[c]) v /= static_cast<double>(count[c]);
        shift = std::max(shift, std::sqrt(sq_dist(next[c], r.centroids[c])));
      }
      r.centroids = std::move(next);
      if (shift <= tol) break;
    }
    if (!empty) {
      // Final assignment against the settled centroids.
      for (std::size_t i = 0; i < n; ++i) r.assignment[i] = nearest_centroid(r.centroids, points[i]);
      return r;
    }
  }
  fail(ErrorCode::DegenerateClustering,
       "k-means left a cluster empty after " + std::to_string(max_restarts) + " restarts");
}

}  // namespace htrlab::codes
