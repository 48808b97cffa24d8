#include "urnet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "urnet/errors.hpp"

namespace urnet {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) {
    throw InvalidInputError("softmax: empty input");
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) {
      throw InvalidInputError("softmax: non-finite logit");
    }
    max_logit = std::max(max_logit, v);
  }
  std::vector<double> probs(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    // floor keeps every probability strictly positive; the perturbation is
    // ~1e-304 per entry, far inside the 1e-9 sum tolerance
    probs[i] = std::exp(std::max(logits[i] - max_logit, -700.0));
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) {
    throw InvalidInputError("cosine: dimension mismatch (" +
                            std::to_string(u.size()) + " vs " +
                            std::to_string(v.size()) + ")");
  }
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  if (uu == 0.0 || vv == 0.0) {
    throw DegenerateInputError("cosine: zero-norm vector");
  }
  const double c = dot(u, v) / (std::sqrt(uu) * std::sqrt(vv));
  return std::clamp(c, -1.0, 1.0);
}

namespace {

// Distance-weighted seeding: each next centroid is drawn with probability
// proportional to the squared distance to the nearest already-chosen one.
Matrix seed_centroids(const Matrix& points, std::uint32_t k, Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  Matrix centroids(k, dim);

  std::vector<double> nearest_sq(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.index(n);
  std::copy_n(points.row(first).begin(), dim, centroids.row(0).begin());

  for (std::uint32_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = squared_distance(points.row(i), centroids.row(c - 1));
      nearest_sq[i] = std::min(nearest_sq[i], d);
      total += nearest_sq[i];
    }
    std::size_t chosen = n;  // sentinel
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cum += nearest_sq[i];
        if (cum > r && nearest_sq[i] > 0.0) {
          chosen = i;
          break;
        }
      }
      if (chosen == n) {  // fp slack at the upper edge: last positive weight
        for (std::size_t i = n; i-- > 0;) {
          if (nearest_sq[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      }
    }
    if (chosen == n) {
      // all remaining points coincide with a chosen centroid
      chosen = rng.index(n);
    }
    std::copy_n(points.row(chosen).begin(), dim, centroids.row(c).begin());
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::uint32_t k, Rng& rng,
                    std::uint32_t max_iters) {
  const std::size_t n = points.rows();
  if (k == 0 || n < k) {
    throw InvalidInputError("kmeans: need n >= k >= 1, got n=" +
                            std::to_string(n) + " k=" + std::to_string(k));
  }
  if (!points.all_finite()) {
    throw InvalidInputError("kmeans: non-finite point");
  }
  const std::size_t dim = points.cols();

  KMeansResult result;
  result.centroids = seed_centroids(points, k, rng);
  result.assignments.assign(n, 0);
  std::vector<std::uint32_t> previous(n, k);  // k = no valid assignment yet
  std::vector<std::size_t> counts(k, 0);

  for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
    // assignment pass; ties go to the lowest centroid index
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t best_c = 0;
      for (std::uint32_t c = 0; c < k; ++c) {
        const double d = squared_distance(points.row(i), result.centroids.row(c));
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      result.assignments[i] = best_c;
      ++counts[best_c];
    }

    // reseed each empty cluster at the point farthest from its own centroid
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      double far = 0.0;
      std::size_t far_i = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[result.assignments[i]] <= 1) continue;  // keep donors nonempty
        const double d = squared_distance(
            points.row(i), result.centroids.row(result.assignments[i]));
        if (d > far) {
          far = d;
          far_i = i;
        }
      }
      if (far_i == n) break;  // all points coincide with centroids; group stays empty
      std::copy_n(points.row(far_i).begin(), dim, result.centroids.row(c).begin());
      --counts[result.assignments[far_i]];
      result.assignments[far_i] = c;
      ++counts[c];
    }

    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      objective += squared_distance(points.row(i),
                                    result.centroids.row(result.assignments[i]));
    }
    result.objective_history.push_back(objective);
    result.objective = objective;
    result.iterations = iter + 1;

    if (result.assignments == previous) break;  // Lloyd fixed point
    previous = result.assignments;

    // centroid update: mean of assigned points
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto row = result.centroids.row(c);
      std::fill(row.begin(), row.end(), 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto row = result.centroids.row(result.assignments[i]);
      auto p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) row[d] += p[d];
    }
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto row = result.centroids.row(c);
      for (std::size_t d = 0; d < dim; ++d) row[d] /= static_cast<double>(counts[c]);
    }
  }
  return result;
}

double grad_check(
    const std::function<double(std::span<const double>)>& loss,
    const std::function<std::vector<double>(std::span<const double>)>& gradient,
    std::span<const double> params, Rng& rng, const GradCheckOptions& options) {
  std::vector<double> x(params.begin(), params.end());
  const std::vector<double> analytic = gradient(x);
  if (analytic.size() != x.size()) {
    throw InvalidInputError("grad_check: gradient length mismatch");
  }

  std::vector<std::size_t> coords(x.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (coords.size() > options.max_coords) {
    rng.shuffle(coords);
    coords.resize(options.max_coords);
  }

  double worst = 0.0;
  for (std::size_t c : coords) {
    const double saved = x[c];
    const double h = options.step * (1.0 + std::abs(saved));
    x[c] = saved + h;
    const double above = loss(x);
    x[c] = saved - h;
    const double below = loss(x);
    x[c] = saved;
    if (!std::isfinite(above) || !std::isfinite(below)) {
      throw InvalidInputError("grad_check: non-finite loss");
    }
    const double numeric = (above - below) / (2.0 * h);
    const double denom =
        std::max({std::abs(analytic[c]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[c] - numeric) / denom);
  }
  return worst;
}

}  // namespace urnet
