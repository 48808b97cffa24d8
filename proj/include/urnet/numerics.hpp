#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "urnet/matrix.hpp"
#include "urnet/rng.hpp"

namespace urnet {

// Numerically stable softmax: shift-invariant, outputs sum to 1.
// Throws InvalidInputError on non-finite entries.
std::vector<double> softmax(std::span<const double> logits);

// Cosine of the angle between u and v, clamped to [-1, 1] against rounding.
// Throws InvalidInputError on length mismatch, DegenerateInputError when a
// vector has zero norm (never silently 0).
double cosine(std::span<const double> u, std::span<const double> v);

struct KMeansResult {
  std::vector<std::uint32_t> assignments;  // per point, in [0, k)
  Matrix centroids;                        // k x dim
  double objective = 0.0;  // sum of squared point-to-centroid distances
  std::uint32_t iterations = 0;
  // Objective after each assignment pass; non-increasing by construction.
  std::vector<double> objective_history;
};

// Lloyd's algorithm with distance-weighted seeding from `rng`. Deterministic
// for a fixed seed. Ties in nearest-centroid assignment go to the lowest
// centroid index; an empty cluster is reseeded at the point farthest from its
// current centroid so exactly k groups survive. Runs to a fixed point or
// max_iters. Throws InvalidInputError when n < k, k == 0, or points are
// non-finite.
KMeansResult kmeans(const Matrix& points, std::uint32_t k, Rng& rng,
                    std::uint32_t max_iters = 100);

struct GradCheckOptions {
  std::uint32_t max_coords = 100;  // coordinates sampled (all if fewer)
  double step = 1e-5;              // scaled by 1 + |x| per coordinate
};

// Central-difference check of an analytic gradient. Returns the max over
// sampled coordinates of |g_a - g_n| / max(|g_a|, |g_n|, 1e-8). Throws
// InvalidInputError if any loss evaluation is non-finite.
double grad_check(
    const std::function<double(std::span<const double>)>& loss,
    const std::function<std::vector<double>(std::span<const double>)>& gradient,
    std::span<const double> params, Rng& rng,
    const GradCheckOptions& options = {});

}  // namespace urnet
