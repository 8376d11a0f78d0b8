#ifndef MMZI_SIMPLEX_H
#define MMZI_SIMPLEX_H

#include <cstddef>
#include <functional>
#include <vector>

namespace mmzi {

struct SimplexOptions {
    double initial_step = 0.05;
    /// Stop once every vertex lies within this distance (max-norm) of the best.
    double x_tolerance = 1e-6;
    size_t max_evaluations = 4000;
};

struct SimplexResult {
    std::vector<double> x;
    double value = 0;
    size_t evaluations = 0;
    bool converged = false;
};

/// Nelder-Mead minimization. Non-finite objective values are treated as +inf,
/// so the simplex walks away from them. The start point is a vertex of the
/// initial simplex, hence the result is never worse than the start.
SimplexResult nelder_mead_minimize(
    const std::function<double(const std::vector<double> &)> &objective,
    const std::vector<double> &start,
    const SimplexOptions &options = {});

}  // namespace mmzi

#endif
