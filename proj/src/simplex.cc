#include "mmzi/simplex.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mmzi {

SimplexResult nelder_mead_minimize(
    const std::function<double(const std::vector<double> &)> &objective,
    const std::vector<double> &start,
    const SimplexOptions &options) {
    const size_t n = start.size();
    if (n == 0) {
        throw std::invalid_argument("nelder_mead_minimize: empty start point");
    }
    SimplexResult result;
    auto eval = [&](const std::vector<double> &x) {
        result.evaluations++;
        const double v = objective(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<std::vector<double>> pts(n + 1, start);
    std::vector<double> vals(n + 1);
    for (size_t k = 0; k < n; k++) {
        pts[k + 1][k] += options.initial_step;
    }
    for (size_t k = 0; k <= n; k++) {
        vals[k] = eval(pts[k]);
    }

    std::vector<size_t> order(n + 1);
    auto point_along = [&](const std::vector<double> &centroid, const std::vector<double> &worst, double t) {
        std::vector<double> out(n);
        for (size_t k = 0; k < n; k++) {
            out[k] = centroid[k] + t * (worst[k] - centroid[k]);
        }
        return out;
    };

    while (true) {
        std::iota(order.begin(), order.end(), size_t{0});
        // Stable sort keeps the earliest vertex on ties, so a flat objective
        // collapses onto the start point.
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return vals[a] < vals[b]; });
        const size_t best = order.front();
        const size_t worst = order.back();
        const size_t second = order[n - 1];

        double spread = 0;
        for (size_t k = 0; k <= n; k++) {
            for (size_t i = 0; i < n; i++) {
                spread = std::max(spread, std::abs(pts[k][i] - pts[best][i]));
            }
        }
        if (spread <= options.x_tolerance) {
            result.converged = true;
            break;
        }
        if (result.evaluations >= options.max_evaluations) {
            break;
        }

        std::vector<double> centroid(n, 0.0);
        for (size_t k = 0; k <= n; k++) {
            if (k == worst) {
                continue;
            }
            for (size_t i = 0; i < n; i++) {
                centroid[i] += pts[k][i] / static_cast<double>(n);
            }
        }

        const auto reflected = point_along(centroid, pts[worst], -1.0);
        const double f_ref = eval(reflected);
        if (f_ref < vals[best]) {
            const auto expanded = point_along(centroid, pts[worst], -2.0);
            const double f_exp = eval(expanded);
            if (f_exp < f_ref) {
                pts[worst] = expanded;
                vals[worst] = f_exp;
            } else {
                pts[worst] = reflected;
                vals[worst] = f_ref;
            }
            continue;
        }
        if (f_ref < vals[second]) {
            pts[worst] = reflected;
            vals[worst] = f_ref;
            continue;
        }
        const bool outside = f_ref < vals[worst];
        const auto contracted = point_along(centroid, pts[worst], outside ? -0.5 : 0.5);
        const double f_con = eval(contracted);
        if (f_con < (outside ? f_ref : vals[worst])) {
            pts[worst] = contracted;
            vals[worst] = f_con;
            continue;
        }
        for (size_t k = 0; k <= n; k++) {
            if (k == best) {
                continue;
            }
            for (size_t i = 0; i < n; i++) {
                pts[k][i] = pts[best][i] + 0.5 * (pts[k][i] - pts[best][i]);
            }
            vals[k] = eval(pts[k]);
        }
    }

    size_t best = 0;
    for (size_t k = 1; k <= n; k++) {
        if (vals[k] < vals[best]) {
            best = k;
        }
    }
    result.x = pts[best];
    result.value = vals[best];
    return result;
}

}  // namespace mmzi
