#ifndef MMZI_LANDSCAPE_H
#define MMZI_LANDSCAPE_H

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmzi/fisher.h"
#include "mmzi/fock.h"
#include "mmzi/optics.h"

namespace mmzi {

struct LandscapeCell {
    double phi1 = 0;
    double phi2 = 0;
    bool singular = false;
    /// NaN for singular cells.
    double tr_finv = 0;
    double finv11 = 0;
    double finv22 = 0;
    double det_f = 0;
};

/// Uniform grid over [0, 2pi)^2, phi2 varying fastest.
struct LandscapeGrid {
    std::vector<double> axis1;
    std::vector<double> axis2;
    std::vector<LandscapeCell> cells;

    size_t rows() const {
        return axis1.size();
    }
    size_t cols() const {
        return axis2.size();
    }
    const LandscapeCell &at(size_t i, size_t j) const {
        return cells[i * cols() + j];
    }
    size_t singular_count() const;
    /// Smallest Tr[F^-1] over non-singular cells, or nullopt.
    std::optional<LandscapeCell> min_trace_cell() const;
    double min_finv11() const;
    double min_finv22() const;
};

/// Evaluates the inverse-FIM metrics of a two-parameter MMZI and probe.
class LandscapeModel {
   public:
    LandscapeModel(MmziSetup setup, Probe probe, SingularityPolicy policy = {});

    const MmziSetup &setup() const {
        return setup_;
    }
    const OutcomeModel &outcomes() const {
        return model_;
    }
    const SingularityPolicy &policy() const {
        return policy_;
    }

    /// Classical FIM at (phi1, phi2). Throws SingularSupportError.
    FisherMatrix fisher(double phi1, double phi2) const;
    /// Never throws on singular points: they come back flagged.
    LandscapeCell evaluate(double phi1, double phi2) const;

   private:
    MmziSetup setup_;
    OutcomeModel model_;
    SingularityPolicy policy_;
};

inline constexpr size_t kDefaultResolution = 256;

/// Full resolution x resolution grid. Throws std::invalid_argument for
/// resolution < 64.
LandscapeGrid scan_grid(const LandscapeModel &model, size_t resolution = kDefaultResolution);

struct WorkingPoint {
    double phi1 = 0;
    double phi2 = 0;
    double tr_finv = 0;
    double finv11 = 0;
    double finv22 = 0;
};

struct WorkingPointOptions {
    /// Simplex stopping tolerance in radians.
    double refine_tolerance = 1e-6;
    /// Refined points closer than this (max-norm on the torus) are merged.
    double dedup_radius = 1e-3;
    /// Only the best this-many grid minima are refined.
    size_t max_candidates = 64;
};

/// Metrics at an arbitrary phase pair; nullopt marks a singular point.
using MetricFunction = std::function<std::optional<WorkingPoint>(double, double)>;

/// Local minima of Tr[F^-1] on the grid, refined by simplex descent with phase
/// wraparound, deduplicated and sorted ascending by Tr[F^-1].
///
/// A grid cell is a candidate when it is non-singular and no non-singular
/// 8-neighbour (with wraparound) is lower. Connected candidates with equal
/// value form a plateau represented by its first cell in row-major order, so a
/// constant grid yields the single corner cell (0, 0). Throws
/// std::invalid_argument if the grid is empty or every cell is singular.
std::vector<WorkingPoint> find_working_points(
    const LandscapeGrid &grid, const MetricFunction &metrics, const WorkingPointOptions &options = {});
std::vector<WorkingPoint> find_working_points(
    const LandscapeGrid &grid, const LandscapeModel &model, const WorkingPointOptions &options = {});

struct StabilityReport {
    size_t samples = 0;
    size_t singular_count = 0;
    double min_abs_det = 0;
    double max_condition = 0;
    double max_trace = 0;
};

inline constexpr size_t kStabilitySamples = 1000;

/// Samples a disc of radius `radius` around `center` on a golden-angle spiral
/// (quasi-uniform in area) and reports how many samples the model's
/// singularity policy flags. Throws std::invalid_argument unless radius > 0.
StabilityReport stability_region(
    const LandscapeModel &model,
    std::array<double, 2> center,
    double radius,
    size_t samples = kStabilitySamples);

enum class GridFormat { Csv, Json };

/// Parses "csv" or "json". Throws std::invalid_argument otherwise.
GridFormat parse_grid_format(const std::string &name);

std::string grid_to_csv(const LandscapeGrid &grid);
std::string grid_to_json(const LandscapeGrid &grid);
LandscapeGrid grid_from_csv(const std::string &text);
LandscapeGrid grid_from_json(const std::string &text);

/// Throws std::runtime_error on I/O failure.
void export_grid(const LandscapeGrid &grid, const std::string &path, GridFormat format);
LandscapeGrid import_grid(const std::string &path, GridFormat format);

}  // namespace mmzi

#endif
