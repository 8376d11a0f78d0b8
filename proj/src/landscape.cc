#include "mmzi/landscape.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mmzi/parallel.h"
#include "mmzi/simplex.h"

namespace mmzi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> uniform_axis(size_t n) {
    std::vector<double> axis(n);
    for (size_t k = 0; k < n; k++) {
        axis[k] = kTwoPi * static_cast<double>(k) / static_cast<double>(n);
    }
    return axis;
}

double torus_distance(double a1, double a2, double b1, double b2) {
    return std::max(std::abs(wrapped_difference(a1, b1)), std::abs(wrapped_difference(a2, b2)));
}

}  // namespace

size_t LandscapeGrid::singular_count() const {
    return static_cast<size_t>(std::count_if(cells.begin(), cells.end(), [](const auto &c) { return c.singular; }));
}

std::optional<LandscapeCell> LandscapeGrid::min_trace_cell() const {
    std::optional<LandscapeCell> best;
    for (const auto &c : cells) {
        if (!c.singular && (!best || c.tr_finv < best->tr_finv)) {
            best = c;
        }
    }
    return best;
}

double LandscapeGrid::min_finv11() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto &c : cells) {
        if (!c.singular) {
            best = std::min(best, c.finv11);
        }
    }
    return best;
}

double LandscapeGrid::min_finv22() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto &c : cells) {
        if (!c.singular) {
            best = std::min(best, c.finv22);
        }
    }
    return best;
}

LandscapeModel::LandscapeModel(MmziSetup setup, Probe probe, SingularityPolicy policy)
    : setup_(std::move(setup)),
      model_(setup_.splitter, setup_.splitter, std::move(probe)),
      policy_(policy) {
    if (setup_.num_unknown() != 2) {
        throw std::invalid_argument("LandscapeModel: landscapes need exactly two unknown phases");
    }
}

FisherMatrix LandscapeModel::fisher(double phi1, double phi2) const {
    return fisher_matrix(model_.distribution(setup_.config({phi1, phi2})));
}

LandscapeCell LandscapeModel::evaluate(double phi1, double phi2) const {
    LandscapeCell cell;
    cell.phi1 = phi1;
    cell.phi2 = phi2;
    FisherMatrix f;
    try {
        f = fisher(phi1, phi2);
    } catch (const SingularSupportError &) {
        cell.singular = true;
        cell.tr_finv = cell.finv11 = cell.finv22 = kNaN;
        cell.det_f = 0;
        return cell;
    }
    const FisherInverse inv = invert_fisher(f, policy_);
    cell.det_f = inv.determinant;
    cell.singular = inv.singular;
    if (inv.singular) {
        cell.tr_finv = cell.finv11 = cell.finv22 = kNaN;
    } else {
        cell.tr_finv = inv.trace();
        cell.finv11 = inv.diag(0);
        cell.finv22 = inv.diag(1);
    }
    return cell;
}

LandscapeGrid scan_grid(const LandscapeModel &model, size_t resolution) {
    if (resolution < 64) {
        throw std::invalid_argument("scan_grid: resolution must be at least 64");
    }
    LandscapeGrid grid;
    grid.axis1 = uniform_axis(resolution);
    grid.axis2 = uniform_axis(resolution);
    grid.cells.resize(resolution * resolution);
    parallel_for(resolution, [&](size_t i) {
        for (size_t j = 0; j < resolution; j++) {
            grid.cells[i * resolution + j] = model.evaluate(grid.axis1[i], grid.axis2[j]);
        }
    });
    return grid;
}

std::vector<WorkingPoint> find_working_points(
    const LandscapeGrid &grid, const MetricFunction &metrics, const WorkingPointOptions &options) {
    const size_t rows = grid.rows();
    const size_t cols = grid.cols();
    if (rows == 0 || cols == 0 || grid.cells.size() != rows * cols) {
        throw std::invalid_argument("find_working_points: empty or malformed grid");
    }
    if (grid.singular_count() == grid.cells.size()) {
        throw std::invalid_argument("find_working_points: every grid cell is singular");
    }

    auto value = [&](size_t i, size_t j) {
        const auto &c = grid.at(i, j);
        return c.singular ? std::numeric_limits<double>::infinity() : c.tr_finv;
    };
    auto neighbours = [&](size_t i, size_t j) {
        std::vector<std::pair<size_t, size_t>> out;
        for (int di = -1; di <= 1; di++) {
            for (int dj = -1; dj <= 1; dj++) {
                if (di == 0 && dj == 0) {
                    continue;
                }
                const size_t ni = (i + rows + static_cast<size_t>(di + static_cast<int>(rows))) % rows;
                const size_t nj = (j + cols + static_cast<size_t>(dj + static_cast<int>(cols))) % cols;
                if (ni != i || nj != j) {
                    out.emplace_back(ni, nj);
                }
            }
        }
        return out;
    };

    std::vector<char> candidate(rows * cols, 0);
    for (size_t i = 0; i < rows; i++) {
        for (size_t j = 0; j < cols; j++) {
            const double v = value(i, j);
            if (!std::isfinite(v)) {
                continue;
            }
            bool lowest = true;
            for (auto [ni, nj] : neighbours(i, j)) {
                if (value(ni, nj) < v) {
                    lowest = false;
                    break;
                }
            }
            candidate[i * cols + j] = lowest ? 1 : 0;
        }
    }

    // Collapse plateaus: flood-fill equal-valued candidate neighbours, keeping
    // the first cell in row-major order.
    std::vector<size_t> reps;
    std::vector<char> seen(rows * cols, 0);
    for (size_t idx = 0; idx < rows * cols; idx++) {
        if (!candidate[idx] || seen[idx]) {
            continue;
        }
        reps.push_back(idx);
        std::vector<size_t> stack{idx};
        seen[idx] = 1;
        const double v = value(idx / cols, idx % cols);
        while (!stack.empty()) {
            const size_t cur = stack.back();
            stack.pop_back();
            for (auto [ni, nj] : neighbours(cur / cols, cur % cols)) {
                const size_t nidx = ni * cols + nj;
                if (candidate[nidx] && !seen[nidx] && value(ni, nj) == v) {
                    seen[nidx] = 1;
                    stack.push_back(nidx);
                }
            }
        }
    }
    std::stable_sort(reps.begin(), reps.end(), [&](size_t a, size_t b) {
        return value(a / cols, a % cols) < value(b / cols, b % cols);
    });
    if (reps.size() > options.max_candidates) {
        reps.resize(options.max_candidates);
    }

    const double spacing = kTwoPi / static_cast<double>(std::max(rows, cols));
    std::vector<WorkingPoint> refined(reps.size());
    parallel_for(reps.size(), [&](size_t k) {
        const auto &cell = grid.at(reps[k] / cols, reps[k] % cols);
        auto objective = [&](const std::vector<double> &x) {
            auto m = metrics(reduce_phase(x[0]), reduce_phase(x[1]));
            return m ? m->tr_finv : std::numeric_limits<double>::infinity();
        };
        SimplexOptions so;
        so.initial_step = 0.5 * spacing;
        so.x_tolerance = options.refine_tolerance;
        const auto res = nelder_mead_minimize(objective, {cell.phi1, cell.phi2}, so);
        auto m = metrics(reduce_phase(res.x[0]), reduce_phase(res.x[1]));
        if (m && m->tr_finv <= cell.tr_finv) {
            refined[k] = *m;
        } else {
            refined[k] = WorkingPoint{cell.phi1, cell.phi2, cell.tr_finv, cell.finv11, cell.finv22};
        }
    });

    std::stable_sort(refined.begin(), refined.end(), [](const auto &a, const auto &b) {
        return a.tr_finv < b.tr_finv;
    });
    std::vector<WorkingPoint> out;
    for (const auto &wp : refined) {
        const bool duplicate = std::any_of(out.begin(), out.end(), [&](const auto &kept) {
            return torus_distance(kept.phi1, kept.phi2, wp.phi1, wp.phi2) < options.dedup_radius;
        });
        if (!duplicate) {
            out.push_back(wp);
        }
    }
    return out;
}

std::vector<WorkingPoint> find_working_points(
    const LandscapeGrid &grid, const LandscapeModel &model, const WorkingPointOptions &options) {
    MetricFunction metrics = [&model](double a, double b) -> std::optional<WorkingPoint> {
        const LandscapeCell c = model.evaluate(a, b);
        if (c.singular) {
            return std::nullopt;
        }
        return WorkingPoint{c.phi1, c.phi2, c.tr_finv, c.finv11, c.finv22};
    };
    return find_working_points(grid, metrics, options);
}

StabilityReport stability_region(
    const LandscapeModel &model, std::array<double, 2> center, double radius, size_t samples) {
    if (!(radius > 0)) {
        throw std::invalid_argument("stability_region: radius must be positive");
    }
    if (samples == 0) {
        throw std::invalid_argument("stability_region: need at least one sample");
    }
    const double golden_angle = kPi * (3.0 - std::sqrt(5.0));
    std::vector<LandscapeCell> cells(samples);
    parallel_for(samples, [&](size_t k) {
        const double r = radius * std::sqrt((static_cast<double>(k) + 0.5) / static_cast<double>(samples));
        const double t = golden_angle * static_cast<double>(k);
        cells[k] = model.evaluate(reduce_phase(center[0] + r * std::cos(t)), reduce_phase(center[1] + r * std::sin(t)));
    });
    StabilityReport report;
    report.samples = samples;
    report.min_abs_det = std::numeric_limits<double>::infinity();
    for (const auto &c : cells) {
        report.singular_count += c.singular ? 1 : 0;
        report.min_abs_det = std::min(report.min_abs_det, std::abs(c.det_f));
        if (!c.singular) {
            report.max_trace = std::max(report.max_trace, c.tr_finv);
        }
    }
    // Condition numbers are recomputed only for the report; evaluate() keeps
    // the grid record small.
    for (const auto &c : cells) {
        try {
            const auto inv = invert_fisher(model.fisher(c.phi1, c.phi2), model.policy());
            report.max_condition = std::max(report.max_condition, inv.condition);
        } catch (const SingularSupportError &) {
            report.max_condition = std::numeric_limits<double>::infinity();
        }
    }
    return report;
}

GridFormat parse_grid_format(const std::string &name) {
    if (name == "csv") {
        return GridFormat::Csv;
    }
    if (name == "json") {
        return GridFormat::Json;
    }
    throw std::invalid_argument("unknown grid format '" + name + "' (expected csv or json)");
}

namespace {

std::string format_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

std::vector<std::string> split(const std::string &line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

/// Rebuilds the axes from the cell coordinates (phi2 fastest).
void rebuild_axes(LandscapeGrid &grid) {
    grid.axis1.clear();
    grid.axis2.clear();
    for (const auto &c : grid.cells) {
        if (grid.axis1.empty() || grid.axis1.back() != c.phi1) {
            grid.axis1.push_back(c.phi1);
        }
    }
    for (const auto &c : grid.cells) {
        if (c.phi1 != grid.cells.front().phi1) {
            break;
        }
        grid.axis2.push_back(c.phi2);
    }
    if (grid.axis1.size() * grid.axis2.size() != grid.cells.size()) {
        throw std::invalid_argument("grid file rows do not form a phi2-fastest rectangular grid");
    }
}

double parse_number(const std::string &s) {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) {
        throw std::invalid_argument("bad number '" + s + "'");
    }
    return v;
}

}  // namespace

std::string grid_to_csv(const LandscapeGrid &grid) {
    std::ostringstream out;
    out << "phi1,phi2,tr_finv,finv11,finv22,detF,singular\n";
    for (const auto &c : grid.cells) {
        out << format_double(c.phi1) << ',' << format_double(c.phi2) << ',';
        if (c.singular) {
            out << ",,,";
        } else {
            out << format_double(c.tr_finv) << ',' << format_double(c.finv11) << ',' << format_double(c.finv22)
                << ',';
        }
        out << format_double(c.det_f) << ',' << (c.singular ? 1 : 0) << '\n';
    }
    return out.str();
}

LandscapeGrid grid_from_csv(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || split(line, ',') != std::vector<std::string>{
                                                          "phi1", "phi2", "tr_finv", "finv11", "finv22", "detF",
                                                          "singular"}) {
        throw std::invalid_argument("grid CSV: unexpected header");
    }
    LandscapeGrid grid;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 7) {
            throw std::invalid_argument("grid CSV: expected 7 fields in '" + line + "'");
        }
        LandscapeCell c;
        c.phi1 = parse_number(f[0]);
        c.phi2 = parse_number(f[1]);
        c.det_f = parse_number(f[5]);
        if (f[6] != "0" && f[6] != "1") {
            throw std::invalid_argument("grid CSV: singular flag must be 0 or 1");
        }
        c.singular = f[6] == "1";
        if (c.singular) {
            c.tr_finv = c.finv11 = c.finv22 = kNaN;
        } else {
            c.tr_finv = parse_number(f[2]);
            c.finv11 = parse_number(f[3]);
            c.finv22 = parse_number(f[4]);
        }
        grid.cells.push_back(c);
    }
    rebuild_axes(grid);
    return grid;
}

std::string grid_to_json(const LandscapeGrid &grid) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto &c : grid.cells) {
        nlohmann::json rec;
        rec["phi1"] = c.phi1;
        rec["phi2"] = c.phi2;
        if (c.singular) {
            rec["tr_finv"] = nullptr;
            rec["finv11"] = nullptr;
            rec["finv22"] = nullptr;
        } else {
            rec["tr_finv"] = c.tr_finv;
            rec["finv11"] = c.finv11;
            rec["finv22"] = c.finv22;
        }
        rec["detF"] = c.det_f;
        rec["singular"] = c.singular ? 1 : 0;
        cells.push_back(std::move(rec));
    }
    nlohmann::json doc;
    doc["schema_version"] = 1;
    doc["rows"] = grid.rows();
    doc["cols"] = grid.cols();
    doc["cells"] = std::move(cells);
    return doc.dump(1);
}

LandscapeGrid grid_from_json(const std::string &text) {
    const auto doc = nlohmann::json::parse(text);
    LandscapeGrid grid;
    for (const auto &rec : doc.at("cells")) {
        LandscapeCell c;
        c.phi1 = rec.at("phi1").get<double>();
        c.phi2 = rec.at("phi2").get<double>();
        c.det_f = rec.at("detF").get<double>();
        c.singular = rec.at("singular").get<int>() == 1;
        if (c.singular) {
            c.tr_finv = c.finv11 = c.finv22 = kNaN;
        } else {
            c.tr_finv = rec.at("tr_finv").get<double>();
            c.finv11 = rec.at("finv11").get<double>();
            c.finv22 = rec.at("finv22").get<double>();
        }
        grid.cells.push_back(c);
    }
    rebuild_axes(grid);
    return grid;
}

void export_grid(const LandscapeGrid &grid, const std::string &path, GridFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << (format == GridFormat::Csv ? grid_to_csv(grid) : grid_to_json(grid));
    out.close();
    if (!out) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

LandscapeGrid import_grid(const std::string &path, GridFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return format == GridFormat::Csv ? grid_from_csv(ss.str()) : grid_from_json(ss.str());
}

}  // namespace mmzi
