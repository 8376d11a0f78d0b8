#include "mmzi/cli.h"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "mmzi/adaptive.h"
#include "mmzi/fisher.h"
#include "mmzi/landscape.h"

namespace mmzi {

using nlohmann::json;

namespace {

/// Unstable setups and all-singular landscapes: exit code 2.
class PreconditionError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

void reject_unknown(const json &obj, const std::string &where, const std::set<std::string> &allowed) {
    if (!obj.is_object()) {
        throw ConfigError(where + ": expected an object");
    }
    for (const auto &[key, value] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("unknown config key '" + where + "." + key + "'");
        }
    }
}

template <typename T>
void read(const json &obj, const std::string &where, const char *key, T &dst) {
    if (!obj.contains(key)) {
        return;
    }
    try {
        dst = obj.at(key).get<T>();
    } catch (const json::exception &) {
        throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
    }
}

template <typename T>
void read_optional(const json &obj, const std::string &where, const char *key, std::optional<T> &dst) {
    if (!obj.contains(key) || obj.at(key).is_null()) {
        return;
    }
    T value;
    read(obj, where, key, value);
    dst = value;
}

/// Unsigned integers must not come in as negative or fractional JSON numbers.
template <typename T>
void read_count(const json &obj, const std::string &where, const char *key, T &dst) {
    if (!obj.contains(key)) {
        return;
    }
    const auto &v = obj.at(key);
    if (!v.is_number_unsigned()) {
        throw ConfigError("config key '" + where + "." + key + "' must be a non-negative integer");
    }
    dst = v.get<T>();
}

template <typename T>
json optional_json(const std::optional<T> &v) {
    return v ? json(*v) : json(nullptr);
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

void write_file(const std::string &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    f << text;
    f.close();
    if (!f) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

Probe make_probe(const RunConfig &c) {
    if (c.probe == "fock") {
        return Probe::single_photons(c.modes);
    }
    if (c.probe == "distinguishable") {
        return Probe::distinguishable(Probe::single_photons(c.modes).occupations);
    }
    return Probe::coherent(c.alpha_or_default(), c.input_mode);
}

MmziSetup make_setup(const RunConfig &c) {
    if (c.modes == 4 && !(c.phi0 > 0)) {
        throw PreconditionError(
            "phi0 must be > 0 for the 4-mode interferometer: at phi0 = 0 the Fisher matrix is singular along a line "
            "through the working point [pi, pi] and estimation around it is unstable");
    }
    return c.modes == 3 ? MmziSetup::three_mode() : MmziSetup::four_mode(c.phi0);
}

SingularityPolicy make_policy(const RunConfig &c) {
    return SingularityPolicy{c.max_condition, c.min_abs_det};
}

unsigned photon_count(const RunConfig &c) {
    const double n = std::round(make_probe(c).mean_photons());
    if (n < 1) {
        throw ConfigError("probe carries less than one photon on average; separable bounds need N >= 1");
    }
    return static_cast<unsigned>(n);
}

json matrix_json(const Eigen::MatrixXd &m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); i++) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); j++) {
            row.push_back(m(i, j));
        }
        rows.push_back(row);
    }
    return rows;
}

json working_point_json(const WorkingPoint &wp) {
    return json{{"phi1", wp.phi1},
                {"phi2", wp.phi2},
                {"tr_finv", wp.tr_finv},
                {"finv11", wp.finv11},
                {"finv22", wp.finv22}};
}

std::vector<WorkingPoint> working_points(const RunConfig &c, const LandscapeModel &model, const LandscapeGrid &grid) {
    if (grid.singular_count() == grid.cells.size()) {
        throw PreconditionError("every landscape cell is singular; no working point exists");
    }
    WorkingPointOptions options;
    options.refine_tolerance = c.refine_or_default();
    return find_working_points(grid, model, options);
}

json envelope(const RunConfig &c, const char *command) {
    return json{{"schema_version", kRunRecordSchemaVersion}, {"command", command}, {"config", c.to_json()}};
}

int cmd_scan(const RunConfig &c, std::ostream &out) {
    if (!c.scan_output) {
        throw ConfigError("scan needs an output path (--out or scan.output)");
    }
    const LandscapeModel model(make_setup(c), make_probe(c), make_policy(c));
    const auto grid = scan_grid(model, c.resolution);
    export_grid(grid, *c.scan_output, parse_grid_format(c.format));
    out << "grid: " << c.resolution << "x" << c.resolution << " written to " << *c.scan_output << "\n";
    out << "singular cells: " << grid.singular_count() << "\n";
    const auto best = grid.min_trace_cell();
    if (!best) {
        out << "min tr_finv: none (all cells singular)\n";
        return 0;
    }
    out << std::setprecision(6);
    out << "grid min tr_finv: " << best->tr_finv << " at (" << best->phi1 << ", " << best->phi2 << ")\n";
    out << "grid min finv11: " << grid.min_finv11() << "\n";
    out << "grid min finv22: " << grid.min_finv22() << "\n";
    const auto wps = working_points(c, model, grid);
    out << "min tr_finv: " << wps.front().tr_finv << "\n";
    out << "minima:\n";
    for (const auto &wp : wps) {
        if (wp.tr_finv > wps.front().tr_finv + 1e-6) {
            break;
        }
        out << "  (" << wp.phi1 << ", " << wp.phi2 << ") tr_finv " << wp.tr_finv << " diag (" << wp.finv11 << ", "
            << wp.finv22 << ")\n";
    }
    return 0;
}

int cmd_workpoints(const RunConfig &c, std::ostream &out) {
    const LandscapeModel model(make_setup(c), make_probe(c), make_policy(c));
    const auto grid = scan_grid(model, c.resolution);
    json doc = envelope(c, "workpoints");
    doc["working_points"] = json::array();
    for (const auto &wp : working_points(c, model, grid)) {
        doc["working_points"].push_back(working_point_json(wp));
    }
    out << doc.dump(2) << "\n";
    return 0;
}

int cmd_bounds(const RunConfig &c, std::ostream &out) {
    const MmziSetup setup = make_setup(c);
    const Probe probe = make_probe(c);
    const GeneratorSet gens{setup.unknown_modes};
    const FisherMatrix fq = probe_qfim(setup.splitter, probe, gens);
    const auto params = SeparableBoundParams::number_generators(photon_count(c), gens.modes.size());
    const auto bounds = separable_bounds(params);
    const auto fq_inv = invert_fisher(fq, make_policy(c));

    json doc = envelope(c, "bounds");
    doc["probe"] = probe_kind_name(probe.kind);
    doc["mean_photons"] = probe.mean_photons();
    doc["photons"] = params.photons;
    doc["qfim"] = matrix_json(fq.entries);
    doc["qfim_singular"] = fq_inv.singular;
    doc["qfim_trace_inv"] = fq_inv.singular ? json(nullptr) : json(fq_inv.trace());
    doc["separable"] = json{{"fjj_max", bounds.fjj_max},
                            {"inv_diag_min", bounds.inv_diag_min},
                            {"trace_min", bounds.trace_min}};
    doc["separable_trace_min"] = bounds.trace_min;

    const auto verdict_json = [](const WitnessVerdict &v) {
        json j{{"singular", v.singular}, {"entangled", v.entangled}, {"fjj_violation", v.fjj_violation}};
        j["inv_diag_violation"] = v.inv_diag_violation;
        j["trace_violation"] = optional_json(v.trace_violation);
        j["tr_finv"] = optional_json(v.trace_finv);
        return j;
    };
    doc["qfim_witness"] = verdict_json(entanglement_witness(fq, params, make_policy(c)));

    const LandscapeModel model(setup, probe, make_policy(c));
    const auto grid = scan_grid(model, c.resolution);
    const auto wps = working_points(c, model, grid);
    const auto &best = wps.front();
    json classical = working_point_json(best);
    classical["witness"] = verdict_json(entanglement_witness(model.fisher(best.phi1, best.phi2), params, make_policy(c)));
    doc["best_working_point"] = classical;
    out << doc.dump(2) << "\n";
    return 0;
}

int cmd_adaptive(const RunConfig &c, std::ostream &out) {
    if (c.probe != "fock") {
        throw ConfigError("the adaptive protocol runs with the one-photon-per-mode Fock probe only");
    }
    if (!c.adaptive_output) {
        throw ConfigError("adaptive needs an output path (--out or adaptive.output)");
    }
    if (c.repetitions < 2) {
        throw ConfigError("adaptive needs at least 2 repetitions for statistics");
    }
    make_setup(c);  // phi0 precondition
    AdaptiveConfig ac;
    ac.modes = c.modes;
    ac.phi0 = c.phi0;
    ac.true_phases = c.true_phases;
    ac.nu = c.nu;
    ac.fractions = c.fractions_or_default();
    try {
        ac.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
    const AdaptiveProtocol protocol(ac);
    const auto mc = monte_carlo(protocol, c.repetitions, c.seed, c.bound_or_default());

    json doc = envelope(c, "adaptive");
    doc["timestamp"] = timestamp_utc();
    doc["master_seed"] = mc.master_seed;
    doc["repetitions"] = mc.repetitions;
    doc["bound"] = mc.bound;
    json reps = json::array();
    for (size_t r = 0; r < mc.repetitions; r++) {
        reps.push_back(json{{"seed", repetition_seed(c.seed, r)},
                            {"estimate", mc.estimates[r]},
                            {"sigma", mc.sigmas[r]},
                            {"rough_redraws", mc.rough_redraws[r]}});
    }
    doc["runs"] = std::move(reps);
    json stats = json::array();
    for (const auto &s : mc.stats) {
        stats.push_back(json{{"bias", s.bias},
                             {"std", s.std_dev},
                             {"std_sqrt_nu", s.scaled},
                             {"ratio_to_bound", s.ratio},
                             {"predicted_sqrt_nu", s.predicted_scaled}});
    }
    doc["stats"] = stats;
    write_file(*c.adaptive_output, doc.dump(2) + "\n");

    out << "adaptive " << c.modes << "-mode, nu " << c.nu << ", p " << c.repetitions << ", seed " << c.seed << "\n";
    out << "param  bias        std*sqrt(nu)  ratio   predicted\n";
    out << std::fixed;
    for (size_t i = 0; i < mc.stats.size(); i++) {
        const auto &s = mc.stats[i];
        out << "phi" << i + 1 << "   " << std::setprecision(6) << std::setw(10) << s.bias << "  " << std::setprecision(4)
            << std::setw(12) << s.scaled << "  " << std::setw(6) << s.ratio << "  " << std::setw(9)
            << s.predicted_scaled << "\n";
    }
    out << "run record: " << *c.adaptive_output << "\n";
    return 0;
}

}  // namespace

RunConfig RunConfig::from_json(const json &doc) {
    RunConfig c;
    reject_unknown(doc, "config", {"circuit", "scan", "adaptive", "tolerances", "schema_version"});
    if (doc.contains("schema_version") && doc.at("schema_version") != kRunRecordSchemaVersion) {
        throw ConfigError("unsupported config schema_version");
    }
    if (doc.contains("circuit")) {
        const auto &j = doc.at("circuit");
        reject_unknown(j, "circuit", {"modes", "probe", "alpha", "input_mode", "phi0"});
        read_count(j, "circuit", "modes", c.modes);
        read(j, "circuit", "probe", c.probe);
        read_optional(j, "circuit", "alpha", c.alpha);
        read_count(j, "circuit", "input_mode", c.input_mode);
        read(j, "circuit", "phi0", c.phi0);
    }
    if (doc.contains("scan")) {
        const auto &j = doc.at("scan");
        reject_unknown(j, "scan", {"resolution", "output", "format"});
        read_count(j, "scan", "resolution", c.resolution);
        read_optional(j, "scan", "output", c.scan_output);
        read(j, "scan", "format", c.format);
    }
    if (doc.contains("adaptive")) {
        const auto &j = doc.at("adaptive");
        reject_unknown(j, "adaptive", {"true_phases", "nu", "fractions", "repetitions", "seed", "output", "bound"});
        read(j, "adaptive", "true_phases", c.true_phases);
        read_count(j, "adaptive", "nu", c.nu);
        read_optional(j, "adaptive", "fractions", c.fractions);
        read_count(j, "adaptive", "repetitions", c.repetitions);
        read_count(j, "adaptive", "seed", c.seed);
        read_optional(j, "adaptive", "output", c.adaptive_output);
        read_optional(j, "adaptive", "bound", c.bound);
    }
    if (doc.contains("tolerances")) {
        const auto &j = doc.at("tolerances");
        reject_unknown(j, "tolerances", {"max_condition", "min_abs_det", "refine"});
        read(j, "tolerances", "max_condition", c.max_condition);
        read(j, "tolerances", "min_abs_det", c.min_abs_det);
        read_optional(j, "tolerances", "refine", c.refine);
    }
    return c;
}

json RunConfig::to_json() const {
    return json{{"schema_version", kRunRecordSchemaVersion},
                {"circuit",
                 {{"modes", modes},
                  {"probe", probe},
                  {"alpha", optional_json(alpha)},
                  {"input_mode", input_mode},
                  {"phi0", phi0}}},
                {"scan", {{"resolution", resolution}, {"output", optional_json(scan_output)}, {"format", format}}},
                {"adaptive",
                 {{"true_phases", true_phases},
                  {"nu", nu},
                  {"fractions", optional_json(fractions)},
                  {"repetitions", repetitions},
                  {"seed", seed},
                  {"output", optional_json(adaptive_output)},
                  {"bound", optional_json(bound)}}},
                {"tolerances",
                 {{"max_condition", max_condition}, {"min_abs_det", min_abs_det}, {"refine", optional_json(refine)}}}};
}

void RunConfig::validate() const {
    if (modes != 3 && modes != 4) {
        throw ConfigError("circuit.modes must be 3 or 4");
    }
    if (probe != "fock" && probe != "coherent" && probe != "distinguishable") {
        throw ConfigError("circuit.probe must be fock, coherent or distinguishable");
    }
    if (alpha && !(*alpha > 0)) {
        throw ConfigError("circuit.alpha must be positive");
    }
    if (input_mode >= modes) {
        throw ConfigError("circuit.input_mode must be below circuit.modes");
    }
    if (!std::isfinite(phi0)) {
        throw ConfigError("circuit.phi0 must be finite");
    }
    if (resolution < 64) {
        throw ConfigError("scan.resolution must be at least 64");
    }
    if (format != "csv" && format != "json") {
        throw ConfigError("scan.format must be csv or json");
    }
    if (true_phases.size() != 2) {
        throw ConfigError("adaptive.true_phases must hold two values");
    }
    if (nu == 0) {
        throw ConfigError("adaptive.nu must be positive");
    }
    if (bound && !(*bound > 0)) {
        throw ConfigError("adaptive.bound must be positive");
    }
    if (!(max_condition > 1) || !(min_abs_det >= 0)) {
        throw ConfigError("tolerances.max_condition must exceed 1 and tolerances.min_abs_det be non-negative");
    }
    if (refine && !(*refine > 0)) {
        throw ConfigError("tolerances.refine must be positive");
    }
}

double RunConfig::alpha_or_default() const {
    return alpha ? *alpha : std::sqrt(static_cast<double>(modes));
}

std::vector<double> RunConfig::fractions_or_default() const {
    if (fractions) {
        return *fractions;
    }
    return modes == 3 ? std::vector<double>{0.05, 0.475, 0.475} : std::vector<double>{0.05, 0.95};
}

double RunConfig::bound_or_default() const {
    if (bound) {
        return *bound;
    }
    return modes == 3 ? 0.543 : 0.437;
}

double RunConfig::refine_or_default() const {
    return refine ? *refine : WorkingPointOptions{}.refine_tolerance;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Multiphase estimation in multiarm Mach-Zehnder interferometers"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out_path;
    std::optional<size_t> resolution;
    std::optional<double> phi0;
    std::optional<uint64_t> nu;
    std::optional<size_t> reps;
    std::optional<size_t> modes;
    std::optional<std::string> probe;
    std::optional<std::string> format;

    std::vector<CLI::App *> commands;
    for (const char *name : {"scan", "bounds", "adaptive", "workpoints"}) {
        auto *sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--seed", seed, "Monte Carlo master seed");
        sub->add_option("--out", out_path, "output file");
        sub->add_option("--resolution", resolution, "grid points per axis");
        sub->add_option("--phi0", phi0, "4-mode reference phase");
        sub->add_option("--nu", nu, "measurements per protocol run");
        sub->add_option("--reps", reps, "Monte Carlo repetitions");
        sub->add_option("--modes", modes, "3 or 4");
        sub->add_option("--probe", probe, "fock, coherent or distinguishable");
        sub->add_option("--format", format, "grid format: csv or json");
        commands.push_back(sub);
    }
    commands[0]->description("scan the Tr[F^-1] landscape and write the grid");
    commands[1]->description("quantum Fisher information and separable-state bounds");
    commands[2]->description("Monte Carlo of the adaptive estimation protocol");
    commands[3]->description("refined working points of the landscape");

    std::vector<const char *> argv{"mmzi"};
    for (const auto &a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }
    const auto *sub = app.get_subcommands().front();
    const std::string command = sub->get_name();

    try {
        RunConfig c;
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) {
                throw ConfigError("cannot read config '" + config_path + "'");
            }
            json doc;
            try {
                doc = json::parse(f);
            } catch (const json::parse_error &e) {
                throw ConfigError(std::string("config is not valid JSON: ") + e.what());
            }
            c = RunConfig::from_json(doc);
        }
        if (seed) c.seed = *seed;
        if (resolution) c.resolution = *resolution;
        if (phi0) c.phi0 = *phi0;
        if (nu) c.nu = *nu;
        if (reps) c.repetitions = *reps;
        if (modes) c.modes = *modes;
        if (probe) c.probe = *probe;
        if (format) c.format = *format;
        if (out_path) {
            (command == "adaptive" ? c.adaptive_output : c.scan_output) = *out_path;
        }
        c.validate();

        if (command == "scan") {
            return cmd_scan(c, out);
        }
        if (command == "adaptive") {
            return cmd_adaptive(c, out);
        }
        std::ostringstream buffer;
        const int code = command == "bounds" ? cmd_bounds(c, buffer) : cmd_workpoints(c, buffer);
        out << buffer.str();
        if (out_path) {
            write_file(*out_path, buffer.str());
        }
        return code;
    } catch (const std::invalid_argument &e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace mmzi
