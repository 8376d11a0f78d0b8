#ifndef MMZI_CLI_H
#define MMZI_CLI_H

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace mmzi {

inline constexpr int kRunRecordSchemaVersion = 1;

/// Raised for malformed or inconsistent configuration; maps to exit code 1.
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Everything a command needs. Defaults:
///
///   circuit:    modes 3, probe "fock", alpha sqrt(modes), input_mode 0, phi0 0.01
///   scan:       resolution 256, output none, format "csv"
///   adaptive:   true_phases [1, 2], nu 10000, fractions {0.05, 0.475, 0.475}
///               (3 modes) or {0.05, 0.95} (4 modes), repetitions 200, seed 42,
///               output none, bound 0.543 / 0.437
///   tolerances: max_condition 1e10, min_abs_det 1e-12, refine 1e-6
///
/// Command-line flags override file values, which override defaults.
struct RunConfig {
    size_t modes = 3;
    std::string probe = "fock";
    std::optional<double> alpha;
    size_t input_mode = 0;
    double phi0 = 0.01;

    size_t resolution = 256;
    std::optional<std::string> scan_output;
    std::string format = "csv";

    std::vector<double> true_phases{1.0, 2.0};
    uint64_t nu = 10000;
    std::optional<std::vector<double>> fractions;
    size_t repetitions = 200;
    uint64_t seed = 42;
    std::optional<std::string> adaptive_output;
    std::optional<double> bound;

    double max_condition = 1e10;
    double min_abs_det = 1e-12;
    std::optional<double> refine;

    /// Throws ConfigError on unknown keys, wrong types or invalid values.
    static RunConfig from_json(const nlohmann::json &doc);
    nlohmann::json to_json() const;
    /// Range and consistency checks shared by every command.
    void validate() const;

    double alpha_or_default() const;
    std::vector<double> fractions_or_default() const;
    double bound_or_default() const;
    double refine_or_default() const;
};

/// Runs one subcommand (scan | bounds | adaptive | workpoints). `args`
/// excludes the program name. Returns 0 on success, 1 for usage or
/// configuration errors, 2 for runtime failures (I/O, unstable setups, an
/// all-singular landscape).
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace mmzi

#endif
