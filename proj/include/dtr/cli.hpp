#ifndef DTR_CLI_HPP
#define DTR_CLI_HPP

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dtr {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDiagnoseGate = 1;  // diagnose: hat norm exceeds 1
inline constexpr int kExitValidation = 2;    // bad flags, config, or data
inline constexpr int kExitNumerical = 3;     // singular/divergent estimation

// Every run derives all randomness from one seed; this default keeps unseeded
// invocations reproducible.
inline constexpr std::uint64_t kDefaultSeed = 1729;

struct RunConfig {
    std::string subcommand;  // simulate | fit | diagnose | bootstrap | cv | compare

    std::string dataset_path;
    std::string spec_path;
    std::vector<std::string> scenario_paths;
    std::string out_path;
    std::string trace_path;

    std::string method = "q_shared";  // q_shared | penalized | unshared
    std::string init = "zero";
    std::vector<double> coding_pair;  // empty = infer from data, ascending

    double epsilon = 1e-6;
    int max_iters = 1000;
    std::optional<double> lambda;  // penalized: fixed lambda; absent = CV-selected
    double divergence_guard = 1e8;
    bool standardize = false;  // unit-RMS column scaling around the ridge solve

    int B = 1000;
    double m_exponent = 0.8;
    std::optional<int> m_override;
    int trace_replicates = 0;

    std::vector<double> lambda_grid;  // empty = default grid

    int reps = 200;
    int eval_n = 10000;
    std::string methods_csv = "q_shared,penalized";
    std::string inits_csv = "sa,ivwa,max,min,zero";

    std::uint64_t seed = kDefaultSeed;
    int threads = 1;
    std::optional<int> n_override;  // simulate: overrides the scenario's n
};

// Dispatches a validated config; writes artifacts and human-readable output
// to `out`. Never throws: errors map onto the exit codes above.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace dtr

#endif
