#ifndef DTR_SIMULATOR_HPP
#define DTR_SIMULATOR_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dtr/estimators.hpp"
#include "dtr/model.hpp"

namespace dtr {

// Generative model for a three-stage SMART cohort:
//   Y1 = g1 + g2 O1 + g3 A1 + g4 O1 A1 + e1
//   Y2 = Y1 + 3/2 (g5 O2 + g6 A2 + g7 O2 A2 + g8 A1 A2) + e2
//   Y3 = Y2 + 3  (g9 O3 + g10 A3 + g11 O3 A3 + g12 A2 A3 + g13 A1 A2 A3) + e3
// with logistic covariate transitions driven by delta2/delta3, responder
// indicators R1 ~ Bern(p1), R2 ~ Bern(p2), and the responder-weighted
// primary outcome.
struct Scenario {
    std::string name;
    std::array<double, 13> gamma{};
    std::array<double, 2> delta2{};
    std::array<double, 3> delta3{};
    std::array<double, 2> response_probs{0.38, 0.18};
    TreatmentCoding coding{-1.0, 1.0};
    double noise_sd = 1.0;
    int n = 300;
    std::uint64_t seed = 0;
};

void validate_scenario(const Scenario& scenario);

SmartDataset generate_smart(const Scenario& scenario);

// Decision rule evaluating the true stage-wise treatment contrasts implied by
// gamma: stage 1 uses (g3, g4) against (1, O1); stage 2 (g6, g7, g8) against
// (1, O2, A1); stage 3 (g10..g13) against (1, O3, A2, A1*A2). Requires the
// spec's interaction features to match that structure.
DecisionRule oracle_policy(const Scenario& scenario, const ModelSpec& spec);

// True shared treatment main effect; the bias reference for comparisons.
inline double oracle_psi0(const Scenario& s) { return s.gamma[9]; }

struct MatchingReport {
    std::vector<double> stage_match;  // M_j, fraction in [0,1]
    std::vector<int> stage_sizes;     // n_j
    double weighted_match = 0.0;      // M  = sum n_j M_j / sum n_j
    double overall_match = 0.0;       // M~ = fraction matching at every stage present
};

MatchingReport allocation_matching(const DecisionRule& fitted, const DecisionRule& oracle,
                                   const SmartDataset& eval_data);

// ---------------------------------------------------------------------------
// Monte Carlo comparison of estimation methods
// ---------------------------------------------------------------------------

enum class Method { QShared, Penalized, Oracle };

Method parse_method(const std::string& name);
std::string to_string(Method m);

struct CompareConfig {
    std::vector<Method> methods{Method::QShared, Method::Penalized};
    std::vector<InitStrategy> inits{InitStrategy::SA, InitStrategy::IVWA, InitStrategy::MAX,
                                    InitStrategy::MIN, InitStrategy::ZERO};
    int reps = 200;
    int eval_n = 10000;  // fresh evaluation cohort per replication
    std::uint64_t seed = 0;
    int threads = 1;
    std::vector<double> lambda_grid;  // empty = default grid; CV-selected per replication
    FitConfig fit;
};

struct CompareCell {
    std::string scenario;
    Method method = Method::QShared;
    InitStrategy init = InitStrategy::ZERO;
    double bias_psi0 = 0.0;     // mean(psi0_hat) - true psi0
    double weighted_match = 0.0;  // mean M over replications, percent
    double overall_match = 0.0;   // mean M~ over replications, percent
    int fit_failures = 0;         // replicates whose fit raised an error
};

// Per (method, init): Monte Carlo means over `reps` training datasets, each
// scored against the oracle on an independent evaluation cohort.
std::vector<CompareCell> run_comparison(const Scenario& scenario, const ModelSpec& spec,
                                        const CompareConfig& cfg);

}  // namespace dtr

#endif
