#ifndef DTR_MODEL_HPP
#define DTR_MODEL_HPP

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dtr/features.hpp"

namespace dtr {

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

// The two values a binary treatment can take.
struct TreatmentCoding {
    double t1 = -1.0;
    double t2 = 1.0;

    friend bool operator==(const TreatmentCoding&, const TreatmentCoding&) = default;
};

// Throws ValidationError when t1 == t2.
void validate_coding(const TreatmentCoding& coding);

// One patient's multi-stage record. A responder at the end of stage j exits
// the study and carries no entries for stages > j, so the per-stage vectors
// all have length stages_present().
struct Trajectory {
    std::string id;
    std::vector<std::vector<double>> covariates;  // O_j, one vector per stage reached
    std::vector<double> treatments;               // A_j per stage reached
    std::vector<int> responders;                  // R_j for j = 1..min(reached, J-1)
    std::vector<double> stage_outcomes;           // Y_j per stage reached (NaN = not recorded)
    double primary_outcome = 0.0;

    int stages_present() const { return static_cast<int>(treatments.size()); }
    bool present_at(int stage) const { return stage >= 1 && stage <= stages_present(); }
    // True when the patient responded at the end of `stage` and exited.
    bool responded_at(int stage) const {
        return stage >= 1 && stage <= static_cast<int>(responders.size()) &&
               responders[stage - 1] == 1;
    }
};

struct SmartDataset {
    int num_stages = 0;  // J
    TreatmentCoding coding;
    std::vector<Trajectory> patients;

    int size() const { return static_cast<int>(patients.size()); }
};

// Structural consistency checks: vector lengths agree with the responder
// flags, treatments take coding values, stages within [1, J].
void validate_dataset(const SmartDataset& data);

// Relabels treatment values in place: from.t1 -> to.t1, from.t2 -> to.t2.
// Outcomes are untouched; this mirrors re-coding an already-collected trial.
void recode_treatments(SmartDataset& data, const TreatmentCoding& from, const TreatmentCoding& to);

// Relabels every covariate component equal to `from_lo`/`from_hi`.
void recode_covariates(SmartDataset& data, double from_lo, double to_lo, double from_hi, double to_hi);

// ---------------------------------------------------------------------------
// Q-function specification
// ---------------------------------------------------------------------------

// An interaction slot contributes feature * A_j to the stage design. Slots
// with a shared name estimate one coefficient across every stage declaring
// that name; unnamed slots get a stage-local coefficient.
struct InteractionSlot {
    Feature feature;
    std::string shared_name;  // empty = stage-local

    bool is_shared() const { return !shared_name.empty(); }
};

struct StageModel {
    std::vector<Feature> main;
    std::vector<InteractionSlot> interaction;
};

// Index layout of the stacked parameter vector theta = (beta_J, ..., beta_1, psi).
// Each beta block holds the stage's main-effect coefficients followed by any
// stage-local interaction coefficients; psi holds the shared coefficients in
// declaration order (first appearance scanning stages 1..J).
struct ParamLayout {
    int num_stages = 0;
    std::vector<int> beta_offset;  // by stage (index j-1)
    std::vector<int> beta_size;
    std::vector<int> main_size;
    int psi_offset = 0;
    int psi_size = 0;
    int total = 0;
    std::vector<std::string> names;                  // size total
    std::vector<std::vector<int>> interaction_cols;  // [stage-1][slot] -> theta index

    friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

struct ModelSpec {
    int num_stages = 0;
    std::vector<StageModel> stages;
    std::vector<std::string> shared_names;  // psi block order
    std::shared_ptr<const ParamLayout> layout;

    const StageModel& stage(int j) const { return stages[j - 1]; }
};

// Validates the stage models (feature stage bounds, duplicate shared names
// within a stage) and computes the layout.
ModelSpec make_model_spec(int num_stages, std::vector<StageModel> stages);

struct ParameterVector {
    Eigen::VectorXd values;
    std::shared_ptr<const ParamLayout> layout;
};

ParameterVector zero_parameters(const ModelSpec& spec);

// Throws when theta's layout disagrees with the spec's.
void check_layout(const ParameterVector& theta, const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Responder-weighted composition of stage outcomes:
//   R1*Y1 + (1-R1)*R2*(Y1+Y2)/2 + (1-R1)*(1-R2)*(Y1+Y2+Y3)/3.
double primary_outcome(double y1, double y2, double y3, int r1, int r2);

// Main-effect and interaction feature vectors (H_j0, H_j1) for a stage.
std::pair<Eigen::VectorXd, Eigen::VectorXd>
stage_features(const Trajectory& traj, int stage, const ModelSpec& spec);

// Contrast coefficient of stage j implied by theta: the stage's interaction
// coefficients (shared and local) dotted with H_j1.
double stage_contrast(const ParameterVector& theta, const Trajectory& traj, int stage,
                      const ModelSpec& spec);

// Stage-j regression target for a non-terminal row. Responders at `stage`
// contribute their observed primary outcome; non-responders get the fitted
// next-stage backup beta_{j+1}' H_{j+1,0} + max_t t * contrast_{j+1}.
double pseudo_outcome(const ParameterVector& theta, const Trajectory& traj, int stage,
                      const ModelSpec& spec, const TreatmentCoding& coding);

// ---------------------------------------------------------------------------
// Stacked system
// ---------------------------------------------------------------------------

struct RowProvenance {
    int patient_index = 0;  // into SmartDataset::patients
    std::string patient_id;
    int stage = 0;
};

// The theta-independent part of the stacked regression: Z plus everything
// needed to refresh the self-referential response Y*(theta) cheaply.
struct StackedDesign {
    Eigen::MatrixXd Z;
    std::vector<RowProvenance> rows;

    // Per-row response rule: terminal rows (final stage or responder exit)
    // have a fixed value; backup rows re-evaluate under the current theta.
    struct Backup {
        int next_stage = 0;
        Eigen::VectorXd h0;  // H_{j+1,0}
        Eigen::VectorXd h1;  // H_{j+1,1}
    };
    std::vector<double> fixed_response;           // valid where !backup[i]
    std::vector<std::optional<Backup>> backup;    // engaged for pseudo-outcome rows
    bool has_backup_rows = false;

    std::shared_ptr<const ParamLayout> layout;
    TreatmentCoding coding;

    int rows_count() const { return static_cast<int>(Z.rows()); }
};

StackedDesign build_stacked_design(const SmartDataset& data, const ModelSpec& spec,
                                   const TreatmentCoding& coding);

// Y*(theta) for a prebuilt design.
Eigen::VectorXd stacked_response(const StackedDesign& design, const ParameterVector& theta);

// Design matrix, response at theta, and row provenance in one bundle. Rows
// are ordered stage J first (then J-1, ..., 1), patients in dataset order
// within a stage block.
struct StackedSystem {
    Eigen::MatrixXd design;
    Eigen::VectorXd response;
    std::vector<RowProvenance> row_provenance;
};

StackedSystem assemble_stacked(const SmartDataset& data, const ModelSpec& spec,
                               const ParameterVector& theta, const TreatmentCoding& coding);

}  // namespace dtr

#endif
