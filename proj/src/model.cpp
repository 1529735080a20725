#include "dtr/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dtr/errors.hpp"

namespace dtr {

void validate_coding(const TreatmentCoding& coding) {
    if (!(std::isfinite(coding.t1) && std::isfinite(coding.t2)))
        throw ValidationError("treatment coding values must be finite");
    if (coding.t1 == coding.t2) throw ValidationError("treatment coding requires t1 != t2");
}

void validate_dataset(const SmartDataset& data) {
    validate_coding(data.coding);
    if (data.num_stages < 1) throw ValidationError("dataset must declare num_stages >= 1");
    for (const Trajectory& t : data.patients) {
        const int k = t.stages_present();
        if (k < 1 || k > data.num_stages)
            throw ValidationError("patient '" + t.id + "' present at " + std::to_string(k) +
                                  " stages, expected 1.." + std::to_string(data.num_stages));
        if (static_cast<int>(t.covariates.size()) != k ||
            static_cast<int>(t.stage_outcomes.size()) != k)
            throw ValidationError("patient '" + t.id + "': per-stage vectors disagree in length");
        const int expect_r = std::min(k, data.num_stages - 1);
        if (static_cast<int>(t.responders.size()) != expect_r)
            throw ValidationError("patient '" + t.id + "': expected " + std::to_string(expect_r) +
                                  " responder flags, found " + std::to_string(t.responders.size()));
        for (int j = 1; j <= expect_r; ++j) {
            const int r = t.responders[j - 1];
            if (r != 0 && r != 1)
                throw ValidationError("patient '" + t.id + "': responder flag R" +
                                      std::to_string(j) + " must be 0 or 1");
            // A responder exits; a non-responder before the last reached stage
            // must have continued.
            if (r == 1 && k != j)
                throw ValidationError("patient '" + t.id + "' responded at stage " +
                                      std::to_string(j) + " but carries data for later stages");
            if (r == 0 && j == k && k < data.num_stages)
                throw ValidationError("patient '" + t.id + "' is a non-responder at stage " +
                                      std::to_string(j) + " but has no stage " +
                                      std::to_string(j + 1) + " data");
        }
        for (double a : t.treatments)
            if (a != data.coding.t1 && a != data.coding.t2)
                throw ValidationError("patient '" + t.id + "': treatment value " +
                                      std::to_string(a) + " is not in the coding pair");
        if (!std::isfinite(t.primary_outcome))
            throw ValidationError("patient '" + t.id + "': non-finite primary outcome");
    }
}

void recode_treatments(SmartDataset& data, const TreatmentCoding& from, const TreatmentCoding& to) {
    validate_coding(from);
    validate_coding(to);
    for (Trajectory& t : data.patients)
        for (double& a : t.treatments) {
            if (a == from.t1)
                a = to.t1;
            else if (a == from.t2)
                a = to.t2;
            else
                throw ValidationError("patient '" + t.id + "': treatment value " +
                                      std::to_string(a) + " not in the source coding");
        }
    data.coding = to;
}

void recode_covariates(SmartDataset& data, double from_lo, double to_lo, double from_hi,
                       double to_hi) {
    for (Trajectory& t : data.patients)
        for (auto& stage : t.covariates)
            for (double& o : stage) {
                if (o == from_lo)
                    o = to_lo;
                else if (o == from_hi)
                    o = to_hi;
                else
                    throw ValidationError("patient '" + t.id + "': covariate value " +
                                          std::to_string(o) + " not in the source pair");
            }
}

// ---------------------------------------------------------------------------

ModelSpec make_model_spec(int num_stages, std::vector<StageModel> stages) {
    if (num_stages < 1) throw ValidationError("model spec requires num_stages >= 1");
    if (static_cast<int>(stages.size()) != num_stages)
        throw ValidationError("model spec declares " + std::to_string(stages.size()) +
                              " stage models for num_stages = " + std::to_string(num_stages));

    ModelSpec spec;
    spec.num_stages = num_stages;
    spec.stages = std::move(stages);

    // History rule: stage-j features may reference O_k for k <= j and A_k for
    // k <= j-1 (the stage's own treatment multiplies H_j1 externally).
    for (int j = 1; j <= num_stages; ++j) {
        const StageModel& st = spec.stages[j - 1];
        auto check = [&](const Feature& f, const char* role) {
            if (f.max_covariate_stage() > j)
                throw ValidationError("stage " + std::to_string(j) + " " + role + " feature '" +
                                      f.text() + "' references a future covariate");
            if (f.max_treatment_stage() > j - 1)
                throw ValidationError("stage " + std::to_string(j) + " " + role + " feature '" +
                                      f.text() + "' references treatment A" +
                                      std::to_string(f.max_treatment_stage()) +
                                      " outside the stage history");
        };
        for (const Feature& f : st.main) check(f, "main");
        std::set<std::string> seen;
        for (const InteractionSlot& s : st.interaction) {
            check(s.feature, "interaction");
            if (s.is_shared() && !seen.insert(s.shared_name).second)
                throw ValidationError("stage " + std::to_string(j) + " declares shared slot '" +
                                      s.shared_name + "' twice");
        }
    }

    // Shared names in order of first appearance, scanning stages 1..J.
    for (int j = 1; j <= num_stages; ++j)
        for (const InteractionSlot& s : spec.stages[j - 1].interaction)
            if (s.is_shared() &&
                std::find(spec.shared_names.begin(), spec.shared_names.end(), s.shared_name) ==
                    spec.shared_names.end())
                spec.shared_names.push_back(s.shared_name);

    auto layout = std::make_shared<ParamLayout>();
    layout->num_stages = num_stages;
    layout->beta_offset.resize(num_stages);
    layout->beta_size.resize(num_stages);
    layout->main_size.resize(num_stages);
    layout->interaction_cols.resize(num_stages);

    // Beta blocks laid out stage J first, matching (beta_J, ..., beta_1, psi).
    int offset = 0;
    for (int j = num_stages; j >= 1; --j) {
        const StageModel& st = spec.stages[j - 1];
        int locals = 0;
        for (const InteractionSlot& s : st.interaction)
            if (!s.is_shared()) ++locals;
        layout->beta_offset[j - 1] = offset;
        layout->main_size[j - 1] = static_cast<int>(st.main.size());
        layout->beta_size[j - 1] = static_cast<int>(st.main.size()) + locals;
        offset += layout->beta_size[j - 1];
    }
    layout->psi_offset = offset;
    layout->psi_size = static_cast<int>(spec.shared_names.size());
    layout->total = offset + layout->psi_size;

    layout->names.assign(layout->total, {});
    for (int j = 1; j <= num_stages; ++j) {
        const StageModel& st = spec.stages[j - 1];
        int base = layout->beta_offset[j - 1];
        for (std::size_t m = 0; m < st.main.size(); ++m)
            layout->names[base + m] = "b" + std::to_string(j) + "." + st.main[m].text();
        int local = 0;
        auto& cols = layout->interaction_cols[j - 1];
        cols.resize(st.interaction.size());
        for (std::size_t s = 0; s < st.interaction.size(); ++s) {
            const InteractionSlot& slot = st.interaction[s];
            if (slot.is_shared()) {
                const auto it = std::find(spec.shared_names.begin(), spec.shared_names.end(),
                                          slot.shared_name);
                cols[s] = layout->psi_offset +
                          static_cast<int>(it - spec.shared_names.begin());
            } else {
                cols[s] = base + static_cast<int>(st.main.size()) + local;
                layout->names[cols[s]] =
                    "b" + std::to_string(j) + "." + slot.feature.text() + "xA" + std::to_string(j);
                ++local;
            }
        }
    }
    for (std::size_t i = 0; i < spec.shared_names.size(); ++i)
        layout->names[layout->psi_offset + i] = spec.shared_names[i];

    spec.layout = std::move(layout);
    return spec;
}

ParameterVector zero_parameters(const ModelSpec& spec) {
    return {Eigen::VectorXd::Zero(spec.layout->total), spec.layout};
}

void check_layout(const ParameterVector& theta, const ModelSpec& spec) {
    if (!theta.layout || !(*theta.layout == *spec.layout))
        throw ValidationError("parameter vector layout does not match the model spec");
    if (theta.values.size() != spec.layout->total)
        throw ValidationError("parameter vector has " + std::to_string(theta.values.size()) +
                              " entries, layout expects " + std::to_string(spec.layout->total));
}

// ---------------------------------------------------------------------------

double primary_outcome(double y1, double y2, double y3, int r1, int r2) {
    if (!(std::isfinite(y1) && std::isfinite(y2) && std::isfinite(y3)))
        throw ValidationError("primary_outcome: non-finite stage outcome");
    if ((r1 != 0 && r1 != 1) || (r2 != 0 && r2 != 1))
        throw ValidationError("primary_outcome: responder flags must be 0 or 1");
    return r1 * y1 + (1 - r1) * r2 * (y1 + y2) / 2.0 +
           (1 - r1) * (1 - r2) * (y1 + y2 + y3) / 3.0;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd>
stage_features(const Trajectory& traj, int stage, const ModelSpec& spec) {
    if (stage < 1 || stage > spec.num_stages)
        throw ValidationError("stage " + std::to_string(stage) + " out of range 1.." +
                              std::to_string(spec.num_stages));
    if (!traj.present_at(stage))
        throw ValidationError("patient '" + traj.id + "' absent at stage " + std::to_string(stage));
    const StageModel& st = spec.stage(stage);
    Eigen::VectorXd h0(st.main.size());
    for (std::size_t i = 0; i < st.main.size(); ++i) h0[i] = st.main[i].eval(traj);
    Eigen::VectorXd h1(st.interaction.size());
    for (std::size_t i = 0; i < st.interaction.size(); ++i)
        h1[i] = st.interaction[i].feature.eval(traj);
    return {std::move(h0), std::move(h1)};
}

double stage_contrast(const ParameterVector& theta, const Trajectory& traj, int stage,
                      const ModelSpec& spec) {
    check_layout(theta, spec);
    const auto [h0, h1] = stage_features(traj, stage, spec);
    const auto& cols = spec.layout->interaction_cols[stage - 1];
    double c = 0.0;
    for (Eigen::Index s = 0; s < h1.size(); ++s) c += h1[s] * theta.values[cols[s]];
    return c;
}

double pseudo_outcome(const ParameterVector& theta, const Trajectory& traj, int stage,
                      const ModelSpec& spec, const TreatmentCoding& coding) {
    check_layout(theta, spec);
    validate_coding(coding);
    if (stage < 1 || stage >= spec.num_stages)
        throw ValidationError("pseudo_outcome is defined for stages 1.." +
                              std::to_string(spec.num_stages - 1) +
                              "; the final stage uses the observed outcome");
    if (!traj.present_at(stage))
        throw ValidationError("patient '" + traj.id + "' absent at stage " + std::to_string(stage));
    if (traj.responded_at(stage)) return traj.primary_outcome;

    const int next = stage + 1;
    const auto [h0, h1] = stage_features(traj, next, spec);
    const auto& layout = *spec.layout;
    const double base =
        h0.dot(theta.values.segment(layout.beta_offset[next - 1], layout.main_size[next - 1]));
    const auto& cols = layout.interaction_cols[next - 1];
    double contrast = 0.0;
    for (Eigen::Index s = 0; s < h1.size(); ++s) contrast += h1[s] * theta.values[cols[s]];
    return base + std::max(coding.t1 * contrast, coding.t2 * contrast);
}

// ---------------------------------------------------------------------------

StackedDesign build_stacked_design(const SmartDataset& data, const ModelSpec& spec,
                                   const TreatmentCoding& coding) {
    validate_coding(coding);
    if (data.patients.empty()) throw ValidationError("cannot assemble an empty dataset");
    if (data.num_stages != spec.num_stages)
        throw ValidationError("dataset has " + std::to_string(data.num_stages) +
                              " stages but the model spec declares " +
                              std::to_string(spec.num_stages));

    const ParamLayout& layout = *spec.layout;
    int n_rows = 0;
    for (const Trajectory& t : data.patients) {
        n_rows += t.stages_present();
        for (double a : t.treatments)
            if (a != coding.t1 && a != coding.t2)
                throw ValidationError("patient '" + t.id + "': treatment value " +
                                      std::to_string(a) + " is not in the coding pair");
    }

    StackedDesign d;
    d.Z = Eigen::MatrixXd::Zero(n_rows, layout.total);
    d.rows.reserve(n_rows);
    d.fixed_response.assign(n_rows, 0.0);
    d.backup.assign(n_rows, std::nullopt);
    d.layout = spec.layout;
    d.coding = coding;

    int r = 0;
    // Stage-J block first, then J-1, ..., 1.
    for (int j = spec.num_stages; j >= 1; --j) {
        for (int p = 0; p < data.size(); ++p) {
            const Trajectory& traj = data.patients[p];
            if (!traj.present_at(j)) continue;
            const auto [h0, h1] = stage_features(traj, j, spec);
            const double a = traj.treatments[j - 1];
            for (Eigen::Index m = 0; m < h0.size(); ++m)
                d.Z(r, layout.beta_offset[j - 1] + m) = h0[m];
            const auto& cols = layout.interaction_cols[j - 1];
            for (Eigen::Index s = 0; s < h1.size(); ++s) d.Z(r, cols[s]) += h1[s] * a;

            d.rows.push_back({p, traj.id, j});
            if (j == spec.num_stages || traj.responded_at(j)) {
                d.fixed_response[r] = traj.primary_outcome;
            } else {
                const auto [nh0, nh1] = stage_features(traj, j + 1, spec);
                d.backup[r] = StackedDesign::Backup{j + 1, nh0, nh1};
                d.has_backup_rows = true;
            }
            ++r;
        }
    }

    if (d.Z.lpNorm<Eigen::Infinity>() == 0.0)
        throw ValidationError("assembled design is identically zero (rank 0)");
    return d;
}

Eigen::VectorXd stacked_response(const StackedDesign& design, const ParameterVector& theta) {
    if (!theta.layout || !(*theta.layout == *design.layout))
        throw ValidationError("parameter vector layout does not match the assembled design");
    const ParamLayout& layout = *design.layout;
    Eigen::VectorXd y(design.rows_count());
    for (int r = 0; r < design.rows_count(); ++r) {
        if (!design.backup[r]) {
            y[r] = design.fixed_response[r];
            continue;
        }
        const auto& b = *design.backup[r];
        const int next = b.next_stage;
        const double base = b.h0.dot(
            theta.values.segment(layout.beta_offset[next - 1], layout.main_size[next - 1]));
        const auto& cols = layout.interaction_cols[next - 1];
        double contrast = 0.0;
        for (Eigen::Index s = 0; s < b.h1.size(); ++s) contrast += b.h1[s] * theta.values[cols[s]];
        y[r] = base + std::max(design.coding.t1 * contrast, design.coding.t2 * contrast);
    }
    return y;
}

StackedSystem assemble_stacked(const SmartDataset& data, const ModelSpec& spec,
                               const ParameterVector& theta, const TreatmentCoding& coding) {
    check_layout(theta, spec);
    StackedDesign d = build_stacked_design(data, spec, coding);
    StackedSystem sys;
    sys.response = stacked_response(d, theta);
    sys.design = std::move(d.Z);
    sys.row_provenance = std::move(d.rows);
    return sys;
}

}  // namespace dtr
