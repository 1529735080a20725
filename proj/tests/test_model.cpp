#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "dtr/errors.hpp"
#include "dtr/model.hpp"
#include "dtr/rng.hpp"
#include "dtr/simulator.hpp"
#include "test_support.hpp"

using namespace dtr;

TEST_CASE("primary_outcome reproduces the published example rows") {
    // Responder at stage 1: the primary outcome is Y1 itself.
    CHECK(primary_outcome(1.5448, 2.857, 2.230, 1, 1) == doctest::Approx(1.5448).epsilon(1e-12));
    // Exit at stage 2: average of the first two stage outcomes.
    CHECK(primary_outcome(-0.4734, -0.688, -0.724, 0, 1) ==
          doctest::Approx((-0.4734 - 0.688) / 2.0).epsilon(1e-12));
    CHECK(primary_outcome(-0.4734, -0.688, -0.724, 0, 1) ==
          doctest::Approx(-0.5807).epsilon(1e-12));
    // Full stay: three-stage average.
    CHECK(primary_outcome(-0.4224, 0.547, -0.377, 0, 0) ==
          doctest::Approx((-0.4224 + 0.547 - 0.377) / 3.0).epsilon(1e-12));
}

TEST_CASE("primary_outcome rejects bad inputs") {
    CHECK_THROWS_AS(primary_outcome(std::nan(""), 0, 0, 0, 0), ValidationError);
    CHECK_THROWS_AS(primary_outcome(0, 0, std::numeric_limits<double>::infinity(), 0, 0),
                    ValidationError);
    CHECK_THROWS_AS(primary_outcome(0, 0, 0, 2, 0), ValidationError);
}

TEST_CASE("stage_features evaluates the declared constructors") {
    const ModelSpec spec = test::shared3_spec();

    SUBCASE("stage 1 with O1 = -1") {
        Trajectory t;
        t.id = "p";
        t.covariates = {{-1.0}};
        t.treatments = {1.0};
        t.responders = {1};
        t.stage_outcomes = {0.0};
        const auto [h0, h1] = stage_features(t, 1, spec);
        REQUIRE(h0.size() == 2);
        CHECK(h0[0] == 1.0);
        CHECK(h0[1] == -1.0);
        REQUIRE(h1.size() == 2);
        CHECK(h1[0] == 1.0);
        CHECK(h1[1] == -1.0);
    }

    SUBCASE("stage 3 with all-ones history") {
        const Trajectory t = test::full_trajectory(1, 1, 1, 1, 1, 1);
        const auto [h0, h1] = stage_features(t, 3, spec);
        REQUIRE(h1.size() == 4);
        for (int i = 0; i < 4; ++i) CHECK(h1[i] == 1.0);
        REQUIRE(h0.size() == 9);
        for (int i = 0; i < 9; ++i) CHECK(h0[i] == 1.0);
    }

    SUBCASE("empty interaction list gives an empty vector") {
        StageModel st;
        st.main = {parse_feature("1")};
        const ModelSpec s1 = make_model_spec(1, {st});
        Trajectory t;
        t.id = "p";
        t.covariates = {{0.0}};
        t.treatments = {1.0};
        t.stage_outcomes = {0.0};
        const auto [h0, h1] = stage_features(t, 1, s1);
        CHECK(h0.size() == 1);
        CHECK(h1.size() == 0);
    }

    SUBCASE("errors") {
        const Trajectory t = test::full_trajectory(1, 1, 1, 1, 1, 1);
        CHECK_THROWS_AS(stage_features(t, 4, spec), ValidationError);
        Trajectory exited;
        exited.id = "p";
        exited.covariates = {{1.0}};
        exited.treatments = {1.0};
        exited.responders = {1};
        exited.stage_outcomes = {0.0};
        CHECK_THROWS_AS(stage_features(exited, 2, spec), ValidationError);
    }
}

namespace {

// Spec with constant-only features so psi' H_{j+1,1} equals a single theta
// entry; used to hit the pseudo-outcome examples directly.
ModelSpec two_stage_constant_spec() {
    StageModel s1, s2;
    s1.main = {parse_feature("1")};
    s1.interaction = {{parse_feature("1"), "psi0"}};
    s2.main = {parse_feature("1")};
    s2.interaction = {{parse_feature("1"), "psi0"}};
    return make_model_spec(2, {s1, s2});
}

Trajectory two_stage_trajectory() {
    Trajectory t;
    t.id = "p";
    t.covariates = {{1.0}, {1.0}};
    t.treatments = {1.0, 1.0};
    t.responders = {0};
    t.stage_outcomes = {0.0, 0.0};
    return t;
}

}  // namespace

TEST_CASE("pseudo_outcome applies the backup max over the coding pair") {
    const ModelSpec spec = two_stage_constant_spec();
    const Trajectory t = two_stage_trajectory();
    ParameterVector theta = zero_parameters(spec);
    const auto& L = *spec.layout;

    SUBCASE("coding {-1,1} reduces to the absolute value") {
        theta.values[L.psi_offset] = -3.0;  // psi' H = -3
        theta.values[L.beta_offset[1]] = 0.0;
        CHECK(pseudo_outcome(theta, t, 1, spec, {-1, 1}) == doctest::Approx(3.0));
    }
    SUBCASE("coding {-0.1, 0.1}") {
        theta.values[L.psi_offset] = 5.0;
        theta.values[L.beta_offset[1]] = 2.0;
        CHECK(pseudo_outcome(theta, t, 1, spec, {-0.1, 0.1}) == doctest::Approx(2.5));
    }
    SUBCASE("coding {0.250, 0.248}") {
        theta.values[L.psi_offset] = -1.0;
        theta.values[L.beta_offset[1]] = 0.0;
        CHECK(pseudo_outcome(theta, t, 1, spec, {0.250, 0.248}) == doctest::Approx(-0.248));
    }
    SUBCASE("responders contribute their observed primary outcome") {
        Trajectory r;
        r.id = "p";
        r.covariates = {{1.0}};
        r.treatments = {1.0};
        r.responders = {1};
        r.stage_outcomes = {0.7};
        r.primary_outcome = 0.7;
        theta.values[L.psi_offset] = 5.0;
        CHECK(pseudo_outcome(theta, r, 1, spec, {-1, 1}) == 0.7);
    }
    SUBCASE("the final stage has no pseudo-outcome") {
        CHECK_THROWS_AS(pseudo_outcome(theta, t, 2, spec, {-1, 1}), ValidationError);
    }
}

TEST_CASE("coding {-1,1} backup equals |psi' H| for random inputs") {
    const ModelSpec spec = two_stage_constant_spec();
    const Trajectory t = two_stage_trajectory();
    ParameterVector theta = zero_parameters(spec);
    RngStream rng(99);
    const auto& L = *spec.layout;
    for (int i = 0; i < 200; ++i) {
        const double psi = 4.0 * rng.uniform01() - 2.0;
        const double beta = 4.0 * rng.uniform01() - 2.0;
        theta.values[L.psi_offset] = psi;
        theta.values[L.beta_offset[1]] = beta;
        CHECK(pseudo_outcome(theta, t, 1, spec, {-1, 1}) ==
              doctest::Approx(beta + std::abs(psi)).epsilon(1e-12));
    }
}

TEST_CASE("assemble_stacked shapes and block structure") {
    const ModelSpec spec = test::shared3_spec();

    SUBCASE("layout partitions the columns in the declared order") {
        const auto& L = *spec.layout;
        CHECK(L.total == 20);
        CHECK(L.beta_size[2] == 9);
        CHECK(L.beta_size[1] == 5);
        CHECK(L.beta_size[0] == 2);
        CHECK(L.psi_size == 4);
        CHECK(L.beta_offset[2] == 0);
        CHECK(L.beta_offset[1] == 9);
        CHECK(L.beta_offset[0] == 14);
        CHECK(L.psi_offset == 16);
    }

    SUBCASE("two full-stay patients give six rows and twenty columns") {
        SmartDataset data;
        data.num_stages = 3;
        data.coding = {-1, 1};
        data.patients = {test::full_trajectory(1, 1, -1, 1, 1, -1),
                         test::full_trajectory(-1, -1, 1, -1, -1, 1)};
        const StackedSystem sys = assemble_stacked(data, spec, zero_parameters(spec), data.coding);
        CHECK(sys.design.rows() == 6);
        CHECK(sys.design.cols() == 20);
        // Rows are grouped stage 3, 2, 1.
        CHECK(sys.row_provenance[0].stage == 3);
        CHECK(sys.row_provenance[2].stage == 2);
        CHECK(sys.row_provenance[4].stage == 1);
        // A stage-j row is zero in every other stage's beta block.
        const auto& L = *spec.layout;
        for (int r = 0; r < 6; ++r) {
            const int stage = sys.row_provenance[r].stage;
            for (int j = 1; j <= 3; ++j) {
                if (j == stage) continue;
                CHECK(sys.design.row(r)
                          .segment(L.beta_offset[j - 1], L.beta_size[j - 1])
                          .cwiseAbs()
                          .maxCoeff() == 0.0);
            }
        }
    }

    SUBCASE("single-stage systems have no theta dependence") {
        const ModelSpec s1 = test::single_stage_spec();
        SmartDataset data;
        data.num_stages = 1;
        data.coding = {-1, 1};
        for (int i = 0; i < 4; ++i) {
            Trajectory t;
            t.id = std::to_string(i);
            t.covariates = {{i % 2 ? 1.0 : -1.0}};
            t.treatments = {i < 2 ? 1.0 : -1.0};
            t.stage_outcomes = {0.5 * i};
            t.primary_outcome = 0.5 * i;
            data.patients.push_back(t);
        }
        ParameterVector a = zero_parameters(s1);
        ParameterVector b = zero_parameters(s1);
        b.values.setConstant(7.0);
        const StackedSystem sa = assemble_stacked(data, s1, a, data.coding);
        const StackedSystem sb = assemble_stacked(data, s1, b, data.coding);
        CHECK((sa.response.array() == sb.response.array()).all());
        for (int r = 0; r < 4; ++r) CHECK(sa.response[r] == data.patients[r].primary_outcome);
    }

    SUBCASE("empty dataset rejected") {
        SmartDataset data;
        data.num_stages = 3;
        data.coding = {-1, 1};
        CHECK_THROWS_AS(assemble_stacked(data, spec, zero_parameters(spec), data.coding),
                        ValidationError);
    }
}

TEST_CASE("assembly is invariant to patient order and bit-stable") {
    const ModelSpec spec = test::shared3_spec();
    Scenario sc = test::exact_scenario(7);
    sc.response_probs = {0.3, 0.2};
    sc.noise_sd = 1.0;
    const SmartDataset data = generate_smart(sc);
    const ParameterVector theta = test::exact_truth(spec);

    const StackedSystem first = assemble_stacked(data, spec, theta, data.coding);
    const StackedSystem again = assemble_stacked(data, spec, theta, data.coding);
    CHECK((first.design.array() == again.design.array()).all());
    CHECK((first.response.array() == again.response.array()).all());

    SmartDataset shuffled = data;
    std::reverse(shuffled.patients.begin(), shuffled.patients.end());
    const StackedSystem rev = assemble_stacked(shuffled, spec, theta, data.coding);

    // Same multiset of rows keyed by (patient id, stage).
    auto key_rows = [&](const StackedSystem& sys) {
        std::map<std::pair<std::string, int>, std::vector<double>> rows;
        for (std::size_t r = 0; r < sys.row_provenance.size(); ++r) {
            std::vector<double> row(sys.design.row(r).begin(), sys.design.row(r).end());
            row.push_back(sys.response[r]);
            rows[{sys.row_provenance[r].patient_id, sys.row_provenance[r].stage}] = row;
        }
        return rows;
    };
    CHECK(key_rows(first) == key_rows(rev));
}

TEST_CASE("zeroing psi makes non-responder pseudo-outcomes the main-effect fit") {
    const ModelSpec spec = test::shared3_spec();
    Scenario sc = test::exact_scenario(11);
    sc.response_probs = {0.3, 0.2};
    const SmartDataset data = generate_smart(sc);

    ParameterVector theta = test::exact_truth(spec);
    theta.values.segment(spec.layout->psi_offset, spec.layout->psi_size).setZero();

    for (const Trajectory& t : data.patients) {
        for (int j = 1; j < data.num_stages; ++j) {
            if (!t.present_at(j) || t.responded_at(j)) continue;
            const auto [h0, h1] = stage_features(t, j + 1, spec);
            const double expect = h0.dot(theta.values.segment(spec.layout->beta_offset[j],
                                                              spec.layout->main_size[j]));
            CHECK(pseudo_outcome(theta, t, j, spec, data.coding) ==
                  doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("simulated primary outcomes reproduce the responder-weighted composition") {
    Scenario sc = test::exact_scenario(3);
    sc.noise_sd = 1.0;
    sc.response_probs = {0.38, 0.18};
    sc.n = 400;
    const SmartDataset data = generate_smart(sc);
    int full = 0;
    for (const Trajectory& t : data.patients) {
        const int k = t.stages_present();
        const int r1 = t.responded_at(1) ? 1 : 0;
        const int r2 = t.responded_at(2) ? 1 : 0;
        const double composed =
            primary_outcome(t.stage_outcomes[0], k > 1 ? t.stage_outcomes[1] : 0.0,
                            k > 2 ? t.stage_outcomes[2] : 0.0, r1, r2);
        CHECK(t.primary_outcome == composed);
        full += k == 3;
    }
    CHECK(full > 0);
}

TEST_CASE("model spec validation") {
    SUBCASE("future covariate rejected") {
        StageModel st;
        st.main = {parse_feature("O2")};
        CHECK_THROWS_AS(make_model_spec(1, {st}), ValidationError);
    }
    SUBCASE("own-stage treatment rejected in features") {
        StageModel st;
        st.main = {parse_feature("1")};
        st.interaction = {{parse_feature("A1"), "psi0"}};
        CHECK_THROWS_AS(make_model_spec(1, {st}), ValidationError);
    }
    SUBCASE("duplicate shared name within a stage rejected") {
        StageModel s1;
        s1.main = {parse_feature("1")};
        s1.interaction = {{parse_feature("1"), "psi0"}, {parse_feature("O1"), "psi0"}};
        CHECK_THROWS_AS(make_model_spec(1, {s1}), ValidationError);
    }
    SUBCASE("stage-local slots live in the stage block") {
        StageModel s1, s2;
        s1.main = {parse_feature("1")};
        s1.interaction = {{parse_feature("1"), "psi0"}};
        s2.main = {parse_feature("1")};
        s2.interaction = {{parse_feature("1"), "psi0"}, {parse_feature("O2"), ""}};
        const ModelSpec spec = make_model_spec(2, {s1, s2});
        CHECK(spec.layout->psi_size == 1);
        CHECK(spec.layout->beta_size[1] == 2);  // main + local slot
        CHECK(spec.layout->interaction_cols[1][1] == spec.layout->beta_offset[1] + 1);
    }
}

TEST_CASE("dataset validation and recoding") {
    SmartDataset data;
    data.num_stages = 3;
    data.coding = {-1, 1};
    data.patients = {test::full_trajectory(1, 1, -1, -1, 1, 1)};

    SUBCASE("responder with later-stage data rejected") {
        data.patients[0].responders = {1, 0};
        CHECK_THROWS_AS(validate_dataset(data), ValidationError);
    }
    SUBCASE("treatment outside the coding pair rejected") {
        data.patients[0].treatments[1] = 0.5;
        CHECK_THROWS_AS(validate_dataset(data), ValidationError);
    }
    SUBCASE("recode_treatments relabels and updates the coding") {
        recode_treatments(data, {-1, 1}, {0.250, 0.248});
        CHECK(data.patients[0].treatments[0] == 0.248);
        CHECK(data.patients[0].treatments[1] == 0.250);
        CHECK(data.coding.t1 == 0.250);
        validate_dataset(data);
    }
    SUBCASE("recode_treatments rejects unknown values") {
        CHECK_THROWS_AS(recode_treatments(data, {-2, 2}, {0, 1}), ValidationError);
    }
    SUBCASE("recode_covariates relabels componentwise") {
        recode_covariates(data, -1, -0.01, 1, 0.01);
        CHECK(data.patients[0].covariates[0][0] == 0.01);
        CHECK(data.patients[0].covariates[1][0] == -0.01);
    }
}

TEST_CASE("feature expression parsing") {
    CHECK(parse_feature("1").is_constant_one());
    CHECK(parse_feature("O2 * A1").text() == "O2*A1");
    CHECK(parse_feature("O3[2]").factors()[0].component == 2);
    CHECK(parse_feature("A1*A2").same_as(parse_feature("A2 * A1")));
    CHECK_FALSE(parse_feature("A1").same_as(parse_feature("A2")));
    CHECK_THROWS_AS(parse_feature(""), ValidationError);
    CHECK_THROWS_AS(parse_feature("B1"), ValidationError);
    CHECK_THROWS_AS(parse_feature("O1*"), ValidationError);
    CHECK_THROWS_AS(parse_feature("A1[1]"), ValidationError);
    CHECK_THROWS_AS(parse_feature("O1[2"), ValidationError);
}
