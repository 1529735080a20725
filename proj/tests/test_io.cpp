#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "dtr/config.hpp"
#include "dtr/errors.hpp"
#include "dtr/io.hpp"
#include "dtr/simulator.hpp"
#include "test_support.hpp"

using namespace dtr;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("./" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
    void write(const std::string& text) const {
        std::ofstream f(path);
        f << text;
    }
};

const char* kHeader = "Y1,Y2,Y3,Y_primary,A1,A2,A3,O1,O2,O3,R1,R2\n";

// The four published example rows, in the truncated convention: cells after a
// responder exit are blank.
const char* kTableRows =
    "1.5448,,,1.544,-1,,,-1,,,1,\n"
    "-0.4734,-0.688,,-0.580,1,1,,1,1,,0,1\n"
    "0.4853,,,0.485,1,,,-1,,,1,\n"
    "-0.4224,0.547,-0.377,-0.084,1,-1,1,-1,1,-1,0,0\n";

}  // namespace

TEST_CASE("ingest of the published example rows") {
    TempFile f("table1.csv");
    f.write(std::string(kHeader) + kTableRows);
    const SmartDataset data = ingest_csv(f.path);
    REQUIRE(data.size() == 4);
    CHECK(data.num_stages == 3);
    CHECK(data.coding.t1 == -1.0);
    CHECK(data.coding.t2 == 1.0);

    CHECK(data.patients[0].stages_present() == 1);
    CHECK(data.patients[0].stage_outcomes[0] == 1.5448);
    CHECK(data.patients[0].primary_outcome == 1.544);
    CHECK(data.patients[0].treatments[0] == -1.0);
    CHECK(data.patients[0].covariates[0][0] == -1.0);
    CHECK(data.patients[0].responded_at(1));

    CHECK(data.patients[1].stages_present() == 2);
    CHECK(data.patients[1].stage_outcomes[1] == -0.688);
    CHECK(data.patients[1].primary_outcome == -0.580);

    CHECK(data.patients[3].stages_present() == 3);
    CHECK(data.patients[3].treatments == std::vector<double>{1.0, -1.0, 1.0});
    CHECK(data.patients[3].covariates[2][0] == -1.0);
    CHECK_FALSE(data.patients[3].responded_at(1));
}

TEST_CASE("ingest validation errors") {
    SUBCASE("empty file") {
        TempFile f("empty.csv");
        f.write("");
        CHECK_THROWS_AS(ingest_csv(f.path), ValidationError);
    }
    SUBCASE("header only") {
        TempFile f("header_only.csv");
        f.write(kHeader);
        CHECK_THROWS_AS(ingest_csv(f.path), ValidationError);
    }
    SUBCASE("wrong column name is reported") {
        TempFile f("badcol.csv");
        f.write("Y1,Y2,Y3,Y_primary,A1,A2,A3,O1,O2,OX,R1,R2\n");
        CHECK_THROWS_WITH_AS(ingest_csv(f.path),
                             doctest::Contains("must be 'O3', found 'OX'"), ValidationError);
    }
    SUBCASE("unparseable cell names the row and column") {
        TempFile f("badcell.csv");
        f.write(std::string(kHeader) +
                "1.0,2.0,3.0,2.0,-1,1,-1,abc,1,-1,0,0\n");
        CHECK_THROWS_WITH_AS(ingest_csv(f.path), doctest::Contains("column 'O1'"),
                             ValidationError);
    }
    SUBCASE("responder with a later-stage treatment names the row") {
        TempFile f("contradiction.csv");
        f.write(std::string(kHeader) +
                "1.5,,,1.5,-1,-1,,-1,,,1,\n");
        CHECK_THROWS_WITH_AS(ingest_csv(f.path),
                             doctest::Contains("'A2' must be blank after the responder exit"),
                             ValidationError);
    }
    SUBCASE("responder flag outside {0,1}") {
        TempFile f("badflag.csv");
        f.write(std::string(kHeader) + "1.0,,,1.0,-1,,,-1,,,2,\n");
        CHECK_THROWS_WITH_AS(ingest_csv(f.path), doctest::Contains("must be 0 or 1"),
                             ValidationError);
    }
    SUBCASE("inconsistent primary outcome rejected") {
        TempFile f("badprimary.csv");
        f.write(std::string(kHeader) + "1.0,,,3.0,-1,,,-1,,,1,\n");
        CHECK_THROWS_WITH_AS(ingest_csv(f.path),
                             doctest::Contains("disagrees with the responder-weighted"),
                             ValidationError);
    }
    SUBCASE("single treatment value needs an explicit coding") {
        TempFile f("onearm.csv");
        f.write(std::string(kHeader) + "1.0,,,1.0,1,,,-1,,,1,\n");
        CHECK_THROWS_AS(ingest_csv(f.path), ValidationError);
        const SmartDataset data = ingest_csv(f.path, TreatmentCoding{-1, 1});
        CHECK(data.size() == 1);
    }
}

TEST_CASE("write + ingest round trip is field-for-field") {
    Scenario sc = test::exact_scenario(77, 120);
    sc.noise_sd = 1.0;
    sc.response_probs = {0.38, 0.18};
    const SmartDataset data = generate_smart(sc);
    TempFile f("roundtrip.csv");
    write_csv(data, f.path);
    const SmartDataset back = ingest_csv(f.path);

    REQUIRE(back.size() == data.size());
    CHECK(back.coding.t1 == data.coding.t1);
    for (int i = 0; i < data.size(); ++i) {
        const Trajectory& a = data.patients[i];
        const Trajectory& b = back.patients[i];
        CHECK(a.stages_present() == b.stages_present());
        CHECK(a.primary_outcome == b.primary_outcome);
        CHECK(a.treatments == b.treatments);
        CHECK(a.responders == b.responders);
        CHECK(a.covariates == b.covariates);
        for (int j = 0; j < a.stages_present(); ++j)
            CHECK(a.stage_outcomes[j] == b.stage_outcomes[j]);
    }

    // Re-simulating under the same seed reproduces the same dataset.
    const SmartDataset again = generate_smart(sc);
    for (int i = 0; i < data.size(); ++i)
        CHECK(again.patients[i].primary_outcome == data.patients[i].primary_outcome);
}

TEST_CASE("coding inference sorts ascending") {
    TempFile f("dose.csv");
    f.write(std::string(kHeader) +
            "1.0,,,1.0,0.250,,,-1,,,1,\n"
            "2.0,,,2.0,0.248,,,1,,,1,\n");
    const SmartDataset data = ingest_csv(f.path);
    CHECK(data.coding.t1 == 0.248);
    CHECK(data.coding.t2 == 0.250);
}

TEST_CASE("model spec files parse into the expected layouts") {
    SUBCASE("three-stage shared spec") {
        const ModelSpec spec = load_model_spec(test::spec_path("shared3.json"));
        CHECK(spec.num_stages == 3);
        CHECK(spec.layout->total == 20);
        CHECK(spec.layout->beta_size == std::vector<int>{2, 5, 9});
        CHECK(spec.layout->psi_size == 4);
        CHECK(spec.shared_names == std::vector<std::string>{"psi0", "psi1", "psi2", "psi3"});
        CHECK(spec.layout->names[16] == "psi0");
        CHECK(spec.layout->names[0] == "b3.1");
    }
    SUBCASE("depression-trial form parses with five shared slots") {
        const ModelSpec spec = load_model_spec(test::spec_path("stard_form.json"));
        CHECK(spec.num_stages == 3);
        CHECK(spec.layout->psi_size == 5);
        CHECK(spec.stage(1).main.size() == 3);
        CHECK(spec.stage(2).main.size() == 5);
        CHECK(spec.stage(3).interaction.size() == 5);
        // Mixed-component features: start QIDS (component 0, canonical text
        // drops the [0]) and slope at stage 1.
        CHECK(spec.stage(1).main[1].text() == "O1");
        CHECK(spec.stage(1).main[1].factors()[0].component == 0);
        CHECK(spec.stage(1).main[2].text() == "O1[1]");
    }
    SUBCASE("malformed spec JSON is a validation error") {
        TempFile f("bad.json");
        f.write("{ not json");
        CHECK_THROWS_AS(load_model_spec(f.path), ValidationError);
    }
    SUBCASE("interaction entry of the wrong shape is rejected") {
        TempFile f("badslot.json");
        f.write(R"({"num_stages":1,"stages":[{"main":["1"],"interaction":[["1","a","b"]]}]})");
        CHECK_THROWS_AS(load_model_spec(f.path), ValidationError);
    }
}

TEST_CASE("scenario files parse and validate") {
    for (const char* name :
         {"ex1.json", "ex2.json", "ex3.json", "ex4.json", "ex5.json", "ex6.json", "ex7.json"}) {
        const Scenario sc = load_scenario(test::scenario_path(name));
        CHECK(sc.n == 300);
        CHECK(sc.noise_sd == 1.0);
        CHECK(sc.response_probs[0] == 0.38);
        CHECK(sc.coding.t1 == -1.0);
    }
    SUBCASE("gamma length checked") {
        TempFile f("badgamma.json");
        f.write(R"({"name":"x","gamma":[1,2,3]})");
        CHECK_THROWS_WITH_AS(load_scenario(f.path), doctest::Contains("13 entries"),
                             ValidationError);
    }
    SUBCASE("sharing-consistent truths across the bundled suite") {
        for (const char* name : {"ex1.json", "ex2.json", "ex3.json", "ex4.json", "ex5.json",
                                 "ex6.json", "ex7.json"}) {
            const Scenario sc = load_scenario(test::scenario_path(name));
            CHECK(sc.gamma[2] == sc.gamma[5]);   // g3 = g6
            CHECK(sc.gamma[2] == sc.gamma[9]);   // g3 = g10
            CHECK(sc.gamma[3] == sc.gamma[6]);   // g4 = g7
            CHECK(sc.gamma[3] == sc.gamma[10]);  // g4 = g11
            CHECK(sc.gamma[7] == sc.gamma[11]);  // g8 = g12
        }
    }
}
