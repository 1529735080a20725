#include "dtr/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dtr/errors.hpp"

namespace dtr {

namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(origin + ": invalid JSON: " + e.what());
    }
}

}  // namespace

ModelSpec parse_model_spec(const std::string& json_text, const std::string& origin) {
    const json doc = parse_json(json_text, origin);
    try {
        if (!doc.contains("num_stages"))
            throw ValidationError(origin + ": missing 'num_stages'");
        const int J = doc.at("num_stages").get<int>();
        if (!doc.contains("stages") || !doc.at("stages").is_array())
            throw ValidationError(origin + ": missing 'stages' array");
        const json& stages = doc.at("stages");

        std::vector<StageModel> models;
        for (std::size_t j = 0; j < stages.size(); ++j) {
            const json& st = stages[j];
            StageModel model;
            for (const json& expr : st.value("main", json::array()))
                model.main.push_back(parse_feature(expr.get<std::string>()));
            for (const json& slot : st.value("interaction", json::array())) {
                InteractionSlot s;
                if (slot.is_string()) {
                    s.feature = parse_feature(slot.get<std::string>());
                } else if (slot.is_array() && slot.size() == 2) {
                    s.feature = parse_feature(slot[0].get<std::string>());
                    s.shared_name = slot[1].get<std::string>();
                    if (s.shared_name.empty())
                        throw ValidationError(origin + ": stage " + std::to_string(j + 1) +
                                              ": shared slot name must be non-empty");
                } else {
                    throw ValidationError(origin + ": stage " + std::to_string(j + 1) +
                                          ": interaction entries are \"expr\" or [\"expr\", "
                                          "\"shared_name\"]");
                }
                model.interaction.push_back(std::move(s));
            }
            models.push_back(std::move(model));
        }
        return make_model_spec(J, std::move(models));
    } catch (const json::exception& e) {
        throw ValidationError(origin + ": malformed model spec: " + e.what());
    }
}

ModelSpec load_model_spec(const std::string& path) {
    return parse_model_spec(slurp(path), path);
}

Scenario parse_scenario(const std::string& json_text, const std::string& origin) {
    const json doc = parse_json(json_text, origin);
    try {
        Scenario s;
        s.name = doc.value("name", origin);
        const auto gamma = doc.at("gamma").get<std::vector<double>>();
        if (gamma.size() != 13)
            throw ValidationError(origin + ": 'gamma' must have 13 entries, found " +
                                  std::to_string(gamma.size()));
        std::copy(gamma.begin(), gamma.end(), s.gamma.begin());

        const auto d2 = doc.value("delta2", std::vector<double>{0.0, 0.0});
        if (d2.size() != 2) throw ValidationError(origin + ": 'delta2' must have 2 entries");
        std::copy(d2.begin(), d2.end(), s.delta2.begin());
        const auto d3 = doc.value("delta3", std::vector<double>{0.0, 0.0, 0.0});
        if (d3.size() != 3) throw ValidationError(origin + ": 'delta3' must have 3 entries");
        std::copy(d3.begin(), d3.end(), s.delta3.begin());

        const auto rp = doc.value("response_probs", std::vector<double>{0.38, 0.18});
        if (rp.size() != 2)
            throw ValidationError(origin + ": 'response_probs' must have 2 entries");
        std::copy(rp.begin(), rp.end(), s.response_probs.begin());

        if (doc.contains("coding")) {
            const auto c = doc.at("coding").get<std::vector<double>>();
            if (c.size() != 2) throw ValidationError(origin + ": 'coding' must have 2 entries");
            s.coding = {c[0], c[1]};
        }
        s.noise_sd = doc.value("noise_sd", 1.0);
        s.n = doc.value("n", 300);
        s.seed = doc.value("seed", std::uint64_t{0});
        validate_scenario(s);
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(origin + ": malformed scenario: " + e.what());
    }
}

Scenario load_scenario(const std::string& path) {
    return parse_scenario(slurp(path), path);
}

}  // namespace dtr
