#include "dtr/features.hpp"

#include <algorithm>
#include <cctype>

#include "dtr/errors.hpp"
#include "dtr/model.hpp"

namespace dtr {

namespace {

std::string render(const std::vector<VarRef>& factors) {
    if (factors.empty()) return "1";
    std::string out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (i) out += '*';
        const VarRef& v = factors[i];
        out += v.kind;
        out += std::to_string(v.stage);
        if (v.kind == 'O' && v.component != 0) {
            out += '[';
            out += std::to_string(v.component);
            out += ']';
        }
    }
    return out;
}

bool factor_less(const VarRef& a, const VarRef& b) {
    return std::tie(a.kind, a.stage, a.component) < std::tie(b.kind, b.stage, b.component);
}

}  // namespace

Feature::Feature(std::vector<VarRef> factors) : factors_(std::move(factors)) {
    text_ = render(factors_);
}

double Feature::eval(const Trajectory& traj) const {
    double value = 1.0;
    for (const VarRef& v : factors_) {
        if (!traj.present_at(v.stage))
            throw ValidationError("feature '" + text_ + "': patient '" + traj.id +
                                  "' absent at stage " + std::to_string(v.stage));
        if (v.kind == 'A') {
            value *= traj.treatments[v.stage - 1];
        } else {
            const auto& o = traj.covariates[v.stage - 1];
            if (v.component >= static_cast<int>(o.size()))
                throw ValidationError("feature '" + text_ + "': covariate component " +
                                      std::to_string(v.component) + " missing at stage " +
                                      std::to_string(v.stage) + " for patient '" + traj.id + "'");
            value *= o[v.component];
        }
    }
    return value;
}

int Feature::max_covariate_stage() const {
    int m = 0;
    for (const VarRef& v : factors_)
        if (v.kind == 'O') m = std::max(m, v.stage);
    return m;
}

int Feature::max_treatment_stage() const {
    int m = 0;
    for (const VarRef& v : factors_)
        if (v.kind == 'A') m = std::max(m, v.stage);
    return m;
}

bool Feature::same_as(const Feature& other) const {
    if (factors_.size() != other.factors_.size()) return false;
    auto a = factors_;
    auto b = other.factors_;
    std::sort(a.begin(), a.end(), factor_less);
    std::sort(b.begin(), b.end(), factor_less);
    return a == b;
}

Feature parse_feature(std::string_view expr) {
    std::string s;
    for (char c : expr)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    if (s.empty()) throw ValidationError("empty feature expression");

    std::vector<VarRef> factors;
    std::size_t pos = 0;
    auto parse_int = [&](const char* what) {
        std::size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos == start)
            throw ValidationError("feature '" + std::string(expr) + "': expected " +
                                  std::string(what) + " at position " + std::to_string(start));
        return std::stoi(s.substr(start, pos - start));
    };

    while (true) {
        if (pos >= s.size())
            throw ValidationError("feature '" + std::string(expr) + "': trailing '*'");
        char c = s[pos];
        if (c == '1') {
            // Constant term; contributes no factor.
            ++pos;
        } else if (c == 'O' || c == 'A') {
            ++pos;
            VarRef v;
            v.kind = c;
            v.stage = parse_int("stage number");
            if (v.stage < 1)
                throw ValidationError("feature '" + std::string(expr) + "': stage must be >= 1");
            if (pos < s.size() && s[pos] == '[') {
                if (c == 'A')
                    throw ValidationError("feature '" + std::string(expr) +
                                          "': treatments are scalar, no [index] allowed");
                ++pos;
                v.component = parse_int("covariate component");
                if (pos >= s.size() || s[pos] != ']')
                    throw ValidationError("feature '" + std::string(expr) + "': missing ']'");
                ++pos;
            }
            factors.push_back(v);
        } else {
            throw ValidationError("feature '" + std::string(expr) + "': unexpected character '" +
                                  std::string(1, c) + "'");
        }
        if (pos == s.size()) break;
        if (s[pos] != '*')
            throw ValidationError("feature '" + std::string(expr) + "': expected '*' at position " +
                                  std::to_string(pos));
        ++pos;
    }
    return Feature(std::move(factors));
}

}  // namespace dtr
