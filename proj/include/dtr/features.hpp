#ifndef DTR_FEATURES_HPP
#define DTR_FEATURES_HPP

#include <string>
#include <string_view>
#include <vector>

namespace dtr {

struct Trajectory;

// One variable reference inside a feature expression: a stage covariate
// component O<stage>[component] or a stage treatment A<stage>.
struct VarRef {
    char kind = 'O';  // 'O' or 'A'
    int stage = 1;    // 1-based
    int component = 0;

    friend bool operator==(const VarRef&, const VarRef&) = default;
};

// A feature is a product of variable references; the empty product is the
// constant 1. Expressions: "1", "O1", "A2", "O3[1]", "O2*A1", "A1*A2", ...
class Feature {
public:
    Feature() = default;
    explicit Feature(std::vector<VarRef> factors);

    // Value on a trajectory; all referenced stages must be reached.
    double eval(const Trajectory& traj) const;

    bool is_constant_one() const { return factors_.empty(); }
    const std::vector<VarRef>& factors() const { return factors_; }
    const std::string& text() const { return text_; }

    // Largest stage referenced by covariates / treatments (0 if none).
    int max_covariate_stage() const;
    int max_treatment_stage() const;

    // Structural equality is order-insensitive in the factors.
    bool same_as(const Feature& other) const;

private:
    std::vector<VarRef> factors_;
    std::string text_ = "1";
};

// Parses the expression mini-language. Throws ValidationError on malformed
// input, naming the offending token.
Feature parse_feature(std::string_view expr);

}  // namespace dtr

#endif
