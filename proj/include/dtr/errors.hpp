#ifndef DTR_ERRORS_HPP
#define DTR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dtr {

// Bad inputs: malformed config, schema violations, inconsistent data.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: singular systems, divergent iterations.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dtr

#endif
