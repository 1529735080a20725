#ifndef DTR_CONFIG_HPP
#define DTR_CONFIG_HPP

#include <string>

#include "dtr/model.hpp"
#include "dtr/simulator.hpp"

namespace dtr {

// Model-spec config (JSON). Interaction entries are either ["expr", "name"]
// for a shared slot or "expr" for a stage-local one:
//   {
//     "num_stages": 3,
//     "stages": [
//       {"main": ["1", "O1"], "interaction": [["1", "psi0"], ["O1", "psi1"]]},
//       ...
//     ]
//   }
ModelSpec load_model_spec(const std::string& path);
ModelSpec parse_model_spec(const std::string& json_text, const std::string& origin);

// Scenario config (JSON): name, gamma (13), delta2 (2), delta3 (3),
// response_probs (2), coding (2), noise_sd, n, seed, optional notes.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& json_text, const std::string& origin);

}  // namespace dtr

#endif
