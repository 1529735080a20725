#ifndef DTR_IO_HPP
#define DTR_IO_HPP

#include <optional>
#include <string>

#include "dtr/model.hpp"

namespace dtr {

// Wide per-patient CSV, one row per patient, blank cells for stages the
// patient exited before. Three-stage header:
//   Y1,Y2,Y3,Y_primary,A1,A2,A3,O1,O2,O3,R1,R2
// General J follows the same pattern (Y1..YJ, Y_primary, A1..AJ, O1..OJ,
// R1..R_{J-1}).
//
// Validation on ingest: exact header, parseable numeric cells, R flags in
// {0, 1}, responder truncation (cells after an exit must be blank), treatment
// values in the coding pair, and the primary outcome consistent with the
// responder-weighted composition of stage outcomes (tolerance 2e-3 to admit
// tables published at three decimals).
SmartDataset ingest_csv(const std::string& path,
                        std::optional<TreatmentCoding> coding = std::nullopt);

void write_csv(const SmartDataset& data, const std::string& path);

// %.17g, so values survive a write/ingest round trip bit-for-bit.
std::string format_double(double v);

}  // namespace dtr

#endif
