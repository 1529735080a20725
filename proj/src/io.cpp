#include "dtr/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dtr/errors.hpp"

namespace dtr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_cell(const std::string& cell, const std::string& column, int row) {
    double v = 0.0;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw ValidationError("cannot parse '" + cell + "' in column '" + column +
                              "' (data row " + std::to_string(row) + ")");
    return v;
}

std::vector<std::string> expected_header(int J) {
    std::vector<std::string> h;
    for (int j = 1; j <= J; ++j) h.push_back("Y" + std::to_string(j));
    h.push_back("Y_primary");
    for (int j = 1; j <= J; ++j) h.push_back("A" + std::to_string(j));
    for (int j = 1; j <= J; ++j) h.push_back("O" + std::to_string(j));
    for (int j = 1; j < J; ++j) h.push_back("R" + std::to_string(j));
    return h;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

SmartDataset ingest_csv(const std::string& path, std::optional<TreatmentCoding> coding) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ValidationError("dataset '" + path + "' is empty");
    const std::vector<std::string> header = split_csv_line(line);

    // Infer J from the leading Y columns, then demand the exact schema.
    int J = 0;
    while (J < static_cast<int>(header.size()) && header[J] == "Y" + std::to_string(J + 1)) ++J;
    if (J == 0)
        throw ValidationError("dataset '" + path + "': header must start with 'Y1', found '" +
                              (header.empty() ? std::string("<none>") : header[0]) + "'");
    const std::vector<std::string> expect = expected_header(J);
    if (header.size() != expect.size())
        throw ValidationError("dataset '" + path + "': expected " +
                              std::to_string(expect.size()) + " columns for " +
                              std::to_string(J) + " stages, found " +
                              std::to_string(header.size()));
    for (std::size_t i = 0; i < expect.size(); ++i)
        if (header[i] != expect[i])
            throw ValidationError("dataset '" + path + "': column " + std::to_string(i + 1) +
                                  " must be '" + expect[i] + "', found '" + header[i] + "'");

    const int col_yprimary = J;
    const int col_a = J + 1;
    const int col_o = 2 * J + 1;
    const int col_r = 3 * J + 1;

    SmartDataset data;
    data.num_stages = J;
    int row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() > expect.size())
            throw ValidationError("data row " + std::to_string(row) + " has " +
                                  std::to_string(cells.size()) + " cells, expected at most " +
                                  std::to_string(expect.size()));
        cells.resize(expect.size());

        Trajectory t;
        t.id = std::to_string(row);
        const auto blank = [&](int c) { return cells[c].empty(); };
        const auto get = [&](int c) { return parse_cell(cells[c], expect[c], row); };

        if (blank(col_yprimary))
            throw ValidationError("missing Y_primary (data row " + std::to_string(row) + ")");
        t.primary_outcome = get(col_yprimary);

        // Walk stages until an exit; everything after must be blank.
        int exit_stage = J;
        for (int j = 1; j <= J; ++j) {
            if (blank(col_a + j - 1) || blank(col_o + j - 1))
                throw ValidationError("stage " + std::to_string(j) +
                                      " cells must be present before an exit (data row " +
                                      std::to_string(row) + ")");
            t.treatments.push_back(get(col_a + j - 1));
            t.covariates.push_back({get(col_o + j - 1)});
            t.stage_outcomes.push_back(blank(j - 1) ? std::nan("") : get(j - 1));
            if (j == J) break;
            if (blank(col_r + j - 1))
                throw ValidationError("missing responder flag R" + std::to_string(j) +
                                      " (data row " + std::to_string(row) + ")");
            const double r = get(col_r + j - 1);
            if (r != 0.0 && r != 1.0)
                throw ValidationError("responder flag R" + std::to_string(j) + " must be 0 or 1 "
                                      "(data row " + std::to_string(row) + ")");
            t.responders.push_back(static_cast<int>(r));
            if (r == 1.0) {
                exit_stage = j;
                break;
            }
        }
        for (int j = exit_stage + 1; j <= J; ++j) {
            for (int c : {j - 1, col_a + j - 1, col_o + j - 1})
                if (!blank(c))
                    throw ValidationError("column '" + expect[c] + "' must be blank after the "
                                          "responder exit at stage " + std::to_string(exit_stage) +
                                          " (data row " + std::to_string(row) + ")");
            if (j < J && !blank(col_r + j - 1))
                throw ValidationError("column 'R" + std::to_string(j) + "' must be blank after "
                                      "the responder exit at stage " + std::to_string(exit_stage) +
                                      " (data row " + std::to_string(row) + ")");
        }

        // Composition check when every reached stage outcome is recorded
        // (defined for up to three stages).
        bool have_all = J <= 3;
        for (double y : t.stage_outcomes) have_all = have_all && !std::isnan(y);
        if (have_all) {
            const int k = t.stages_present();
            const double composed = primary_outcome(
                t.stage_outcomes[0], k > 1 ? t.stage_outcomes[1] : 0.0,
                k > 2 ? t.stage_outcomes[2] : 0.0, k >= 1 && exit_stage == 1 ? 1 : 0,
                k >= 2 && exit_stage == 2 ? 1 : 0);
            if (std::abs(composed - t.primary_outcome) >
                2e-3 * std::max(1.0, std::abs(composed)))
                throw ValidationError(
                    "Y_primary = " + cells[col_yprimary] + " disagrees with the responder-weighted "
                    "composition " + format_double(composed) + " (data row " +
                    std::to_string(row) + ")");
        }
        data.patients.push_back(std::move(t));
    }
    if (data.patients.empty())
        throw ValidationError("dataset '" + path + "' contains a header but no rows");

    if (coding) {
        data.coding = *coding;
    } else {
        std::set<double> values;
        for (const Trajectory& t : data.patients)
            for (double a : t.treatments) values.insert(a);
        if (values.size() != 2)
            throw ValidationError("dataset '" + path + "' has " + std::to_string(values.size()) +
                                  " distinct treatment values; pass an explicit coding");
        auto it = values.begin();
        data.coding.t1 = *it++;
        data.coding.t2 = *it;
    }
    validate_dataset(data);
    return data;
}

void write_csv(const SmartDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write dataset '" + path + "'");
    const int J = data.num_stages;
    const std::vector<std::string> header = expected_header(J);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";

    for (const Trajectory& t : data.patients) {
        const int k = t.stages_present();
        std::vector<std::string> cells;
        for (int j = 1; j <= J; ++j)
            cells.push_back(j <= k && !std::isnan(t.stage_outcomes[j - 1])
                                ? format_double(t.stage_outcomes[j - 1])
                                : "");
        cells.push_back(format_double(t.primary_outcome));
        for (int j = 1; j <= J; ++j)
            cells.push_back(j <= k ? format_double(t.treatments[j - 1]) : "");
        for (int j = 1; j <= J; ++j)
            cells.push_back(j <= k ? format_double(t.covariates[j - 1].at(0)) : "");
        for (int j = 1; j < J; ++j)
            cells.push_back(j <= static_cast<int>(t.responders.size())
                                ? std::to_string(t.responders[j - 1])
                                : "");
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << "\n";
    }
    if (!out) throw ValidationError("failed writing dataset '" + path + "'");
}

}  // namespace dtr
