#include "mwcr/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mwcr {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_finite(const std::string& cell, std::size_t row, const std::string& column) {
    const std::string t = trim(cell);
    double value = 0.0;
    const char* begin = t.data();
    const char* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (t.empty() || ec != std::errc() || ptr != end || !std::isfinite(value))
        throw ParseError("row " + std::to_string(row) + ", column '" + column +
                             "': cannot parse '" + t + "' as a finite number",
                         row);
    return value;
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) return j;
    throw SchemaError("missing column '" + name + "'");
}

}  // namespace

std::vector<std::string> split_csv_record(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

Dataset read_long_csv(std::istream& in, const CsvColumns& columns) {
    std::string line;
    if (!std::getline(in, line) || trim(line).empty())
        throw EmptyDataError("CSV input is empty");
    std::vector<std::string> header = split_csv_record(line);
    for (auto& h : header) h = trim(h);

    const std::size_t y_col = find_column(header, columns.outcome);
    const std::size_t id_col = find_column(header, columns.cluster);
    std::vector<std::size_t> x_cols;
    for (const auto& c : columns.covariates) x_cols.push_back(find_column(header, c));

    const Index p = static_cast<Index>(x_cols.size()) + (columns.add_intercept ? 1 : 0);
    if (p == 0) throw SchemaError("no covariates requested");
    std::vector<Observation<double>> rows;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_record(line);
        if (cells.size() != header.size())
            throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                 " fields, header has " + std::to_string(header.size()),
                             row);
        Observation<double> obs;
        obs.cluster_id = trim(cells[id_col]);
        obs.outcome = parse_finite(cells[y_col], row, columns.outcome);
        obs.covariates.resize(p);
        Index j = 0;
        if (columns.add_intercept) obs.covariates(j++) = 1.0;
        for (std::size_t k = 0; k < x_cols.size(); ++k)
            obs.covariates(j++) = parse_finite(cells[x_cols[k]], row, columns.covariates[k]);
        rows.push_back(std::move(obs));
    }
    if (rows.empty()) throw EmptyDataError("CSV input has a header but no data rows");

    std::vector<std::string> names;
    if (columns.add_intercept) names.emplace_back(kInterceptName);
    names.insert(names.end(), columns.covariates.begin(), columns.covariates.end());
    return Dataset::from_observations(rows, std::move(names), columns.add_intercept);
}

Dataset load_long_csv(const std::filesystem::path& path, const CsvColumns& columns) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open '" + path.string() + "'");
    return read_long_csv(in, columns);
}

void write_long_csv(std::ostream& out, const Dataset& data, const std::string& outcome_name,
                    const std::string& cluster_name) {
    const Index first = data.has_intercept() ? 1 : 0;
    out << cluster_name << ',' << outcome_name;
    for (Index j = first; j < data.p(); ++j)
        out << ',' << data.covariate_names()[static_cast<std::size_t>(j)];
    out << '\n';
    const auto& d = data.design();
    const auto old = out.precision(std::numeric_limits<double>::max_digits10);
    for (Index i = 0; i < data.n(); ++i) {
        for (Index r = d.offsets[i]; r < d.offsets[i + 1]; ++r) {
            out << data.cluster_ids()[static_cast<std::size_t>(i)] << ',' << d.y(r);
            for (Index j = first; j < data.p(); ++j) out << ',' << d.x(r, j);
            out << '\n';
        }
    }
    out.precision(old);
}

}  // namespace mwcr
