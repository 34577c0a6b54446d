#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace ebunfold {

/// Numeric CSV table with a header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    /// Column index by name; throws ConfigError if absent.
    std::size_t column(const std::string& name) const;
};

/// Shortest round-trip representation (17 significant digits at most).
std::string format_double(double x);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
CsvTable read_csv(const std::string& path);

void write_json(const std::string& path, const nlohmann::json& value);
nlohmann::json read_json(const std::string& path);

}  // namespace ebunfold
