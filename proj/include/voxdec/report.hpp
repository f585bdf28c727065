#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace voxdec {

// Tabular experiment output: CSV + aligned text rendering + provenance JSON
// (fully resolved config, content hashes, per-seed raw values).
struct Report {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    nlohmann::json provenance;

    void add_row(std::vector<std::string> cells);
    std::string to_csv() const;
    std::string to_text() const;

    // <dir>/<name>.csv, .txt, .json
    void write(const std::filesystem::path& dir) const;
};

std::string format_accuracy(double mean, double stddev, int n_seeds);
std::string format_double(double v, int precision = 4);

}  // namespace voxdec
