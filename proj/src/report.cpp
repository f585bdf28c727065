#include "voxdec/report.hpp"

#include <cstdio>
#include <fstream>

#include "voxdec/core.hpp"

namespace voxdec {

void Report::add_row(std::vector<std::string> cells) {
    if (cells.size() != columns.size()) throw InputError("report row width does not match columns");
    rows.push_back(std::move(cells));
}

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

std::string Report::to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i)
        out += (i ? "," : "") + csv_escape(columns[i]);
    out += '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_escape(row[i]);
        out += '\n';
    }
    return out;
}

std::string Report::to_text() const {
    std::vector<std::size_t> width(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) width[i] = columns[i].size();
    for (const auto& row : rows)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());

    auto pad = [](const std::string& s, std::size_t w) {
        std::string out = s;
        out.resize(w, ' ');
        return out;
    };
    std::string out = "# " + name + "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "  " : "") + pad(columns[i], width[i]);
    out += '\n';
    for (std::size_t i = 0; i < columns.size(); ++i)
        out += (i ? "  " : "") + std::string(width[i], '-');
    out += '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "  " : "") + pad(row[i], width[i]);
        out += '\n';
    }
    return out;
}

void Report::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / (name + ".csv"), std::ios::trunc);
        f << to_csv();
    }
    {
        std::ofstream f(dir / (name + ".txt"), std::ios::trunc);
        f << to_text();
    }
    {
        std::ofstream f(dir / (name + ".json"), std::ios::trunc);
        f << provenance.dump(2) << '\n';
    }
}

std::string format_accuracy(double mean, double stddev, int n_seeds) {
    char buf[96];
    if (n_seeds >= 3)
        std::snprintf(buf, sizeof(buf), "%.4f +/- %.4f", mean, stddev);
    else
        std::snprintf(buf, sizeof(buf), "%.4f", mean);
    return buf;
}

std::string format_double(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

}  // namespace voxdec
