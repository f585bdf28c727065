#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxdec/core.hpp"

namespace voxdec {

// Mean of per-class recalls; needs both classes among the labels.
double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Fraction of cross pairs (a, b) with a > b, ties counted half.
double probability_of_improvement(const std::vector<double>& a, const std::vector<double>& b);

// mean +/- sample std; the +/- part is suppressed below 3 runs.
struct RunStats {
    double mean = 0.0;
    std::optional<double> stddev;
    int n = 0;

    std::string format(int precision = 2) const;
};

RunStats report_stats(const std::vector<double>& runs);

}  // namespace voxdec
