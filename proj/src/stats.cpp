#include "voxdec/stats.hpp"

#include <cmath>
#include <cstdio>

namespace voxdec {

double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) throw InputError("predictions and labels differ in length");
    long tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1)
            (predictions[i] == 1 ? tp : fn)++;
        else
            (predictions[i] == 0 ? tn : fp)++;
    }
    if (tp + fn == 0 || tn + fp == 0)
        throw InputError("balanced accuracy is undefined: labels contain a single class");
    const double recall1 = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double recall0 = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return 0.5 * (recall1 + recall0);
}

double probability_of_improvement(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw InputError("probability of improvement needs non-empty samples");
    double acc = 0.0;
    for (double x : a)
        for (double y : b) {
            if (x > y)
                acc += 1.0;
            else if (x == y)
                acc += 0.5;
        }
    return acc / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

std::string RunStats::format(int precision) const {
    char buf[96];
    if (stddev)
        std::snprintf(buf, sizeof(buf), "%.*f +/- %.*f", precision, mean, precision, *stddev);
    else
        std::snprintf(buf, sizeof(buf), "%.*f", precision, mean);
    return buf;
}

RunStats report_stats(const std::vector<double>& runs) {
    if (runs.empty()) throw InputError("report_stats needs at least one run");
    RunStats s;
    s.n = static_cast<int>(runs.size());
    double acc = 0.0;
    for (double r : runs) acc += r;
    s.mean = acc / s.n;
    if (s.n >= 3) {  // a +/- needs at least 3 seeds
        double ss = 0.0;
        for (double r : runs) ss += (r - s.mean) * (r - s.mean);
        s.stddev = std::sqrt(ss / (s.n - 1));  // sample convention
    }
    return s;
}

}  // namespace voxdec
