#include "voxdec/sampleset.hpp"

#include <algorithm>
#include <set>

namespace voxdec {

Representation representation_from_string(const std::string& s) {
    if (s == "sensor") return Representation::sensor;
    if (s == "source") return Representation::source;
    throw ConfigError("unknown representation: " + s + " (expected sensor|source)");
}

std::string to_string(Representation r) { return r == Representation::sensor ? "sensor" : "source"; }

std::map<std::string, SampleSet> assemble(const SplitPlan& plan, Representation repr,
                                          const std::vector<SessionFeatures>& sessions,
                                          std::shared_ptr<const GridLayout> grid) {
    // leakage guard: no session in two splits; no subject in two splits for
    // inter-subject plans
    std::set<SessionKey> seen_sessions;
    std::map<std::string, std::string> subject_split;
    for (const auto& [split, keys] : plan.splits) {
        for (const auto& key : keys) {
            if (!seen_sessions.insert(key).second)
                throw InputError("session " + key.str() + " appears in more than one split");
            const auto it = subject_split.find(key.subject);
            if (it == subject_split.end()) {
                subject_split[key.subject] = split;
            } else if (plan.mode == SplitPlan::Mode::inter_subject && it->second != split) {
                throw InputError("subject " + key.subject + " appears in splits '" + it->second +
                                 "' and '" + split + "'");
            }
        }
    }

    std::map<SessionKey, const SessionFeatures*> by_key;
    for (const auto& s : sessions) {
        if (s.repr != repr) continue;
        if (static_cast<std::size_t>(s.features.cols()) != s.labels.size())
            throw InputError("session " + s.key.str() + " has mismatched features and labels");
        by_key[s.key] = &s;
    }

    std::map<std::string, SampleSet> out;
    for (const auto& [split, keys] : plan.splits) {
        Eigen::Index total = 0;
        Eigen::Index dim = -1;
        for (const auto& key : keys) {
            const auto it = by_key.find(key);
            if (it == by_key.end())
                throw InputError("missing " + to_string(repr) + " features for session " + key.str());
            total += it->second->features.cols();
            if (dim < 0) dim = it->second->features.rows();
            if (dim != it->second->features.rows())
                throw InputError("feature dimension differs across sessions in split '" + split + "'");
        }

        SampleSet set;
        set.split = split;
        set.repr = repr;
        set.grid = grid;
        set.features.resize(total, dim);
        set.labels.resize(total);
        set.subject_index.resize(static_cast<std::size_t>(total));
        Eigen::Index row = 0;
        for (const auto& key : keys) {
            const SessionFeatures& s = *by_key.at(key);
            const auto idx_it = plan.subject_index.find(key.subject);
            const int subject = idx_it == plan.subject_index.end() ? -1 : idx_it->second;
            for (Eigen::Index t = 0; t < s.features.cols(); ++t, ++row) {
                set.features.row(row) = s.features.col(t).transpose();
                set.labels(row) = s.labels[static_cast<std::size_t>(t)];
                set.subject_index[static_cast<std::size_t>(row)] = subject;
            }
        }
        out.emplace(split, std::move(set));
    }
    return out;
}

}  // namespace voxdec
