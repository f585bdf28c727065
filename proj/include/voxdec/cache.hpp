#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxdec/core.hpp"

namespace voxdec {

// Flat double tensor used for cache round-trips.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    std::size_t size() const {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }

    static Tensor from_matrix(const Eigen::MatrixXd& m) {
        Tensor t;
        t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
        t.data.resize(t.size());
        // row-major payload
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) t.data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        return t;
    }

    Eigen::MatrixXd to_matrix() const {
        if (shape.size() != 2) throw CacheError("tensor is not 2-d");
        Eigen::MatrixXd m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[static_cast<std::size_t>(r * m.cols() + c)];
        return m;
    }
};

// Binary tensor file: magic, version, dtype, rank, shape, key hash, payload
// checksum, then raw little-endian doubles. The key encodes the producing
// parameter tuple so stale configs never collide.
void cache_store(const std::filesystem::path& file, const std::string& key, const Tensor& t);
Tensor cache_load(const std::filesystem::path& file, const std::string& expected_key);

bool cache_exists(const std::filesystem::path& file);

// cache/<dataset>/<subject>/<session>/<param-hash>.tns
std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& dataset,
                                 const std::string& subject, const std::string& session,
                                 const std::string& param_hash, const std::string& stem);

// Hash of a canonical parameter string, used in cache file names.
std::string param_hash(const std::string& canonical_params);

}  // namespace voxdec
