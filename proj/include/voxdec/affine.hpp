#pragma once

#include <Eigen/Dense>

#include "voxdec/core.hpp"

namespace voxdec {

// Rigid-ish 4x4 affine on 3D points, homogeneous convention.
struct Affine {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();

    static Affine identity() { return Affine{}; }

    static Affine from_parts(const Eigen::Matrix3d& linear, const Eigen::Vector3d& translation) {
        Affine a;
        a.m.topLeftCorner<3, 3>() = linear;
        a.m.topRightCorner<3, 1>() = translation;
        return a;
    }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
        return m.topLeftCorner<3, 3>() * p + m.topRightCorner<3, 1>();
    }

    Eigen::Matrix3d linear() const { return m.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return m.topRightCorner<3, 1>(); }

    Affine compose(const Affine& other) const {  // this after other
        Affine a;
        a.m = m * other.m;
        return a;
    }

    Affine inverse() const {
        const Eigen::Matrix3d lin = linear();
        if (std::abs(lin.determinant()) < 1e-12) throw InputError("affine is not invertible");
        Affine a;
        const Eigen::Matrix3d inv = lin.inverse();
        a.m.topLeftCorner<3, 3>() = inv;
        a.m.topRightCorner<3, 1>() = -inv * translation();
        return a;
    }

    // Rotation factor of the polar decomposition of the linear part.
    Eigen::Matrix3d rotation() const {
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(linear(), Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
        if (r.determinant() < 0) {
            Eigen::Matrix3d u = svd.matrixU();
            u.col(2) *= -1.0;
            r = u * svd.matrixV().transpose();
        }
        return r;
    }

    bool is_identity(double tol = 1e-12) const { return (m - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <= tol; }
};

}  // namespace voxdec
