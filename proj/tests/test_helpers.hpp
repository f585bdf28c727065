#pragma once

#include <Eigen/Dense>

#include "voxdec/inverse.hpp"
#include "voxdec/rng.hpp"

namespace voxdec::testutil {

// Random symmetric PSD matrix with eigenvalues log-uniform over six decades
// plus occasional exact zeros, exercising the whitener's rank truncation.
inline NoiseCovariance random_psd_covariance(int n, Rng& rng) {
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd evals(n);
    for (int i = 0; i < n; ++i)
        evals(i) = (n > 1 && rng.uniform() < 0.2) ? 0.0 : std::pow(10.0, rng.uniform(-6.0, 0.0));
    if (evals.maxCoeff() == 0.0) evals(0) = 1.0;
    NoiseCovariance cov;
    cov.form = CovForm::regular;
    cov.matrix = q * evals.asDiagonal() * q.transpose();
    cov.matrix = 0.5 * (cov.matrix + cov.matrix.transpose().eval());
    return cov;
}

// Projector onto the eigenspace the whitener retains (eigenvalues above
// 1e-10 of the maximum).
inline Eigen::MatrixXd retained_projector(const Eigen::MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const double cut = 1e-10 * eig.eigenvalues().maxCoeff();
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
        if (eig.eigenvalues()(i) > cut)
            p += eig.eigenvectors().col(i) * eig.eigenvectors().col(i).transpose();
    return p;
}

}  // namespace voxdec::testutil
