#include "voxdec/inverse.hpp"

#include <cmath>

namespace voxdec {

CovForm cov_form_from_string(const std::string& s) {
    if (s == "regular") return CovForm::regular;
    if (s == "diagonal") return CovForm::diagonal;
    if (s == "scalar") return CovForm::scalar;
    throw ConfigError("unknown covariance form: " + s + " (expected regular|diagonal|scalar)");
}

std::string to_string(CovForm f) {
    switch (f) {
        case CovForm::regular: return "regular";
        case CovForm::diagonal: return "diagonal";
        case CovForm::scalar: return "scalar";
    }
    return "?";
}

InverseMethod inverse_method_from_string(const std::string& s) {
    if (s == "min_norm") return InverseMethod::min_norm;
    if (s == "dspm") return InverseMethod::dspm;
    if (s == "sloreta") return InverseMethod::sloreta;
    if (s == "lcmv") return InverseMethod::lcmv;
    throw ConfigError("unknown inverse method: " + s + " (expected min_norm|dspm|sloreta|lcmv)");
}

std::string to_string(InverseMethod m) {
    switch (m) {
        case InverseMethod::min_norm: return "min_norm";
        case InverseMethod::dspm: return "dspm";
        case InverseMethod::sloreta: return "sloreta";
        case InverseMethod::lcmv: return "lcmv";
    }
    return "?";
}

VoxelType voxel_type_from_string(const std::string& s) {
    if (s == "vec") return VoxelType::vec;
    if (s == "mag") return VoxelType::mag;
    throw ConfigError("unknown voxel type: " + s + " (expected vec|mag)");
}

std::string to_string(VoxelType t) { return t == VoxelType::vec ? "vec" : "mag"; }

NoiseCovariance estimate_noise_covariance(const Eigen::MatrixXd& data,
                                          const std::vector<std::uint8_t>& silence_mask, CovForm form) {
    if (static_cast<std::size_t>(data.cols()) != silence_mask.size())
        throw InputError("silence mask length does not match data");
    const Eigen::Index n_sensors = data.rows();
    std::vector<Eigen::Index> cols;
    for (std::size_t i = 0; i < silence_mask.size(); ++i)
        if (silence_mask[i]) cols.push_back(static_cast<Eigen::Index>(i));

    const Eigen::Index needed = form == CovForm::regular ? 3 * n_sensors : 2;
    if (static_cast<Eigen::Index>(cols.size()) < needed)
        throw InputError("too few silence samples for covariance form '" + to_string(form) + "': have " +
                         std::to_string(cols.size()) + ", need " + std::to_string(needed));

    Eigen::MatrixXd sel(n_sensors, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) sel.col(static_cast<Eigen::Index>(i)) = data.col(cols[i]);
    const Eigen::VectorXd mean = sel.rowwise().mean();
    sel.colwise() -= mean;
    Eigen::MatrixXd cov = (sel * sel.transpose()) / static_cast<double>(cols.size());
    cov = 0.5 * (cov + cov.transpose().eval());  // keep exactly symmetric

    NoiseCovariance out;
    out.form = form;
    switch (form) {
        case CovForm::regular:
            out.matrix = cov;
            break;
        case CovForm::diagonal:
            out.matrix = cov.diagonal().asDiagonal();
            break;
        case CovForm::scalar:
            out.matrix = Eigen::MatrixXd::Identity(n_sensors, n_sensors) * cov.diagonal().mean();
            break;
    }
    return out;
}

NoiseCovariance estimate_noise_covariance(const SensorRecording& rec, CovForm form) {
    std::vector<std::uint8_t> silence(rec.stimulus.labels.size());
    for (std::size_t i = 0; i < silence.size(); ++i) silence[i] = rec.stimulus.labels[i] ? 0 : 1;
    return estimate_noise_covariance(rec.data, silence, form);
}

Eigen::MatrixXd estimate_data_covariance(const Eigen::MatrixXd& data) {
    if (data.cols() < 2) throw InputError("need at least 2 samples for a data covariance");
    const Eigen::VectorXd mean = data.rowwise().mean();
    const Eigen::MatrixXd centered = data.colwise() - mean;
    Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(data.cols());
    return 0.5 * (cov + cov.transpose().eval());
}

Eigen::MatrixXd build_whitener(const NoiseCovariance& cov) {
    const Eigen::Index n = cov.matrix.rows();
    if (n == 0 || cov.matrix.cols() != n) throw InputError("covariance must be square and non-empty");
    if ((cov.matrix - cov.matrix.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw InputError("covariance is not symmetric");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov.matrix);
    const Eigen::VectorXd evals = eig.eigenvalues();
    const double emax = evals.maxCoeff();
    if (emax <= 0.0) throw InputError("covariance is all zero");
    if (evals.minCoeff() < -1e-10 * emax) throw InputError("covariance has negative eigenvalues");

    Eigen::VectorXd inv_sqrt = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (evals(i) > 1e-10 * emax) inv_sqrt(i) = 1.0 / std::sqrt(evals(i));
    return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
}

InverseOperator make_inverse_operator(const LeadField& leadfield, const NoiseCovariance& cov, double snr,
                                      InverseMethod method, const std::optional<Eigen::MatrixXd>& data_cov,
                                      const std::string& subject_id) {
    if (snr <= 0.0) throw ConfigError("snr must be positive");
    const Eigen::Index n_sensors = leadfield.matrix.rows();
    const Eigen::Index n_src = leadfield.matrix.cols();
    if (cov.matrix.rows() != n_sensors) throw InputError("covariance size does not match lead field");

    InverseOperator op;
    op.method = method;
    op.snr = snr;
    op.lambda2 = 1.0 / (snr * snr);
    op.subject_id = subject_id;
    op.normalization = Eigen::VectorXd::Ones(n_src);
    op.degenerate.assign(static_cast<std::size_t>(n_src), 0);

    const Eigen::MatrixXd W = build_whitener(cov);
    const Eigen::MatrixXd G = W * leadfield.matrix;  // whitened lead field

    if (method == InverseMethod::lcmv) {
        if (!data_cov) throw ConfigError("lcmv requires a data covariance");
        if (data_cov->rows() != n_sensors || data_cov->cols() != n_sensors)
            throw InputError("data covariance size does not match lead field");
        Eigen::MatrixXd C = W * (*data_cov) * W.transpose();
        const double loading = 1e-6 * C.trace() / static_cast<double>(n_sensors);
        C += loading * Eigen::MatrixXd::Identity(n_sensors, n_sensors);
        const Eigen::LLT<Eigen::MatrixXd> llt(C);
        if (llt.info() != Eigen::Success) throw InputError("whitened data covariance is not positive definite");

        op.weights.resize(n_src, n_sensors);
        for (Eigen::Index k = 0; k < n_src; ++k) {
            const Eigen::VectorXd g = G.col(k);
            const Eigen::VectorXd u = llt.solve(g);
            const double denom = g.dot(u);
            if (!(denom > 1e-12 * std::max(1.0, g.squaredNorm()))) {
                op.weights.row(k).setZero();
                op.degenerate[static_cast<std::size_t>(k)] = 1;
                continue;
            }
            op.weights.row(k) = (u / denom).transpose() * W;  // unit gain: w^T g = 1
        }
        return op;
    }

    // minimum-norm family: K = G^T (G G^T + lambda2 I)^-1, applied after whitening
    Eigen::MatrixXd gram = G * G.transpose();
    gram.diagonal().array() += op.lambda2;
    const Eigen::MatrixXd Kw = G.transpose() * gram.llt().solve(Eigen::MatrixXd::Identity(n_sensors, n_sensors));

    if (method == InverseMethod::dspm) {
        // per-row noise sensitivity under unit whitened noise
        for (Eigen::Index k = 0; k < n_src; ++k) {
            const double s = Kw.row(k).norm();
            op.normalization(k) = s > 1e-300 ? 1.0 / s : 1.0;
        }
    } else if (method == InverseMethod::sloreta) {
        // resolution-matrix diagonal of K G
        for (Eigen::Index k = 0; k < n_src; ++k) {
            const double d = Kw.row(k).dot(G.col(k));
            op.normalization(k) = d > 1e-300 ? 1.0 / std::sqrt(d) : 1.0;
        }
    }
    op.weights = op.normalization.asDiagonal() * Kw * W;
    return op;
}

SourceEstimate apply_inverse(const InverseOperator& op, const Eigen::MatrixXd& data, double rate_hz,
                             VoxelType type) {
    if (data.rows() != op.weights.cols())
        throw InputError("recording channels do not match inverse operator sensors");
    SourceEstimate est;
    est.n_voxels = op.n_voxels();
    est.sampling_rate_hz = rate_hz;
    est.subject_id = op.subject_id;
    est.type = VoxelType::vec;
    est.data = op.weights * data;
    if (type == VoxelType::mag) return vec_to_mag(est);
    return est;
}

SourceEstimate apply_inverse(const InverseOperator& op, const SensorRecording& rec, VoxelType type) {
    return apply_inverse(op, rec.data, rec.sampling_rate_hz, type);
}

SourceEstimate vec_to_mag(const SourceEstimate& est) {
    if (est.type != VoxelType::vec) throw InputError("vec_to_mag expects a vec estimate");
    SourceEstimate mag;
    mag.type = VoxelType::mag;
    mag.n_voxels = est.n_voxels;
    mag.sampling_rate_hz = est.sampling_rate_hz;
    mag.subject_id = est.subject_id;
    mag.data.resize(est.n_voxels, est.data.cols());
    for (int v = 0; v < est.n_voxels; ++v)
        mag.data.row(v) = est.data.middleRows(3 * v, 3).colwise().norm();
    return mag;
}

}  // namespace voxdec
