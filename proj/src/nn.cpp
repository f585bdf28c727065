#include "voxdec/nn.hpp"

#include <cmath>

namespace voxdec {

void adamw_step(ParamStore& store, double lr, double weight_decay, double beta1, double beta2,
                double eps) {
    if (store.grads.size() != store.params.size()) throw InputError("gradient buffer size mismatch");
    store.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(store.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(store.step));
    if (weight_decay != 0.0) store.params *= (1.0 - lr * weight_decay);
    store.adam_m = beta1 * store.adam_m + (1.0 - beta1) * store.grads;
    store.adam_v = beta2 * store.adam_v.array().matrix() +
                   (1.0 - beta2) * store.grads.array().square().matrix();
    store.params.array() -=
        lr * (store.adam_m.array() / bc1) / ((store.adam_v.array() / bc2).sqrt() + eps);
}

double bce_with_logits(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels) {
    if (logits.size() != labels.size()) throw InputError("logits and labels differ in length");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double z = logits(i);
        acc += std::max(z, 0.0) - labels(i) * z + std::log1p(std::exp(-std::abs(z)));
    }
    return acc / static_cast<double>(logits.size());
}

Eigen::VectorXd bce_with_logits_grad(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels) {
    Eigen::VectorXd g(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits(i)));
        g(i) = (p - labels(i)) / static_cast<double>(logits.size());
    }
    return g;
}

namespace {

void fan_in_uniform(Eigen::Map<Eigen::MatrixXd> m, int fan_in, Rng& rng) {
    const double a = 1.0 / std::sqrt(std::max(1, fan_in));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
}

}  // namespace

// --- Linear ------------------------------------------------------------------

Linear::Linear(ParamStore& store, const std::string& name, int in, int out) : in_(in), out_(out) {
    w_ = store.add_view(name + ".w", out, in);
    b_ = store.add_view(name + ".b", out, 1);
}

void Linear::init(ParamStore& store, Rng& rng) const {
    fan_in_uniform(store.p(w_, out_, in_), in_, rng);
    fan_in_uniform(store.p(b_, out_, 1), in_, rng);
}

Eigen::MatrixXd Linear::forward(ParamStore& store, const Eigen::MatrixXd& x) {
    if (x.cols() != in_) throw InputError("linear layer input dimension mismatch");
    x_ = x;
    Eigen::MatrixXd y = x * store.p(w_, out_, in_).transpose();
    y.rowwise() += store.p(b_, out_, 1).col(0).transpose();
    return y;
}

Eigen::MatrixXd Linear::backward(ParamStore& store, const Eigen::MatrixXd& gy) {
    store.g(w_, out_, in_) += gy.transpose() * x_;
    store.g(b_, out_, 1).col(0) += gy.colwise().sum().transpose();
    return gy * store.p(w_, out_, in_);
}

// --- Relu ---------------------------------------------------------------------

Eigen::MatrixXd Relu::forward(const Eigen::MatrixXd& x) {
    mask_ = (x.array() > 0.0).cast<double>();
    return x.cwiseProduct(mask_);
}

Eigen::MatrixXd Relu::backward(const Eigen::MatrixXd& gy) { return gy.cwiseProduct(mask_); }

// --- Dropout ------------------------------------------------------------------

Eigen::MatrixXd Dropout::forward(const Eigen::MatrixXd& x, bool train, Rng& rng) {
    if (!train || p_ <= 0.0) {
        identity_ = true;
        return x;
    }
    identity_ = false;
    const double keep = 1.0 - p_;
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i)
        mask_.data()[i] = rng.uniform() < p_ ? 0.0 : 1.0 / keep;
    return x.cwiseProduct(mask_);
}

Eigen::MatrixXd Dropout::backward(const Eigen::MatrixXd& gy) {
    return identity_ ? gy : gy.cwiseProduct(mask_);
}

// --- ChannelDropout -------------------------------------------------------------

Eigen::MatrixXd ChannelDropout::forward(const Eigen::MatrixXd& x, bool train, Rng& rng) {
    if (!train || p_ <= 0.0) {
        identity_ = true;
        return x;
    }
    identity_ = false;
    const double keep = 1.0 - p_;
    mask_.resize(x.rows(), channels_);
    for (Eigen::Index i = 0; i < mask_.size(); ++i)
        mask_.data()[i] = rng.uniform() < p_ ? 0.0 : 1.0 / keep;
    Eigen::MatrixXd y = x;
    for (int c = 0; c < channels_; ++c)
        y.middleCols(static_cast<Eigen::Index>(c) * cells_, cells_).array().colwise() *=
            mask_.col(c).array();
    return y;
}

Eigen::MatrixXd ChannelDropout::backward(const Eigen::MatrixXd& gy) {
    if (identity_) return gy;
    Eigen::MatrixXd gx = gy;
    for (int c = 0; c < channels_; ++c)
        gx.middleCols(static_cast<Eigen::Index>(c) * cells_, cells_).array().colwise() *=
            mask_.col(c).array();
    return gx;
}

// --- Embedding -----------------------------------------------------------------

Embedding::Embedding(ParamStore& store, const std::string& name, int n_subjects, int dim)
    : n_(n_subjects), dim_(dim) {
    t_ = store.add_view(name + ".table", dim, n_subjects);
}

void Embedding::init(ParamStore& store, Rng& rng) const {
    fan_in_uniform(store.p(t_, dim_, n_), dim_, rng);
}

Eigen::MatrixXd Embedding::forward(ParamStore& store, const std::vector<int>& subjects, bool train) {
    subjects_ = subjects;
    const auto table = store.p(t_, dim_, n_);
    const Eigen::VectorXd mean = table.rowwise().mean();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(subjects.size()), dim_);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const int s = subjects[i];
        if (s < 0) {
            if (train) throw InputError("unknown subject in training batch (mean embedding is eval-only)");
            out.row(static_cast<Eigen::Index>(i)) = mean.transpose();
        } else if (s >= n_) {
            throw InputError("subject index out of range");
        } else {
            out.row(static_cast<Eigen::Index>(i)) = table.col(s).transpose();
        }
    }
    return out;
}

void Embedding::backward(ParamStore& store, const Eigen::MatrixXd& gy) {
    auto g = store.g(t_, dim_, n_);
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        const int s = subjects_[i];
        if (s >= 0) g.col(s) += gy.row(static_cast<Eigen::Index>(i)).transpose();
    }
}

// --- Conv3d ---------------------------------------------------------------------

Conv3d::Conv3d(ParamStore& store, const std::string& name, int in_ch, int out_ch, Eigen::Vector3i dims)
    : in_ch_(in_ch), out_ch_(out_ch), dims_(dims) {
    w_ = store.add_view(name + ".w", out_ch, static_cast<Eigen::Index>(in_ch) * 27);
    b_ = store.add_view(name + ".b", out_ch, 1);
}

void Conv3d::init(ParamStore& store, Rng& rng) const {
    fan_in_uniform(store.p(w_, out_ch_, static_cast<Eigen::Index>(in_ch_) * 27), in_ch_ * 27, rng);
    fan_in_uniform(store.p(b_, out_ch_, 1), in_ch_ * 27, rng);
}

void Conv3d::im2col(const Eigen::MatrixXd& x, Eigen::Index first, Eigen::Index count,
                    Eigen::MatrixXd& colT) const {
    const int nx = dims_.x(), ny = dims_.y(), nz = dims_.z();
    const Eigen::Index cells = static_cast<Eigen::Index>(nx) * ny * nz;
    const Eigen::Index col_rows = colT.rows();
    colT.setZero();
    // x rows are sample-major; x itself is column-major, so walk raw pointers
    const double* xdata = x.data();
    const Eigen::Index xstride = x.rows();  // distance between consecutive features of one sample
    for (Eigen::Index s = 0; s < count; ++s) {
        const double* xrow = xdata + (first + s);
        for (int c = 0; c < in_ch_; ++c)
            for (int kx = -1; kx <= 1; ++kx)
                for (int ky = -1; ky <= 1; ++ky)
                    for (int kz = -1; kz <= 1; ++kz) {
                        const Eigen::Index kcol =
                            static_cast<Eigen::Index>(c) * 27 + (kx + 1) * 9 + (ky + 1) * 3 + (kz + 1);
                        double* dst_col = colT.data() + kcol * col_rows;
                        const int zlo = std::max(0, -kz), zhi = std::min(nz, nz - kz);
                        if (zlo >= zhi) continue;
                        for (int dx = std::max(0, -kx); dx < std::min(nx, nx - kx); ++dx)
                            for (int dy = std::max(0, -ky); dy < std::min(ny, ny - ky); ++dy) {
                                const Eigen::Index dst =
                                    s * cells + (static_cast<Eigen::Index>(dx) * ny + dy) * nz + zlo;
                                const Eigen::Index src =
                                    c * cells +
                                    (static_cast<Eigen::Index>(dx + kx) * ny + (dy + ky)) * nz + zlo + kz;
                                double* d = dst_col + dst;
                                const double* sp = xrow + src * xstride;
                                for (int z = zlo; z < zhi; ++z, ++d, sp += xstride) *d = *sp;
                            }
                    }
    }
}

void Conv3d::col2im_add(const Eigen::MatrixXd& gcolT, Eigen::Index first, Eigen::Index count,
                        Eigen::MatrixXd& gx) const {
    const int nx = dims_.x(), ny = dims_.y(), nz = dims_.z();
    const Eigen::Index cells = static_cast<Eigen::Index>(nx) * ny * nz;
    const Eigen::Index col_rows = gcolT.rows();
    double* gdata = gx.data();
    const Eigen::Index gstride = gx.rows();
    for (Eigen::Index s = 0; s < count; ++s) {
        double* grow = gdata + (first + s);
        for (int c = 0; c < in_ch_; ++c)
            for (int kx = -1; kx <= 1; ++kx)
                for (int ky = -1; ky <= 1; ++ky)
                    for (int kz = -1; kz <= 1; ++kz) {
                        const Eigen::Index kcol =
                            static_cast<Eigen::Index>(c) * 27 + (kx + 1) * 9 + (ky + 1) * 3 + (kz + 1);
                        const double* src_col = gcolT.data() + kcol * col_rows;
                        const int zlo = std::max(0, -kz), zhi = std::min(nz, nz - kz);
                        if (zlo >= zhi) continue;
                        for (int dx = std::max(0, -kx); dx < std::min(nx, nx - kx); ++dx)
                            for (int dy = std::max(0, -ky); dy < std::min(ny, ny - ky); ++dy) {
                                const Eigen::Index dst =
                                    s * cells + (static_cast<Eigen::Index>(dx) * ny + dy) * nz + zlo;
                                const Eigen::Index src =
                                    c * cells +
                                    (static_cast<Eigen::Index>(dx + kx) * ny + (dy + ky)) * nz + zlo + kz;
                                const double* sp = src_col + dst;
                                double* d = grow + src * gstride;
                                for (int z = zlo; z < zhi; ++z, ++sp, d += gstride) *d += *sp;
                            }
                    }
    }
}

namespace {
constexpr Eigen::Index kConvChunk = 64;  // samples per im2col GEMM
}

Eigen::MatrixXd Conv3d::forward(ParamStore& store, const Eigen::MatrixXd& x) {
    const Eigen::Index cells = static_cast<Eigen::Index>(dims_.x()) * dims_.y() * dims_.z();
    if (x.cols() != static_cast<Eigen::Index>(in_ch_) * cells)
        throw InputError("conv3d input size mismatch");
    x_ = x;
    const auto w = store.p(w_, out_ch_, static_cast<Eigen::Index>(in_ch_) * 27);
    const auto b = store.p(b_, out_ch_, 1);
    Eigen::MatrixXd y(x.rows(), static_cast<Eigen::Index>(out_ch_) * cells);
    Eigen::MatrixXd colT(kConvChunk * cells, static_cast<Eigen::Index>(in_ch_) * 27);
    for (Eigen::Index first = 0; first < x.rows(); first += kConvChunk) {
        const Eigen::Index count = std::min(kConvChunk, x.rows() - first);
        im2col(x, first, count, colT);
        // (count*cells) x out_ch; with cells-major rows this is already the
        // channel-major layout when read row-wise per sample
        const Eigen::MatrixXd outT = colT.topRows(count * cells) * w.transpose();
        for (Eigen::Index s = 0; s < count; ++s)
            for (int c = 0; c < out_ch_; ++c)
                y.row(first + s).segment(static_cast<Eigen::Index>(c) * cells, cells) =
                    (outT.col(c).segment(s * cells, cells).array() + b(c, 0)).transpose();
    }
    return y;
}

Eigen::MatrixXd Conv3d::backward(ParamStore& store, const Eigen::MatrixXd& gy) {
    const Eigen::Index cells = static_cast<Eigen::Index>(dims_.x()) * dims_.y() * dims_.z();
    auto gw = store.g(w_, out_ch_, static_cast<Eigen::Index>(in_ch_) * 27);
    auto gb = store.g(b_, out_ch_, 1);
    const auto w = store.p(w_, out_ch_, static_cast<Eigen::Index>(in_ch_) * 27);

    Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(x_.rows(), x_.cols());
    Eigen::MatrixXd colT(kConvChunk * cells, static_cast<Eigen::Index>(in_ch_) * 27);
    Eigen::MatrixXd goutT(kConvChunk * cells, out_ch_);
    for (Eigen::Index first = 0; first < x_.rows(); first += kConvChunk) {
        const Eigen::Index count = std::min(kConvChunk, x_.rows() - first);
        for (Eigen::Index s = 0; s < count; ++s)
            for (int c = 0; c < out_ch_; ++c)
                goutT.col(c).segment(s * cells, cells) =
                    gy.row(first + s).segment(static_cast<Eigen::Index>(c) * cells, cells).transpose();
        const auto gout = goutT.topRows(count * cells);
        im2col(x_, first, count, colT);
        gw.noalias() += gout.transpose() * colT.topRows(count * cells);
        gb.col(0) += gout.colwise().sum().transpose();
        const Eigen::MatrixXd gcolT = gout * w;  // (count*cells) x (in_ch*27)
        col2im_add(gcolT, first, count, gx);
    }
    return gx;
}

// --- SEGate -------------------------------------------------------------------

SEGate::SEGate(ParamStore& store, const std::string& name, int channels, int cells, int reduction)
    : channels_(channels), cells_(cells), hidden_(std::max(1, channels / reduction)) {
    w1_ = store.add_view(name + ".w1", hidden_, channels);
    b1_ = store.add_view(name + ".b1", hidden_, 1);
    w2_ = store.add_view(name + ".w2", channels, hidden_);
    b2_ = store.add_view(name + ".b2", channels, 1);
}

void SEGate::init(ParamStore& store, Rng& rng) const {
    fan_in_uniform(store.p(w1_, hidden_, channels_), channels_, rng);
    fan_in_uniform(store.p(b1_, hidden_, 1), channels_, rng);
    fan_in_uniform(store.p(w2_, channels_, hidden_), hidden_, rng);
    fan_in_uniform(store.p(b2_, channels_, 1), hidden_, rng);
}

Eigen::MatrixXd SEGate::forward(ParamStore& store, const Eigen::MatrixXd& x) {
    const Eigen::Index B = x.rows();
    x_ = x;
    s_.resize(B, channels_);
    for (int c = 0; c < channels_; ++c)
        s_.col(c) = x.middleCols(static_cast<Eigen::Index>(c) * cells_, cells_).rowwise().mean();
    z1_ = s_ * store.p(w1_, hidden_, channels_).transpose();
    z1_.rowwise() += store.p(b1_, hidden_, 1).col(0).transpose();
    h_ = z1_.cwiseMax(0.0);
    Eigen::MatrixXd z2 = h_ * store.p(w2_, channels_, hidden_).transpose();
    z2.rowwise() += store.p(b2_, channels_, 1).col(0).transpose();
    gate_ = (1.0 + (-z2.array()).exp()).inverse();
    Eigen::MatrixXd y = x;
    for (int c = 0; c < channels_; ++c)
        y.middleCols(static_cast<Eigen::Index>(c) * cells_, cells_).array().colwise() *=
            gate_.col(c).array();
    return y;
}

Eigen::MatrixXd SEGate::backward(ParamStore& store, const Eigen::MatrixXd& gy) {
    const Eigen::Index B = gy.rows();
    // direct path + gate path
    Eigen::MatrixXd gx = gy;
    Eigen::MatrixXd dgate(B, channels_);
    for (int c = 0; c < channels_; ++c) {
        const auto block = Eigen::seqN(static_cast<Eigen::Index>(c) * cells_, Eigen::Index(cells_));
        dgate.col(c) = (gy(Eigen::all, block).array() * x_(Eigen::all, block).array()).rowwise().sum();
        gx(Eigen::all, block).array().colwise() *= gate_.col(c).array();
    }
    const Eigen::MatrixXd dz2 = dgate.array() * gate_.array() * (1.0 - gate_.array());
    store.g(w2_, channels_, hidden_) += dz2.transpose() * h_;
    store.g(b2_, channels_, 1).col(0) += dz2.colwise().sum().transpose();
    Eigen::MatrixXd dh = dz2 * store.p(w2_, channels_, hidden_);
    const Eigen::MatrixXd dz1 = dh.array() * (z1_.array() > 0.0).cast<double>();
    store.g(w1_, hidden_, channels_) += dz1.transpose() * s_;
    store.g(b1_, hidden_, 1).col(0) += dz1.colwise().sum().transpose();
    const Eigen::MatrixXd ds = dz1 * store.p(w1_, hidden_, channels_);
    for (int c = 0; c < channels_; ++c)
        gx.middleCols(static_cast<Eigen::Index>(c) * cells_, cells_).array().colwise() +=
            ds.col(c).array() / static_cast<double>(cells_);
    return gx;
}

// --- GlobalAvgPool --------------------------------------------------------------

Eigen::MatrixXd GlobalAvgPool::forward(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd y(x.rows(), channels_);
    for (int c = 0; c < channels_; ++c)
        y.col(c) = x.middleCols(static_cast<Eigen::Index>(c) * cells_, cells_).rowwise().mean();
    return y;
}

Eigen::MatrixXd GlobalAvgPool::backward(const Eigen::MatrixXd& gy) {
    Eigen::MatrixXd gx(gy.rows(), static_cast<Eigen::Index>(channels_) * cells_);
    for (int c = 0; c < channels_; ++c)
        gx.middleCols(static_cast<Eigen::Index>(c) * cells_, cells_).colwise() =
            gy.col(c) / static_cast<double>(cells_);
    return gx;
}

}  // namespace voxdec
