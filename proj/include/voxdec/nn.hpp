#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "voxdec/core.hpp"
#include "voxdec/rng.hpp"

namespace voxdec {

// Flat parameter storage with matching gradient buffer and AdamW state.
// Layers hold offsets into it; views keep the layout inspectable.
struct ParamStore {
    Eigen::VectorXd params;
    Eigen::VectorXd grads;
    Eigen::VectorXd adam_m;
    Eigen::VectorXd adam_v;
    long step = 0;

    struct View {
        std::string name;
        Eigen::Index offset = 0;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        Eigen::Index size() const { return rows * cols; }
    };
    std::vector<View> views;

    Eigen::Index size() const { return params.size(); }

    Eigen::Index add_view(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        const Eigen::Index offset = reserved_;
        views.push_back({name, offset, rows, cols});
        reserved_ += rows * cols;
        return offset;
    }

    void allocate() {
        params = Eigen::VectorXd::Zero(reserved_);
        grads = Eigen::VectorXd::Zero(reserved_);
        adam_m = Eigen::VectorXd::Zero(reserved_);
        adam_v = Eigen::VectorXd::Zero(reserved_);
    }

    void zero_grad() { grads.setZero(); }

    // column-major matrix views over the flat buffers
    Eigen::Map<Eigen::MatrixXd> p(Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
        return {params.data() + offset, rows, cols};
    }
    Eigen::Map<Eigen::MatrixXd> g(Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
        return {grads.data() + offset, rows, cols};
    }
    Eigen::Map<const Eigen::MatrixXd> p(Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) const {
        return {params.data() + offset, rows, cols};
    }

  private:
    Eigen::Index reserved_ = 0;
};

// Decoupled weight decay step (decay on parameters, not gradients), standard
// bias-corrected moment updates.
void adamw_step(ParamStore& store, double lr, double weight_decay, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

// Numerically stable mean binary cross-entropy on logits; labels may be soft.
double bce_with_logits(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels);
Eigen::VectorXd bce_with_logits_grad(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels);

// --- layers ------------------------------------------------------------------
// Layers are stateful between forward and backward; one model instance is
// single-threaded.

class Linear {
  public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int in, int out);
    void init(ParamStore& store, Rng& rng) const;
    Eigen::MatrixXd forward(ParamStore& store, const Eigen::MatrixXd& x);
    Eigen::MatrixXd backward(ParamStore& store, const Eigen::MatrixXd& gy);
    long n_params() const { return static_cast<long>(in_) * out_ + out_; }
    int out_dim() const { return out_; }

  private:
    Eigen::Index w_ = 0, b_ = 0;
    int in_ = 0, out_ = 0;
    Eigen::MatrixXd x_;
};

class Relu {
  public:
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x);
    Eigen::MatrixXd backward(const Eigen::MatrixXd& gy);

  private:
    Eigen::MatrixXd mask_;
};

// Inverted dropout: eval mode is the identity.
class Dropout {
  public:
    explicit Dropout(double p = 0.0) : p_(p) {}
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train, Rng& rng);
    Eigen::MatrixXd backward(const Eigen::MatrixXd& gy);

  private:
    double p_;
    Eigen::MatrixXd mask_;
    bool identity_ = true;
};

// Drops whole channels (feature maps) of a channel-major dense batch.
class ChannelDropout {
  public:
    ChannelDropout(double p, int channels, int cells) : p_(p), channels_(channels), cells_(cells) {}
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train, Rng& rng);
    Eigen::MatrixXd backward(const Eigen::MatrixXd& gy);

  private:
    double p_;
    int channels_, cells_;
    Eigen::MatrixXd mask_;  // batch x channels
    bool identity_ = true;
};

// Per-subject lookup table; unknown subjects (index -1) resolve to the mean
// embedding in eval mode and are an error in train mode.
class Embedding {
  public:
    Embedding() = default;
    Embedding(ParamStore& store, const std::string& name, int n_subjects, int dim);
    void init(ParamStore& store, Rng& rng) const;
    Eigen::MatrixXd forward(ParamStore& store, const std::vector<int>& subjects, bool train);
    void backward(ParamStore& store, const Eigen::MatrixXd& gy);
    long n_params() const { return static_cast<long>(n_) * dim_; }
    int dim() const { return dim_; }

  private:
    Eigen::Index t_ = 0;
    int n_ = 0, dim_ = 0;
    std::vector<int> subjects_;
};

// 3x3x3 convolution, stride 1, zero padding 1, channel-major flat layout
// ((c * nx + x) * ny + y) * nz + z.
class Conv3d {
  public:
    Conv3d() = default;
    Conv3d(ParamStore& store, const std::string& name, int in_ch, int out_ch, Eigen::Vector3i dims);
    void init(ParamStore& store, Rng& rng) const;
    Eigen::MatrixXd forward(ParamStore& store, const Eigen::MatrixXd& x);
    Eigen::MatrixXd backward(ParamStore& store, const Eigen::MatrixXd& gy);
    long n_params() const { return static_cast<long>(out_ch_) * in_ch_ * 27 + out_ch_; }
    int out_channels() const { return out_ch_; }

  private:
    // columns of colT are (channel, kernel-offset) pairs; rows are cells of
    // `count` consecutive samples
    void im2col(const Eigen::MatrixXd& x, Eigen::Index first, Eigen::Index count,
                Eigen::MatrixXd& colT) const;
    void col2im_add(const Eigen::MatrixXd& gcolT, Eigen::Index first, Eigen::Index count,
                    Eigen::MatrixXd& gx) const;

    Eigen::Index w_ = 0, b_ = 0;
    int in_ch_ = 0, out_ch_ = 0;
    Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
    Eigen::MatrixXd x_;
};

// Squeeze-excite gate: global average pool, bottleneck (reduction 16),
// sigmoid channel scaling.
class SEGate {
  public:
    SEGate() = default;
    SEGate(ParamStore& store, const std::string& name, int channels, int cells, int reduction = 16);
    void init(ParamStore& store, Rng& rng) const;
    Eigen::MatrixXd forward(ParamStore& store, const Eigen::MatrixXd& x);
    Eigen::MatrixXd backward(ParamStore& store, const Eigen::MatrixXd& gy);
    long n_params() const {
        return static_cast<long>(hidden_) * channels_ + hidden_ + static_cast<long>(channels_) * hidden_ + channels_;
    }

  private:
    Eigen::Index w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
    int channels_ = 0, cells_ = 0, hidden_ = 0;
    Eigen::MatrixXd x_, s_, h_, z1_, gate_;
};

// Mean over cells per channel.
class GlobalAvgPool {
  public:
    GlobalAvgPool() = default;
    GlobalAvgPool(int channels, int cells) : channels_(channels), cells_(cells) {}
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x);
    Eigen::MatrixXd backward(const Eigen::MatrixXd& gy);

  private:
    int channels_ = 0, cells_ = 0;
};

}  // namespace voxdec
