#include "voxdec/models.hpp"

#include <cmath>

namespace voxdec {

Family family_from_string(const std::string& s) {
    if (s == "logistic") return Family::logistic;
    if (s == "mlp") return Family::mlp;
    if (s == "cnn_se" || s == "cnn") return Family::cnn_se;
    if (s == "gat") return Family::gat;
    throw ConfigError("unknown model family: " + s + " (expected logistic|mlp|cnn_se|gat)");
}

std::string to_string(Family f) {
    switch (f) {
        case Family::logistic: return "logistic";
        case Family::mlp: return "mlp";
        case Family::cnn_se: return "cnn_se";
        case Family::gat: return "gat";
    }
    return "?";
}

// --- GATLayer -----------------------------------------------------------------

namespace {
constexpr double kLeakySlope = 0.2;
}

GATLayer::GATLayer(ParamStore& store, const std::string& name, int in, int out, const GraphSpec* graph)
    : in_(in), out_(out), graph_(graph) {
    w_ = store.add_view(name + ".w", out, in);
    asrc_ = store.add_view(name + ".a_src", out, 1);
    adst_ = store.add_view(name + ".a_dst", out, 1);
}

void GATLayer::init(ParamStore& store, Rng& rng) const {
    auto w = store.p(w_, out_, in_);
    const double a = 1.0 / std::sqrt(std::max(1, in_));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
    auto s = store.p(asrc_, out_, 1);
    auto d = store.p(adst_, out_, 1);
    const double b = 1.0 / std::sqrt(std::max(1, out_));
    for (Eigen::Index i = 0; i < out_; ++i) {
        s(i, 0) = rng.uniform(-b, b);
        d(i, 0) = rng.uniform(-b, b);
    }
}

Eigen::MatrixXd GATLayer::forward(ParamStore& store, const Eigen::MatrixXd& x) {
    const int N = graph_->n_nodes();
    if (x.cols() != static_cast<Eigen::Index>(N) * in_) throw InputError("gat layer input size mismatch");
    x_ = x;
    const auto W = store.p(w_, out_, in_);
    const Eigen::VectorXd a_src = store.p(asrc_, out_, 1).col(0);
    const Eigen::VectorXd a_dst = store.p(adst_, out_, 1).col(0);

    const Eigen::Index B = x.rows();
    Eigen::MatrixXd y(B, static_cast<Eigen::Index>(N) * out_);
    h_.assign(static_cast<std::size_t>(B), Eigen::MatrixXd());
    alpha_.assign(static_cast<std::size_t>(B), {});
    z_.assign(static_cast<std::size_t>(B), {});

    for (Eigen::Index s = 0; s < B; ++s) {
        const Eigen::VectorXd row = x.row(s).transpose();
        const Eigen::Map<const Eigen::MatrixXd> M(row.data(), in_, N);
        Eigen::MatrixXd H = W * M;  // out x N
        const Eigen::RowVectorXd u = a_src.transpose() * H;
        const Eigen::RowVectorXd v = a_dst.transpose() * H;

        Eigen::MatrixXd out(out_, N);
        auto& alphas = alpha_[static_cast<std::size_t>(s)];
        auto& zs = z_[static_cast<std::size_t>(s)];
        alphas.resize(static_cast<std::size_t>(N));
        zs.resize(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) {
            const auto& nbrs = graph_->adjacency[static_cast<std::size_t>(i)];
            auto& al = alphas[static_cast<std::size_t>(i)];
            auto& zv = zs[static_cast<std::size_t>(i)];
            al.resize(nbrs.size() + 1);
            zv.resize(nbrs.size() + 1);
            double zmax = -1e300;
            for (std::size_t k = 0; k <= nbrs.size(); ++k) {
                const int j = k == 0 ? i : nbrs[k - 1];  // self-loop first
                const double raw = u(i) + v(j);
                zv[k] = raw;
                const double act = raw > 0 ? raw : kLeakySlope * raw;
                al[k] = act;
                zmax = std::max(zmax, act);
            }
            double total = 0.0;
            for (auto& a : al) {
                a = std::exp(a - zmax);
                total += a;
            }
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(out_);
            for (std::size_t k = 0; k <= nbrs.size(); ++k) {
                al[k] /= total;
                const int j = k == 0 ? i : nbrs[k - 1];
                acc += al[k] * H.col(j);
            }
            out.col(i) = acc;
        }
        h_[static_cast<std::size_t>(s)] = std::move(H);
        y.row(s) = Eigen::Map<const Eigen::VectorXd>(out.data(), out.size()).transpose();
    }
    return y;
}

Eigen::MatrixXd GATLayer::backward(ParamStore& store, const Eigen::MatrixXd& gy) {
    const int N = graph_->n_nodes();
    const auto W = store.p(w_, out_, in_);
    const Eigen::VectorXd a_src = store.p(asrc_, out_, 1).col(0);
    const Eigen::VectorXd a_dst = store.p(adst_, out_, 1).col(0);
    auto gW = store.g(w_, out_, in_);
    auto g_asrc = store.g(asrc_, out_, 1);
    auto g_adst = store.g(adst_, out_, 1);

    const Eigen::Index B = gy.rows();
    Eigen::MatrixXd gx(B, x_.cols());
    for (Eigen::Index s = 0; s < B; ++s) {
        const Eigen::VectorXd grow = gy.row(s).transpose();
        const Eigen::Map<const Eigen::MatrixXd> G(grow.data(), out_, N);
        const Eigen::MatrixXd& H = h_[static_cast<std::size_t>(s)];
        const auto& alphas = alpha_[static_cast<std::size_t>(s)];
        const auto& zs = z_[static_cast<std::size_t>(s)];

        Eigen::MatrixXd dH = Eigen::MatrixXd::Zero(out_, N);
        Eigen::VectorXd du = Eigen::VectorXd::Zero(N);
        Eigen::VectorXd dv = Eigen::VectorXd::Zero(N);
        for (int i = 0; i < N; ++i) {
            const auto& nbrs = graph_->adjacency[static_cast<std::size_t>(i)];
            const auto& al = alphas[static_cast<std::size_t>(i)];
            const auto& zv = zs[static_cast<std::size_t>(i)];
            // d(alpha)/softmax and aggregation path
            double dot = 0.0;
            std::vector<double> dal(al.size());
            for (std::size_t k = 0; k < al.size(); ++k) {
                const int j = k == 0 ? i : nbrs[k - 1];
                dal[k] = G.col(i).dot(H.col(j));
                dH.col(j) += al[k] * G.col(i);
                dot += al[k] * dal[k];
            }
            for (std::size_t k = 0; k < al.size(); ++k) {
                const int j = k == 0 ? i : nbrs[k - 1];
                const double de = al[k] * (dal[k] - dot);
                const double dz = de * (zv[k] > 0 ? 1.0 : kLeakySlope);
                du(i) += dz;
                dv(j) += dz;
            }
        }
        for (int n = 0; n < N; ++n) {
            dH.col(n) += du(n) * a_src + dv(n) * a_dst;
            g_asrc.col(0) += du(n) * H.col(n);
            g_adst.col(0) += dv(n) * H.col(n);
        }
        const Eigen::VectorXd xrow = x_.row(s).transpose();
        const Eigen::Map<const Eigen::MatrixXd> M(xrow.data(), in_, N);
        gW += dH * M.transpose();
        const Eigen::MatrixXd dM = W.transpose() * dH;  // in x N
        gx.row(s) = Eigen::Map<const Eigen::VectorXd>(dM.data(), dM.size()).transpose();
    }
    return gx;
}

// --- NodeChannelDropout ----------------------------------------------------------

Eigen::MatrixXd NodeChannelDropout::forward(const Eigen::MatrixXd& x, bool train, Rng& rng) {
    if (!train || p_ <= 0.0) {
        identity_ = true;
        return x;
    }
    identity_ = false;
    const double keep = 1.0 - p_;
    mask_.resize(x.rows(), features_);
    for (Eigen::Index i = 0; i < mask_.size(); ++i)
        mask_.data()[i] = rng.uniform() < p_ ? 0.0 : 1.0 / keep;
    Eigen::MatrixXd y = x;
    for (int n = 0; n < nodes_; ++n)
        for (int f = 0; f < features_; ++f)
            y.col(static_cast<Eigen::Index>(n) * features_ + f).array() *= mask_.col(f).array();
    return y;
}

Eigen::MatrixXd NodeChannelDropout::backward(const Eigen::MatrixXd& gy) {
    if (identity_) return gy;
    Eigen::MatrixXd gx = gy;
    for (int n = 0; n < nodes_; ++n)
        for (int f = 0; f < features_; ++f)
            gx.col(static_cast<Eigen::Index>(n) * features_ + f).array() *= mask_.col(f).array();
    return gx;
}

// --- Model implementations -------------------------------------------------------

double Model::loss_and_grad(const Eigen::MatrixXd& x, const std::vector<int>& subjects,
                            const Eigen::VectorXd& labels, std::uint64_t dropout_seed) {
    const Eigen::VectorXd logits = forward(x, subjects, true, dropout_seed);
    const double loss = bce_with_logits(logits, labels);
    if (!std::isfinite(loss))
        throw NumericError("non-finite loss in " + to_string(spec_.family) + " forward pass");
    const Eigen::VectorXd dlogits = bce_with_logits_grad(logits, labels);
    backward(dlogits);
    return loss;
}

namespace {

class LogisticModel final : public Model {
  public:
    LogisticModel(const ModelSpec& spec, std::uint64_t seed) {
        spec_ = spec;
        out_ = Linear(store_, "logit", spec.input_dim, 1);
        store_.allocate();
        Rng rng(Rng::derive(seed, "init"));
        out_.init(store_, rng);
    }

    Eigen::VectorXd forward(const Eigen::MatrixXd& x, const std::vector<int>&, bool,
                            std::uint64_t) override {
        return out_.forward(store_, x).col(0);
    }

  protected:
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dlogits) override {
        return out_.backward(store_, dlogits);
    }

  private:
    Linear out_;
};

// embedding concatenated before every fully connected layer
class MlpModel final : public Model {
  public:
    MlpModel(const ModelSpec& spec, std::uint64_t seed) {
        spec_ = spec;
        const int e = spec.n_subjects > 0 ? spec.embedding_dim : 0;
        const int w = spec.hidden;
        if (spec.n_subjects > 0) emb_ = Embedding(store_, "emb", spec.n_subjects, spec.embedding_dim);
        fc1_ = Linear(store_, "fc1", spec.input_dim + e, w);
        fc2_ = Linear(store_, "fc2", w + e, w);
        fc3_ = Linear(store_, "fc3", w + e, 1);
        for (auto& d : drop_) d = Dropout(spec.dropout);
        store_.allocate();
        Rng rng(Rng::derive(seed, "init"));
        if (spec.n_subjects > 0) emb_.init(store_, rng);
        fc1_.init(store_, rng);
        fc2_.init(store_, rng);
        fc3_.init(store_, rng);
    }

    Eigen::VectorXd forward(const Eigen::MatrixXd& x, const std::vector<int>& subjects, bool train,
                            std::uint64_t dropout_seed) override {
        Rng rng(Rng::derive(dropout_seed, "dropout"));
        const bool use_emb = spec_.n_subjects > 0;
        if (use_emb) e_ = emb_.forward(store_, subjects, train);
        auto cat = [&](const Eigen::MatrixXd& h) -> Eigen::MatrixXd {
            if (!use_emb) return h;
            Eigen::MatrixXd c(h.rows(), h.cols() + e_.cols());
            c << h, e_;
            return c;
        };
        Eigen::MatrixXd h = drop_[0].forward(x, train, rng);
        h = relu1_.forward(fc1_.forward(store_, cat(h)));
        h = drop_[1].forward(h, train, rng);
        h = relu2_.forward(fc2_.forward(store_, cat(h)));
        h = drop_[2].forward(h, train, rng);
        return fc3_.forward(store_, cat(h)).col(0);
    }

  protected:
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dlogits) override {
        const bool use_emb = spec_.n_subjects > 0;
        Eigen::MatrixXd ge = use_emb ? Eigen::MatrixXd::Zero(e_.rows(), e_.cols()) : Eigen::MatrixXd();
        auto split = [&](const Eigen::MatrixXd& gc, Eigen::Index width) -> Eigen::MatrixXd {
            if (!use_emb) return gc;
            ge += gc.rightCols(e_.cols());
            return gc.leftCols(width);
        };
        Eigen::MatrixXd g = fc3_.backward(store_, dlogits);
        g = split(g, g.cols() - (use_emb ? e_.cols() : 0));
        g = drop_[2].backward(g);
        g = fc2_.backward(store_, relu2_.backward(g));
        g = split(g, g.cols() - (use_emb ? e_.cols() : 0));
        g = drop_[1].backward(g);
        g = fc1_.backward(store_, relu1_.backward(g));
        g = split(g, g.cols() - (use_emb ? e_.cols() : 0));
        g = drop_[0].backward(g);
        if (use_emb) emb_.backward(store_, ge);
        return g;
    }

  private:
    Embedding emb_;
    Linear fc1_, fc2_, fc3_;
    Relu relu1_, relu2_;
    Dropout drop_[3] = {Dropout(0), Dropout(0), Dropout(0)};
    Eigen::MatrixXd e_;
};

class CnnModel final : public Model {
  public:
    CnnModel(const ModelSpec& spec, std::uint64_t seed) {
        spec_ = spec;
        const int e = spec.n_subjects > 0 ? spec.embedding_dim : 0;
        const int c = spec.hidden;
        cells_ = spec.grid_dims.prod();
        if (cells_ <= 0) throw ConfigError("cnn_se needs grid dimensions");
        if (spec.n_subjects > 0) emb_ = Embedding(store_, "emb", spec.n_subjects, spec.embedding_dim);
        chdrop1_ = ChannelDropout(spec.dropout, 6, cells_);
        conv1_ = Conv3d(store_, "conv1", 6, c, spec.grid_dims);
        se1_ = SEGate(store_, "se1", c, cells_);
        chdrop2_ = ChannelDropout(spec.dropout, c, cells_);
        conv2_ = Conv3d(store_, "conv2", c, c, spec.grid_dims);
        se2_ = SEGate(store_, "se2", c, cells_);
        pool_ = GlobalAvgPool(c, cells_);
        fc1_ = Linear(store_, "fc1", c + e, c);
        fc2_ = Linear(store_, "fc2", c + e, 1);
        store_.allocate();
        Rng rng(Rng::derive(seed, "init"));
        if (spec.n_subjects > 0) emb_.init(store_, rng);
        conv1_.init(store_, rng);
        se1_.init(store_, rng);
        conv2_.init(store_, rng);
        se2_.init(store_, rng);
        fc1_.init(store_, rng);
        fc2_.init(store_, rng);
    }

    Eigen::VectorXd forward(const Eigen::MatrixXd& x, const std::vector<int>& subjects, bool train,
                            std::uint64_t dropout_seed) override {
        Rng rng(Rng::derive(dropout_seed, "dropout"));
        const bool use_emb = spec_.n_subjects > 0;
        if (use_emb) e_ = emb_.forward(store_, subjects, train);
        auto cat = [&](const Eigen::MatrixXd& h) -> Eigen::MatrixXd {
            if (!use_emb) return h;
            Eigen::MatrixXd c(h.rows(), h.cols() + e_.cols());
            c << h, e_;
            return c;
        };
        Eigen::MatrixXd h = chdrop1_.forward(x, train, rng);
        h = se1_.forward(store_, relu1_.forward(conv1_.forward(store_, h)));
        h = chdrop2_.forward(h, train, rng);
        h = se2_.forward(store_, relu2_.forward(conv2_.forward(store_, h)));
        h = pool_.forward(h);
        h = drop1_.forward(h, train, rng);
        h = relu3_.forward(fc1_.forward(store_, cat(h)));
        h = drop2_.forward(h, train, rng);
        return fc2_.forward(store_, cat(h)).col(0);
    }

  protected:
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dlogits) override {
        const bool use_emb = spec_.n_subjects > 0;
        Eigen::MatrixXd ge = use_emb ? Eigen::MatrixXd::Zero(e_.rows(), e_.cols()) : Eigen::MatrixXd();
        auto split = [&](const Eigen::MatrixXd& gc) -> Eigen::MatrixXd {
            if (!use_emb) return gc;
            ge += gc.rightCols(e_.cols());
            return gc.leftCols(gc.cols() - e_.cols());
        };
        Eigen::MatrixXd g = split(fc2_.backward(store_, dlogits));
        g = drop2_.backward(g);
        g = split(fc1_.backward(store_, relu3_.backward(g)));
        g = drop1_.backward(g);
        g = pool_.backward(g);
        g = conv2_.backward(store_, relu2_.backward(se2_.backward(store_, g)));
        g = chdrop2_.backward(g);
        g = conv1_.backward(store_, relu1_.backward(se1_.backward(store_, g)));
        g = chdrop1_.backward(g);
        if (use_emb) emb_.backward(store_, ge);
        return g;
    }

  private:
    int cells_ = 0;
    Embedding emb_;
    ChannelDropout chdrop1_{0, 1, 1}, chdrop2_{0, 1, 1};
    Conv3d conv1_, conv2_;
    SEGate se1_, se2_;
    Relu relu1_, relu2_, relu3_;
    GlobalAvgPool pool_;
    Dropout drop1_, drop2_;
    Linear fc1_, fc2_;
    Eigen::MatrixXd e_;
};

class GatModel final : public Model {
  public:
    GatModel(const ModelSpec& spec, std::uint64_t seed) {
        spec_ = spec;
        if (!spec.graph) throw ConfigError("gat needs a graph");
        const int e = spec.n_subjects > 0 ? spec.embedding_dim : 0;
        const int w = spec.hidden;
        const int N = spec.graph->n_nodes();
        nodes_ = N;
        if (spec.n_subjects > 0) emb_ = Embedding(store_, "emb", spec.n_subjects, spec.embedding_dim);
        nd1_ = NodeChannelDropout(spec.dropout, N, spec.node_features);
        gat1_ = GATLayer(store_, "gat1", spec.node_features, w, spec.graph.get());
        nd2_ = NodeChannelDropout(spec.dropout, N, w);
        gat2_ = GATLayer(store_, "gat2", w, w, spec.graph.get());
        fc1_ = Linear(store_, "fc1", w + e, w);
        fc2_ = Linear(store_, "fc2", w + e, 1);
        store_.allocate();
        Rng rng(Rng::derive(seed, "init"));
        if (spec.n_subjects > 0) emb_.init(store_, rng);
        gat1_.init(store_, rng);
        gat2_.init(store_, rng);
        fc1_.init(store_, rng);
        fc2_.init(store_, rng);
        width_ = w;
    }

    Eigen::VectorXd forward(const Eigen::MatrixXd& x, const std::vector<int>& subjects, bool train,
                            std::uint64_t dropout_seed) override {
        Rng rng(Rng::derive(dropout_seed, "dropout"));
        const bool use_emb = spec_.n_subjects > 0;
        if (use_emb) e_ = emb_.forward(store_, subjects, train);
        auto cat = [&](const Eigen::MatrixXd& h) -> Eigen::MatrixXd {
            if (!use_emb) return h;
            Eigen::MatrixXd c(h.rows(), h.cols() + e_.cols());
            c << h, e_;
            return c;
        };
        Eigen::MatrixXd h = nd1_.forward(x, train, rng);
        h = relu1_.forward(gat1_.forward(store_, h));
        h = nd2_.forward(h, train, rng);
        h = relu2_.forward(gat2_.forward(store_, h));
        h = node_mean(h);
        h = drop1_.forward(h, train, rng);
        h = relu3_.forward(fc1_.forward(store_, cat(h)));
        h = drop2_.forward(h, train, rng);
        return fc2_.forward(store_, cat(h)).col(0);
    }

  protected:
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dlogits) override {
        const bool use_emb = spec_.n_subjects > 0;
        Eigen::MatrixXd ge = use_emb ? Eigen::MatrixXd::Zero(e_.rows(), e_.cols()) : Eigen::MatrixXd();
        auto split = [&](const Eigen::MatrixXd& gc) -> Eigen::MatrixXd {
            if (!use_emb) return gc;
            ge += gc.rightCols(e_.cols());
            return gc.leftCols(gc.cols() - e_.cols());
        };
        Eigen::MatrixXd g = split(fc2_.backward(store_, dlogits));
        g = drop2_.backward(g);
        g = split(fc1_.backward(store_, relu3_.backward(g)));
        g = drop1_.backward(g);
        g = node_mean_backward(g);
        g = gat2_.backward(store_, relu2_.backward(g));
        g = nd2_.backward(g);
        g = gat1_.backward(store_, relu1_.backward(g));
        g = nd1_.backward(g);
        if (use_emb) emb_.backward(store_, ge);
        return g;
    }

  private:
    Eigen::MatrixXd node_mean(const Eigen::MatrixXd& x) {
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), width_);
        for (int n = 0; n < nodes_; ++n)
            y += x.middleCols(static_cast<Eigen::Index>(n) * width_, width_);
        return y / static_cast<double>(nodes_);
    }
    Eigen::MatrixXd node_mean_backward(const Eigen::MatrixXd& gy) {
        Eigen::MatrixXd gx(gy.rows(), static_cast<Eigen::Index>(nodes_) * width_);
        for (int n = 0; n < nodes_; ++n)
            gx.middleCols(static_cast<Eigen::Index>(n) * width_, width_) =
                gy / static_cast<double>(nodes_);
        return gx;
    }

    int nodes_ = 0, width_ = 0;
    Embedding emb_;
    NodeChannelDropout nd1_{0, 1, 1}, nd2_{0, 1, 1};
    GATLayer gat1_, gat2_;
    Relu relu1_, relu2_, relu3_;
    Dropout drop1_, drop2_;
    Linear fc1_, fc2_;
    Eigen::MatrixXd e_;
};

}  // namespace

long count_params(const ModelSpec& spec, int width) {
    const long e = spec.n_subjects > 0 ? spec.embedding_dim : 0;
    const long table = spec.n_subjects > 0 ? static_cast<long>(spec.n_subjects) * spec.embedding_dim : 0;
    const long d = spec.input_dim;
    const long w = width;
    switch (spec.family) {
        case Family::logistic:
            return d + 1;
        case Family::mlp:
            return (d + e) * w + w + (w + e) * w + w + (w + e) * 1 + 1 + table;
        case Family::cnn_se: {
            const long h = std::max<long>(1, w / 16);
            const long conv1 = 27 * 6 * w + w;
            const long se = h * w + h + w * h + w;
            const long conv2 = 27 * w * w + w;
            const long fc1 = (w + e) * w + w;
            const long fc2 = (w + e) + 1;
            return conv1 + se + conv2 + se + fc1 + fc2 + table;
        }
        case Family::gat: {
            const long f = spec.node_features;
            const long gat1 = w * f + 2 * w;
            const long gat2 = w * w + 2 * w;
            const long fc1 = (w + e) * w + w;
            const long fc2 = (w + e) + 1;
            return gat1 + gat2 + fc1 + fc2 + table;
        }
    }
    throw ConfigError("unknown model family");
}

int solve_width(const ModelSpec& spec) {
    if (spec.family == Family::logistic) {
        const long count = count_params(spec, 1);
        if (spec.target_params > 0 &&
            std::abs(count - spec.target_params) > 0.05 * static_cast<double>(spec.target_params))
            throw ConfigError("logistic model has a fixed parameter count of " + std::to_string(count) +
                              ", which misses the target");
        return 1;
    }
    int lo = 1, hi = 2;
    while (count_params(spec, hi) < spec.target_params && hi < (1 << 22)) hi *= 2;
    while (lo < hi) {  // first width with count >= target
        const int mid = lo + (hi - lo) / 2;
        if (count_params(spec, mid) >= spec.target_params)
            hi = mid;
        else
            lo = mid + 1;
    }
    const long over = count_params(spec, lo);
    const long under = lo > 1 ? count_params(spec, lo - 1) : over;
    const int best = (std::abs(over - spec.target_params) <= std::abs(under - spec.target_params))
                         ? lo
                         : lo - 1;
    const long count = count_params(spec, best);
    if (std::abs(count - spec.target_params) > 0.05 * static_cast<double>(spec.target_params))
        throw ConfigError("parameter budget " + std::to_string(spec.target_params) +
                          " is unreachable; closest achievable count is " + std::to_string(count));
    return best;
}

std::unique_ptr<Model> build_model(const ModelSpec& spec_in, std::uint64_t seed) {
    ModelSpec spec = spec_in;
    if (spec.family == Family::cnn_se && spec.input_dim == 0)
        spec.input_dim = 6 * spec.grid_dims.prod();
    if (spec.family == Family::gat && spec.graph && spec.input_dim == 0)
        spec.input_dim = spec.graph->n_nodes() * spec.node_features;
    if (spec.hidden <= 0) {
        if (spec.target_params <= 0) throw ConfigError("either hidden width or target_params must be set");
        spec.hidden = solve_width(spec);
    }
    switch (spec.family) {
        case Family::logistic: return std::make_unique<LogisticModel>(spec, seed);
        case Family::mlp: return std::make_unique<MlpModel>(spec, seed);
        case Family::cnn_se: return std::make_unique<CnnModel>(spec, seed);
        case Family::gat: return std::make_unique<GatModel>(spec, seed);
    }
    throw ConfigError("unknown model family");
}

Eigen::MatrixXd gat_voxel_features(const Eigen::MatrixXd& flat_rows, const GridLayout& grid) {
    const int V = grid.n_voxels();
    if (flat_rows.cols() != 3 * V) throw InputError("gat_voxel_features expects 3 * n_voxels features");
    Eigen::MatrixXd out(flat_rows.rows(), static_cast<Eigen::Index>(V) * 6);
    for (int v = 0; v < V; ++v) {
        for (int c = 0; c < 3; ++c) {
            out.col(static_cast<Eigen::Index>(v) * 6 + c) = flat_rows.col(3 * v + c);
            out.col(static_cast<Eigen::Index>(v) * 6 + 3 + c).setConstant(grid.positions_norm(v, c));
        }
    }
    return out;
}

Eigen::MatrixXd gat_sensor_features(const Eigen::MatrixXd& rows, const Eigen::MatrixX3d& positions) {
    const auto n = positions.rows();
    if (rows.cols() != n) throw InputError("gat_sensor_features expects one value per sensor");
    Eigen::Vector3d lo = positions.colwise().minCoeff();
    Eigen::Vector3d hi = positions.colwise().maxCoeff();
    Eigen::MatrixXd out(rows.rows(), n * 4);
    for (Eigen::Index s = 0; s < n; ++s) {
        out.col(s * 4 + 0) = rows.col(s);
        for (int c = 0; c < 3; ++c) {
            const double span = hi[c] - lo[c];
            const double p = span > 0 ? 2.0 * (positions(s, c) - lo[c]) / span - 1.0 : 0.0;
            out.col(s * 4 + 1 + c).setConstant(p);
        }
    }
    return out;
}

}  // namespace voxdec
