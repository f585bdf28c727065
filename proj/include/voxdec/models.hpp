#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>

#include "voxdec/graph.hpp"
#include "voxdec/nn.hpp"

namespace voxdec {

enum class Family { logistic, mlp, cnn_se, gat };
Family family_from_string(const std::string& s);
std::string to_string(Family f);

struct ModelSpec {
    Family family = Family::mlp;
    int input_dim = 0;     // logistic/mlp: flat feature dim; cnn: 6 * cells; gat: nodes * node_features
    int hidden = 0;        // width; 0 means solve from target_params
    long target_params = 0;
    int n_subjects = 0;    // 0 disables subject embeddings
    int embedding_dim = 16;
    double dropout = 0.0;
    Eigen::Vector3i grid_dims = Eigen::Vector3i::Zero();  // cnn_se
    std::shared_ptr<const GraphSpec> graph;               // gat
    int node_features = 0;                                // gat
};

// Single-head additive graph attention with an implicit self-loop per node.
// Input/output rows are node-major: [node0 features..., node1 features...].
class GATLayer {
  public:
    GATLayer() = default;
    GATLayer(ParamStore& store, const std::string& name, int in, int out, const GraphSpec* graph);
    void init(ParamStore& store, Rng& rng) const;
    Eigen::MatrixXd forward(ParamStore& store, const Eigen::MatrixXd& x);
    Eigen::MatrixXd backward(ParamStore& store, const Eigen::MatrixXd& gy);
    long n_params() const { return static_cast<long>(out_) * in_ + 2L * out_; }

  private:
    Eigen::Index w_ = 0, asrc_ = 0, adst_ = 0;
    int in_ = 0, out_ = 0;
    const GraphSpec* graph_ = nullptr;
    Eigen::MatrixXd x_;
    std::vector<Eigen::MatrixXd> h_;                     // per sample, out x nodes
    std::vector<std::vector<std::vector<double>>> alpha_;  // per sample / node / neighbor(self first)
    std::vector<std::vector<std::vector<double>>> z_;      // attention pre-activations
};

// Dropout over node feature channels (mask shared across nodes).
class NodeChannelDropout {
  public:
    NodeChannelDropout(double p, int nodes, int features) : p_(p), nodes_(nodes), features_(features) {}
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train, Rng& rng);
    Eigen::MatrixXd backward(const Eigen::MatrixXd& gy);

  private:
    double p_;
    int nodes_, features_;
    Eigen::MatrixXd mask_;  // batch x features
    bool identity_ = true;
};

class Model {
  public:
    virtual ~Model() = default;

    // One logit per sample. Eval mode disables all dropout.
    virtual Eigen::VectorXd forward(const Eigen::MatrixXd& x, const std::vector<int>& subjects,
                                    bool train, std::uint64_t dropout_seed) = 0;

    // Mean BCE and gradient accumulation into the store (train mode).
    double loss_and_grad(const Eigen::MatrixXd& x, const std::vector<int>& subjects,
                         const Eigen::VectorXd& labels, std::uint64_t dropout_seed);

    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    const ModelSpec& spec() const { return spec_; }
    long n_params() const { return static_cast<long>(store_.size()); }

  protected:
    virtual Eigen::MatrixXd backward(const Eigen::MatrixXd& dlogits) = 0;

    ModelSpec spec_;
    ParamStore store_;
};

// Closed-form parameter count for a candidate width.
long count_params(const ModelSpec& spec, int width);

// Smallest-error width for spec.target_params; throws ConfigError with the
// closest achievable count when no width lands within 5%.
int solve_width(const ModelSpec& spec);

// Builds the model, resolving the width from target_params when hidden == 0.
std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t seed);

// Node-major GAT inputs: per voxel [3 vector components, 3 positions].
Eigen::MatrixXd gat_voxel_features(const Eigen::MatrixXd& flat_rows, const GridLayout& grid);
// Per sensor [value, 3 positions normalized to [-1, 1]].
Eigen::MatrixXd gat_sensor_features(const Eigen::MatrixXd& rows, const Eigen::MatrixX3d& positions);

}  // namespace voxdec
