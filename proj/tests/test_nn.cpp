#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "voxdec/models.hpp"
#include "voxdec/rng.hpp"

using namespace voxdec;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Eigen::MatrixXd m(r, c);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

Eigen::VectorXd random_labels(Eigen::Index n, std::uint64_t seed) {
    Eigen::VectorXd y(n);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return y;
}

double loss_at(Model& m, const Eigen::MatrixXd& x, const std::vector<int>& subjects,
               const Eigen::VectorXd& labels, std::uint64_t seed) {
    return bce_with_logits(m.forward(x, subjects, true, seed), labels);
}

// central finite differences against the analytic gradient on >= 100 params
void gradient_check(Model& m, const Eigen::MatrixXd& x, const std::vector<int>& subjects,
                    const Eigen::VectorXd& labels) {
    const std::uint64_t seed = 1234;
    m.store().zero_grad();
    m.loss_and_grad(x, subjects, labels, seed);
    const Eigen::VectorXd analytic = m.store().grads;

    Rng pick(99);
    const Eigen::Index n = m.store().size();
    const int n_checks = std::min<Eigen::Index>(120, n);
    const double h = 1e-5;
    double max_rel = 0.0;
    for (int k = 0; k < n_checks; ++k) {
        const auto i = static_cast<Eigen::Index>(pick.uniform_int(0, n - 1));
        const double keep = m.store().params(i);
        m.store().params(i) = keep + h;
        const double lp = loss_at(m, x, subjects, labels, seed);
        m.store().params(i) = keep - h;
        const double lm = loss_at(m, x, subjects, labels, seed);
        m.store().params(i) = keep;
        const double numeric = (lp - lm) / (2.0 * h);
        const double rel = std::abs(numeric - analytic(i)) /
                           std::max({std::abs(numeric), std::abs(analytic(i)), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    INFO("max relative gradient error ", max_rel);
    CHECK(max_rel < 1e-4);
}

std::shared_ptr<GraphSpec> chain_graph(int n) {
    auto g = std::make_shared<GraphSpec>();
    g->adjacency.resize(static_cast<std::size_t>(n));
    for (int i = 0; i + 1 < n; ++i) {
        g->adjacency[static_cast<std::size_t>(i)].push_back(i + 1);
        g->adjacency[static_cast<std::size_t>(i + 1)].push_back(i);
    }
    return g;
}

}  // namespace

TEST_CASE("parameter counts: logistic and mlp closed forms") {
    ModelSpec logistic;
    logistic.family = Family::logistic;
    logistic.input_dim = 17;
    logistic.hidden = 1;
    auto lm = build_model(logistic, 1);
    CHECK(lm->n_params() == 18);

    ModelSpec mlp;
    mlp.family = Family::mlp;
    mlp.input_dim = 10;
    mlp.hidden = 8;
    mlp.n_subjects = 3;
    auto mm = build_model(mlp, 1);
    const long d = 10, w = 8, e = 16;
    const long expect = (d + e) * w + w + (w + e) * w + w + (w + e) + 1 + 3 * 16;
    CHECK(mm->n_params() == expect);
    CHECK(mm->n_params() == count_params(mlp, 8));
}

TEST_CASE("width solver hits the paper budgets within 5 percent") {
    ModelSpec mlp;
    mlp.family = Family::mlp;
    mlp.input_dim = 1350;  // ~450 voxels x 3
    mlp.n_subjects = 5;
    mlp.target_params = 250000;
    auto m = build_model(mlp, 1);
    CHECK(m->n_params() >= 237500);
    CHECK(m->n_params() <= 262500);

    ModelSpec big = mlp;
    big.target_params = 500000;
    auto m2 = build_model(big, 1);
    CHECK(std::abs(m2->n_params() - 500000) <= 25000);

    // counts grow monotonically with width
    for (Family f : {Family::mlp, Family::cnn_se, Family::gat}) {
        ModelSpec s;
        s.family = f;
        s.input_dim = 60;
        s.n_subjects = 2;
        s.node_features = 6;
        s.grid_dims = Eigen::Vector3i(3, 3, 3);
        for (int w : {2, 4, 8, 16}) CHECK(count_params(s, 2 * w) > count_params(s, w));
    }

    ModelSpec impossible;
    impossible.family = Family::mlp;
    impossible.input_dim = 1000000;
    impossible.n_subjects = 0;
    impossible.target_params = 10;  // even width 1 is far above
    CHECK_THROWS_WITH_AS(build_model(impossible, 1), doctest::Contains("closest achievable"),
                         ConfigError);
}

TEST_CASE("zero-parameter logistic model outputs probability one half") {
    ModelSpec spec;
    spec.family = Family::logistic;
    spec.input_dim = 5;
    spec.hidden = 1;
    auto m = build_model(spec, 7);
    m->store().params.setZero();
    const Eigen::MatrixXd x = random_matrix(4, 5, 3);
    const Eigen::VectorXd logits = m->forward(x, {}, false, 0);
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);  // sigmoid(0) = 0.5
}

TEST_CASE("BCE closed forms") {
    const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(8);
    const Eigen::VectorXd labels = random_labels(8, 5);
    CHECK(bce_with_logits(zeros, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Eigen::VectorXd confident(4), y(4);
    y << 1, 0, 1, 0;
    confident << 20, -20, 20, -20;
    CHECK(bce_with_logits(confident, y) < 1e-3);
}

TEST_CASE("unknown subjects use the mean embedding in eval only") {
    ModelSpec spec;
    spec.family = Family::mlp;
    spec.input_dim = 6;
    spec.hidden = 5;
    spec.n_subjects = 4;
    auto m = build_model(spec, 3);

    const Eigen::MatrixXd x = random_matrix(1, 6, 11);
    const Eigen::VectorXd unknown = m->forward(x, {-1}, false, 0);

    // average the four per-subject outputs is NOT the check; the mean must be
    // taken over embeddings. Verify by comparing against a model whose table
    // columns are all replaced by the mean.
    auto m2 = build_model(spec, 3);
    const auto& view = m2->store().views.front();
    REQUIRE(view.name == "emb.table");
    auto table = m2->store().p(view.offset, view.rows, view.cols);
    const Eigen::VectorXd mean = table.rowwise().mean();
    for (Eigen::Index c = 0; c < view.cols; ++c) table.col(c) = mean;
    const Eigen::VectorXd via_known = m2->forward(x, {0}, false, 0);
    CHECK(std::abs(unknown(0) - via_known(0)) <= 1e-9);

    CHECK_THROWS_AS(m->loss_and_grad(x, {-1}, Eigen::VectorXd::Zero(1), 0), InputError);
}

TEST_CASE("eval forward is deterministic and dropout-free") {
    ModelSpec spec;
    spec.family = Family::mlp;
    spec.input_dim = 6;
    spec.hidden = 5;
    spec.n_subjects = 2;
    spec.dropout = 0.5;
    auto m = build_model(spec, 3);
    const Eigen::MatrixXd x = random_matrix(3, 6, 11);
    const std::vector<int> subjects{0, 1, 0};
    const Eigen::VectorXd a = m->forward(x, subjects, false, 1);
    const Eigen::VectorXd b = m->forward(x, subjects, false, 2);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

    // train mode with dropout 0 equals eval
    ModelSpec nodrop = spec;
    nodrop.dropout = 0.0;
    auto m2 = build_model(nodrop, 3);
    const Eigen::VectorXd c = m2->forward(x, subjects, true, 1);
    const Eigen::VectorXd d = m2->forward(x, subjects, false, 9);
    CHECK((c - d).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adamw closed-form steps") {
    ModelSpec spec;
    spec.family = Family::logistic;
    spec.input_dim = 3;
    spec.hidden = 1;
    auto m = build_model(spec, 3);
    ParamStore& st = m->store();
    const Eigen::VectorXd before = st.params;

    st.zero_grad();
    adamw_step(st, 0.1, 0.0);
    CHECK((st.params - before).cwiseAbs().maxCoeff() == 0.0);

    adamw_step(st, 0.1, 0.5);  // zero grads: pure decoupled decay
    CHECK((st.params - before * (1.0 - 0.1 * 0.5)).cwiseAbs().maxCoeff() <= 1e-15);

    // single-parameter first step with g = 1
    ParamStore solo;
    solo.add_view("p", 1, 1);
    solo.allocate();
    solo.params(0) = 0.7;
    solo.grads(0) = 1.0;
    adamw_step(solo, 0.1, 0.0);
    // m_hat = 1, v_hat = 1 -> update = -lr / (1 + eps)
    CHECK(solo.params(0) == doctest::Approx(0.7 - 0.1).epsilon(1e-6));
}

TEST_CASE("gradient check: logistic") {
    ModelSpec spec;
    spec.family = Family::logistic;
    spec.input_dim = 7;
    spec.hidden = 1;
    auto m = build_model(spec, 5);
    gradient_check(*m, random_matrix(6, 7, 21), {}, random_labels(6, 22));
}

TEST_CASE("gradient check: mlp with embeddings and dropout") {
    ModelSpec spec;
    spec.family = Family::mlp;
    spec.input_dim = 6;
    spec.hidden = 8;
    spec.n_subjects = 3;
    spec.dropout = 0.25;
    auto m = build_model(spec, 5);
    gradient_check(*m, random_matrix(5, 6, 23), {0, 1, 2, 0, 1}, random_labels(5, 24));
}

TEST_CASE("gradient check: cnn_se") {
    ModelSpec spec;
    spec.family = Family::cnn_se;
    spec.grid_dims = Eigen::Vector3i(3, 3, 3);
    spec.hidden = 4;
    spec.n_subjects = 2;
    spec.dropout = 0.2;
    auto m = build_model(spec, 5);
    gradient_check(*m, random_matrix(3, 6 * 27, 25), {0, 1, 0}, random_labels(3, 26));
}

TEST_CASE("gradient check: gat") {
    ModelSpec spec;
    spec.family = Family::gat;
    spec.graph = chain_graph(7);
    spec.node_features = 6;
    spec.hidden = 5;
    spec.n_subjects = 2;
    spec.dropout = 0.2;
    auto m = build_model(spec, 5);
    gradient_check(*m, random_matrix(4, 7 * 6, 27), {0, 1, 1, 0}, random_labels(4, 28));
}

TEST_CASE("SE gate forced to one is an identity") {
    ParamStore store;
    SEGate gate(store, "se", 4, 10);
    store.allocate();
    Rng rng(3);
    gate.init(store, rng);
    // force the excitation output to saturate at 1: zero W2, large b2
    for (auto& view : store.views) {
        if (view.name == "se.w2") store.p(view.offset, view.rows, view.cols).setZero();
        if (view.name == "se.b2") store.p(view.offset, view.rows, view.cols).setConstant(50.0);
    }
    const Eigen::MatrixXd x = random_matrix(3, 40, 31);
    const Eigen::MatrixXd y = gate.forward(store, x);
    CHECK((y - x).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("identity convolution passes channels through") {
    ParamStore store;
    Conv3d conv(store, "conv", 3, 3, Eigen::Vector3i(3, 3, 3));
    store.allocate();
    // center tap of the matching channel = 1
    for (auto& view : store.views) {
        if (view.name == "conv.w") {
            auto w = store.p(view.offset, view.rows, view.cols);
            w.setZero();
            for (int c = 0; c < 3; ++c) w(c, c * 27 + 13) = 1.0;
        }
    }
    const Eigen::MatrixXd x = random_matrix(2, 3 * 27, 33);
    const Eigen::MatrixXd y = conv.forward(store, x);
    CHECK((y - x).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("GAT node with only a self-loop ignores other nodes") {
    auto graph = std::make_shared<GraphSpec>();
    graph->adjacency.resize(4);
    graph->adjacency[1].push_back(2);  // node 0 is isolated
    graph->adjacency[2].push_back(1);

    ParamStore store;
    GATLayer layer(store, "gat", 3, 5, graph.get());
    store.allocate();
    Rng rng(5);
    layer.init(store, rng);

    Eigen::MatrixXd x = random_matrix(1, 4 * 3, 35);
    const Eigen::MatrixXd y1 = layer.forward(store, x);
    Eigen::MatrixXd x2 = x;
    x2.rightCols(9) = random_matrix(1, 9, 36);  // perturb nodes 1..3
    const Eigen::MatrixXd y2 = layer.forward(store, x2);
    CHECK((y1.leftCols(5) - y2.leftCols(5)).cwiseAbs().maxCoeff() == 0.0);

    // and equals W x_0 (self attention weight is 1)
    Eigen::MatrixXd w;
    for (auto& view : store.views)
        if (view.name == "gat.w") w = store.p(view.offset, view.rows, view.cols);
    const Eigen::VectorXd expect = w * x.leftCols(3).transpose();
    CHECK((y1.leftCols(5).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("graph construction degrees") {
    // solid cube grid via a synthetic anatomy-free layout
    GridLayout g;
    g.dims = Eigen::Vector3i(4, 4, 4);
    g.voxel_of_cell.resize(64);
    g.cell_of_voxel.resize(64);
    for (int i = 0; i < 64; ++i) {
        g.voxel_of_cell[static_cast<std::size_t>(i)] = i;
        g.cell_of_voxel[static_cast<std::size_t>(i)] = i;
    }
    g.positions_norm = Eigen::MatrixX3d::Zero(64, 3);

    const GraphSpec voxel = build_voxel_graph(g);
    CHECK(voxel.degree(g.flat(1, 1, 1)) == 6);  // interior
    CHECK(voxel.degree(g.flat(0, 0, 0)) == 3);  // corner

    const SensorArray arr = build_sensor_array("A", 48, 90.0, 11, 75.0);
    const GraphSpec sensor = build_sensor_graph(arr.positions);
    CHECK(sensor.average_degree() >= 5.0);
    CHECK(sensor.average_degree() <= 10.0);
    for (int i = 0; i < sensor.n_nodes(); ++i)
        for (int j : sensor.adjacency[static_cast<std::size_t>(i)]) {
            const auto& back = sensor.adjacency[static_cast<std::size_t>(j)];
            CHECK(std::find(back.begin(), back.end(), i) != back.end());
        }

    GridLayout tiny;
    tiny.dims = Eigen::Vector3i(1, 1, 2);
    tiny.voxel_of_cell = {0, 1};
    tiny.cell_of_voxel = {0, 1};
    CHECK_THROWS_AS(build_voxel_graph(tiny), InputError);
}

TEST_CASE("gat input builders") {
    GridLayout g;
    g.dims = Eigen::Vector3i(1, 1, 2);
    g.voxel_of_cell = {0, 1};
    g.cell_of_voxel = {0, 1};
    g.positions_norm.resize(2, 3);
    g.positions_norm << -1, 0, 0, 1, 0, 0;

    Eigen::MatrixXd flat(1, 6);
    flat << 1, 2, 3, 4, 5, 6;
    const Eigen::MatrixXd nodes = gat_voxel_features(flat, g);
    REQUIRE(nodes.cols() == 12);
    CHECK(nodes(0, 0) == 1.0);
    CHECK(nodes(0, 3) == -1.0);  // position channel of node 0
    CHECK(nodes(0, 6) == 4.0);
    CHECK(nodes(0, 9) == 1.0);

    Eigen::MatrixX3d pos(2, 3);
    pos << 0, 0, 0, 10, 0, 0;
    Eigen::MatrixXd vals(1, 2);
    vals << 7, 9;
    const Eigen::MatrixXd sn = gat_sensor_features(vals, pos);
    REQUIRE(sn.cols() == 8);
    CHECK(sn(0, 0) == 7.0);
    CHECK(sn(0, 1) == -1.0);
    CHECK(sn(0, 4) == 9.0);
    CHECK(sn(0, 5) == 1.0);
}
