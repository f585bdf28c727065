#include <doctest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>

#include "voxdec/augment.hpp"
#include "voxdec/cache.hpp"
#include "voxdec/gridlayout.hpp"
#include "voxdec/rng.hpp"
#include "voxdec/sampleset.hpp"

using namespace voxdec;

namespace {

// toy 4x4x4 solid grid
GridLayout toy_grid() {
    GridLayout g;
    g.dims = Eigen::Vector3i(4, 4, 4);
    g.cell_min = Eigen::Vector3i::Zero();
    g.voxel_of_cell.resize(64);
    g.cell_of_voxel.resize(64);
    for (int i = 0; i < 64; ++i) {
        g.voxel_of_cell[static_cast<std::size_t>(i)] = i;
        g.cell_of_voxel[static_cast<std::size_t>(i)] = i;
    }
    g.positions_norm.resize(64, 3);
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 4; ++z) {
                const int v = g.flat(x, y, z);
                g.positions_norm(v, 0) = 2.0 * x / 3.0 - 1.0;
                g.positions_norm(v, 1) = 2.0 * y / 3.0 - 1.0;
                g.positions_norm(v, 2) = 2.0 * z / 3.0 - 1.0;
            }
    return g;
}

SessionFeatures make_session(const SessionKey& key, Representation repr, int dim, int samples,
                             std::uint64_t seed) {
    SessionFeatures s;
    s.key = key;
    s.repr = repr;
    s.features.resize(dim, samples);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < s.features.size(); ++i) s.features.data()[i] = rng.normal();
    s.labels.resize(static_cast<std::size_t>(samples));
    for (auto& l : s.labels) l = rng.uniform() < 0.5 ? 1 : 0;
    return s;
}

int count_nonzero_vec_cells(const DenseBatch& b, Eigen::Index sample) {
    int n = 0;
    const int cells = b.n_cells();
    for (int cell = 0; cell < cells; ++cell) {
        bool nz = false;
        for (int c = 0; c < 3; ++c)
            if (b.values(sample, c * cells + cell) != 0.0) nz = true;
        if (nz) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("inscribe and gather round-trip, positional extrema") {
    const GridLayout g = toy_grid();
    Rng rng(3);
    Eigen::MatrixXd flat(5, 3 * 64);
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat.data()[i] = rng.normal();

    const DenseBatch dense = inscribe_to_box(flat, g);
    CHECK(dense.values.rows() == 5);
    CHECK(dense.values.cols() == 6 * 64);
    const Eigen::MatrixXd back = gather_from_box(dense, g);
    CHECK((back - flat).cwiseAbs().maxCoeff() == 0.0);

    // positional channels hit -1 and +1 exactly on bounding voxels
    const int cells = g.n_cells();
    double pmin = 1e300, pmax = -1e300;
    for (int cell = 0; cell < cells; ++cell) {
        pmin = std::min(pmin, dense.values(0, 3 * cells + cell));
        pmax = std::max(pmax, dense.values(0, 3 * cells + cell));
    }
    CHECK(pmin == -1.0);
    CHECK(pmax == 1.0);

    // a single voxel set to (1,2,3) lands in exactly one cell
    Eigen::MatrixXd one = Eigen::MatrixXd::Zero(1, 3 * 64);
    one(0, 3 * 7 + 0) = 1.0;
    one(0, 3 * 7 + 1) = 2.0;
    one(0, 3 * 7 + 2) = 3.0;
    const DenseBatch db = inscribe_to_box(one, g);
    CHECK(count_nonzero_vec_cells(db, 0) == 1);
    CHECK(db.values(0, 0 * 64 + 7) == 1.0);
    CHECK(db.values(0, 1 * 64 + 7) == 2.0);
    CHECK(db.values(0, 2 * 64 + 7) == 3.0);
}

TEST_CASE("mixup: forced lambdas and convex hull") {
    Eigen::MatrixXd x(2, 1);
    x << 0.0, 2.0;
    Eigen::VectorXd y(2);
    y << 0.0, 1.0;

    Eigen::MatrixXd x1 = x;
    Eigen::VectorXd y1 = y;
    mixup_pairs(x1, y1, {1, 0}, Eigen::Vector2d(1.0, 1.0));
    CHECK(x1 == x);
    CHECK(y1 == y);

    Eigen::MatrixXd x2 = x;
    Eigen::VectorXd y2 = y;
    mixup_pairs(x2, y2, {1, 0}, Eigen::Vector2d(0.5, 0.5));
    CHECK(x2(0, 0) == doctest::Approx(1.0));
    CHECK(y2(0) == doctest::Approx(0.5));

    Rng rng(7);
    Eigen::MatrixXd xb(16, 3);
    for (Eigen::Index i = 0; i < xb.size(); ++i) xb.data()[i] = rng.normal();
    Eigen::VectorXd yb(16);
    for (Eigen::Index i = 0; i < 16; ++i) yb(i) = rng.uniform() < 0.5;
    const Eigen::MatrixXd lo = xb.rowwise().minCoeff().replicate(1, 1);
    Eigen::MatrixXd xa = xb;
    Eigen::VectorXd ya = yb;
    mixup(xa, ya, 1.0, 42);
    CHECK(xa.minCoeff() >= xb.minCoeff() - 1e-12);
    CHECK(xa.maxCoeff() <= xb.maxCoeff() + 1e-12);
    CHECK(ya.minCoeff() >= 0.0);
    CHECK(ya.maxCoeff() <= 1.0);

    CHECK_THROWS_AS(mixup(xa, ya, 0.0, 1), ConfigError);
    Eigen::MatrixXd tiny(1, 2);
    Eigen::VectorXd tiny_y(1);
    CHECK_THROWS_AS(mixup(tiny, tiny_y, 1.0, 1), InputError);
}

TEST_CASE("slice dropout: counting oracle and edge probabilities") {
    const GridLayout g = toy_grid();
    Rng rng(5);
    Eigen::MatrixXd flat = Eigen::MatrixXd::Ones(2, 3 * 64);
    DenseBatch b = inscribe_to_box(flat, g);

    // force exactly plane x = 2: 16 cells zeroed across channels 0-2
    zero_plane(b, 0, 0, 2);
    CHECK(count_nonzero_vec_cells(b, 0) == 48);
    CHECK(count_nonzero_vec_cells(b, 1) == 64);
    // positional channels untouched
    const int cells = 64;
    for (int cell = 0; cell < cells; ++cell)
        CHECK(b.values(0, 3 * cells + cell) == g.positions_norm(cell, 0));

    DenseBatch b0 = inscribe_to_box(flat, g);
    const Eigen::MatrixXd before = b0.values;
    slice_dropout(b0, 0.0, 9);
    CHECK(b0.values == before);

    DenseBatch b1 = inscribe_to_box(flat, g);
    slice_dropout(b1, 1.0, 9);
    CHECK(count_nonzero_vec_cells(b1, 0) == 0);
    CHECK(count_nonzero_vec_cells(b1, 1) == 0);

    CHECK_THROWS_AS(slice_dropout(b1, 1.5, 9), ConfigError);
}

TEST_CASE("cube mask: counting oracles") {
    const GridLayout g = toy_grid();
    Eigen::MatrixXd flat = Eigen::MatrixXd::Ones(1, 3 * 64);
    DenseBatch b = inscribe_to_box(flat, g);
    zero_box(b, 0, Eigen::Vector3i(0, 0, 0), Eigen::Vector3i(1, 1, 1));
    CHECK(count_nonzero_vec_cells(b, 0) == 64 - 8);

    DenseBatch b2 = inscribe_to_box(flat, g);
    zero_box(b2, 0, Eigen::Vector3i(2, 2, 2), Eigen::Vector3i(2, 2, 2));
    CHECK(count_nonzero_vec_cells(b2, 0) == 63);

    DenseBatch b3 = inscribe_to_box(flat, g);
    const Eigen::MatrixXd before = b3.values;
    cube_mask(b3, 0.0, 4);
    CHECK(b3.values == before);

    // corners swap symmetry
    DenseBatch b4 = inscribe_to_box(flat, g);
    zero_box(b4, 0, Eigen::Vector3i(3, 1, 0), Eigen::Vector3i(1, 2, 3));
    DenseBatch b5 = inscribe_to_box(flat, g);
    zero_box(b5, 0, Eigen::Vector3i(1, 2, 3), Eigen::Vector3i(3, 1, 0));
    CHECK(b4.values == b5.values);
}

TEST_CASE("masking ops are idempotent and leave labels alone") {
    const GridLayout g = toy_grid();
    Rng rng(11);
    Eigen::MatrixXd flat(3, 3 * 64);
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat.data()[i] = rng.normal();
    DenseBatch once = inscribe_to_box(flat, g);
    zero_plane(once, 1, 2, 3);
    zero_box(once, 2, Eigen::Vector3i(0, 1, 0), Eigen::Vector3i(2, 3, 1));
    DenseBatch twice = once;
    zero_plane(twice, 1, 2, 3);
    zero_box(twice, 2, Eigen::Vector3i(0, 1, 0), Eigen::Vector3i(2, 3, 1));
    CHECK(once.values == twice.values);
}

TEST_CASE("region masking with buffer") {
    const Anatomy a = build_template_anatomy(15.0, 75.0, 7);
    int region = 0;
    for (int r = 1; r <= a.n_regions; ++r)
        if (a.region_voxels(r).size() >= 6) {
            region = r;
            break;
        }
    REQUIRE(region > 0);

    const auto base = region_mask_voxels(a, region, 0);
    CHECK(base.size() == a.region_voxels(region).size());

    const auto buffered = region_mask_voxels(a, region, 1);
    CHECK(buffered.size() > base.size());
    for (int v : base) CHECK(std::count(buffered.begin(), buffered.end(), v) == 1);

    // masked flat features: exactly those voxels zeroed
    Eigen::MatrixXd flat = Eigen::MatrixXd::Ones(1, 3 * a.n_voxels());
    apply_voxel_mask(flat, base);
    int zeroed = 0;
    for (int v = 0; v < a.n_voxels(); ++v)
        if (flat(0, 3 * v) == 0.0) ++zeroed;
    CHECK(zeroed == static_cast<int>(base.size()));

    CHECK_THROWS_AS(region_mask_voxels(a, 0, 1), ConfigError);
    CHECK_THROWS_AS(region_mask_voxels(a, a.n_regions + 1, 1), ConfigError);

    // a region with too few voxels is rejected
    Anatomy tiny = a;
    for (auto& label : tiny.atlas) label = 0;
    tiny.atlas[0] = 1;
    tiny.atlas[1] = 1;
    tiny.n_regions = 1;
    CHECK_THROWS_AS(region_mask_voxels(tiny, 1, 0), InputError);
}

TEST_CASE("assemble builds splits and guards leakage") {
    SplitPlan plan;
    plan.mode = SplitPlan::Mode::single_subject;
    plan.splits["train"] = {{"B", "b01", "s01"}, {"B", "b01", "s02"}};
    plan.splits["val"] = {{"B", "b01", "s03"}};
    plan.splits["test"] = {{"B", "b01", "s04"}};
    plan.subject_index = {{"b01", 0}};

    std::vector<SessionFeatures> sessions;
    for (int i = 1; i <= 4; ++i)
        sessions.push_back(make_session({"B", "b01", "s0" + std::to_string(i)}, Representation::sensor, 6,
                                        40 + i, static_cast<std::uint64_t>(i)));

    auto sets = assemble(plan, Representation::sensor, sessions);
    CHECK(sets.at("train").size() == 41 + 42);
    CHECK(sets.at("val").size() == 43);
    CHECK(sets.at("test").size() == 44);
    CHECK(sets.at("train").subject_index[0] == 0);

    // split sizes proportional to session lengths
    CHECK(sets.at("train").features.rows() ==
          sessions[0].features.cols() + sessions[1].features.cols());

    // session in two splits -> leakage error
    SplitPlan bad = plan;
    bad.splits["val"].push_back({"B", "b01", "s01"});
    CHECK_THROWS_AS(assemble(bad, Representation::sensor, sessions), InputError);
}

TEST_CASE("inter-subject assemble keeps subject sets disjoint") {
    SplitPlan plan;
    plan.mode = SplitPlan::Mode::inter_subject;
    plan.splits["train"] = {{"A", "a01", "s01"}, {"A", "a02", "s01"}, {"A", "a03", "s01"}};
    plan.splits["val"] = {{"A", "a04", "s01"}};
    plan.splits["test"] = {{"A", "a05", "s01"}};
    plan.subject_index = {{"a01", 0}, {"a02", 1}, {"a03", 2}};

    std::vector<SessionFeatures> sessions;
    for (int i = 1; i <= 5; ++i)
        sessions.push_back(make_session({"A", "a0" + std::to_string(i), "s01"}, Representation::sensor, 6,
                                        30, static_cast<std::uint64_t>(i)));

    auto sets = assemble(plan, Representation::sensor, sessions);
    CHECK(sets.at("val").subject_index[0] == -1);  // unseen subject -> mean embedding at eval
    CHECK(sets.at("train").subject_index[31] == 1);

    SplitPlan bad = plan;
    bad.splits["val"].push_back({"A", "a01", "s02"});
    sessions.push_back(make_session({"A", "a01", "s02"}, Representation::sensor, 6, 30, 99));
    CHECK_THROWS_AS(assemble(bad, Representation::sensor, sessions), InputError);
}

TEST_CASE("cache round-trips bitwise and detects corruption") {
    const auto dir = std::filesystem::temp_directory_path() / "voxdec-cache-test";
    std::filesystem::remove_all(dir);

    Rng rng(13);
    Tensor t;
    t.shape = {7, 11};
    t.data.resize(77);
    for (auto& v : t.data) v = rng.normal();

    const auto file = cache_path(dir, "A", "a01", "s01", param_hash("snr=3"), "features");
    cache_store(file, "snr=3", t);
    const Tensor back = cache_load(file, "snr=3");
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);  // bitwise

    // different parameters produce distinct entries
    const auto file2 = cache_path(dir, "A", "a01", "s01", param_hash("snr=5"), "features");
    CHECK(file2 != file);

    // key mismatch is detected
    CHECK_THROWS_AS(cache_load(file, "snr=5"), CacheError);

    // truncation is detected
    const auto size = std::filesystem::file_size(file);
    std::filesystem::resize_file(file, size - 9);
    CHECK_THROWS_AS(cache_load(file, "snr=3"), CacheError);

    // flipped payload byte is detected
    cache_store(file, "snr=3", t);
    {
        std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-1, std::ios::end);
        char c;
        f.seekg(-1, std::ios::end);
        f.get(c);
        f.seekp(-1, std::ios::end);
        c = static_cast<char>(c ^ 0x1);
        f.put(c);
    }
    CHECK_THROWS_AS(cache_load(file, "snr=3"), CacheError);
    std::filesystem::remove_all(dir);
}
