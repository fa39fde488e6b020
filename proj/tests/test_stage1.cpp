#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ssc/grad_check.hpp"
#include "ssc/queries.hpp"
#include "ssc/stage1.hpp"
#include "testutil.hpp"

using namespace ssc;

namespace {

VolumeSpec small_volume() {
    VolumeSpec spec;
    spec.origin = Eigen::Vector3d::Zero();
    spec.voxel_size = 0.5;
    spec.dims = {8, 8, 4};
    spec.query_dims = {4, 4, 2};
    return spec;
}

OccupancyGrid random_grid(Rng& rng, const std::array<int, 3>& dims, double density) {
    OccupancyGrid g = OccupancyGrid::zeros(dims);
    for (auto& b : g.bits) b = rng.uniform() < density ? 1 : 0;
    return g;
}

}  // namespace

TEST_CASE("query set layout and parameter naming") {
    Rng rng(3);
    const VoxelQuerySet qset = VoxelQuerySet::init(rng, {4, 4, 2}, 8);
    CHECK(qset.query_count() == 32);
    CHECK(qset.q.dim(0) == 32);
    CHECK(qset.q.dim(1) == 8);
    CHECK(qset.pos_embed.dim(0) == 32);
    CHECK(qset.mask_token.rank() == 1);
    CHECK(qset.mask_token.dim(0) == 8);

    const auto params = qset.named_params("queries");
    REQUIRE(params.size() == 3);
    for (const auto& [name, t] : params) CHECK(name.rfind("queries.", 0) == 0);
}

TEST_CASE("proposal gathers rows at set bits in scan order") {
    Rng rng(7);
    const VoxelQuerySet qset = VoxelQuerySet::init(rng, {4, 4, 2}, 8);

    for (int trial = 0; trial < 100; ++trial) {
        const double density = rng.uniform();
        const OccupancyGrid mask = random_grid(rng, qset.dims, density);
        const auto [q_p, proposal] = propose_queries(qset, mask);

        // Row count equals the number of set bits.
        CHECK(static_cast<long>(proposal.indices.size()) == mask.popcount());
        if (mask.popcount() == 0) {
            CHECK_FALSE(q_p.has_value());
            continue;
        }
        REQUIRE(q_p.has_value());
        REQUIRE(q_p->dim(0) == static_cast<int>(proposal.indices.size()));

        // Oracle: walk cells in scan order, picking q + pos rows by hand.
        const Eigen::ArrayXd& qv = qset.q.values();
        const Eigen::ArrayXd& pv = qset.pos_embed.values();
        const Eigen::ArrayXd& gathered = q_p->values();
        long row = 0;
        for (long flat = 0; flat < mask.cell_count(); ++flat) {
            if (!mask.bits[static_cast<std::size_t>(flat)]) continue;
            REQUIRE(proposal.indices[static_cast<std::size_t>(row)] == flat);
            for (int c = 0; c < qset.d; ++c)
                REQUIRE(gathered[row * qset.d + c] == qv[flat * qset.d + c] + pv[flat * qset.d + c]);
            ++row;
        }
    }
}

TEST_CASE("proposal handles the all-set mask") {
    Rng rng(11);
    const VoxelQuerySet qset = VoxelQuerySet::init(rng, {4, 4, 2}, 8);
    OccupancyGrid full = OccupancyGrid::zeros(qset.dims);
    for (auto& b : full.bits) b = 1;
    const auto [q_p, proposal] = propose_queries(qset, full);
    REQUIRE(q_p.has_value());
    CHECK(q_p->dim(0) == 32);
    for (int i = 0; i < 32; ++i) CHECK(proposal.indices[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("proposal rejects mismatched grids") {
    Rng rng(13);
    const VoxelQuerySet qset = VoxelQuerySet::init(rng, {4, 4, 2}, 8);
    const OccupancyGrid wrong = OccupancyGrid::zeros({8, 8, 4});
    CHECK_THROWS_AS((void)propose_queries(qset, wrong), std::invalid_argument);
}

TEST_CASE("occupancy net shape contract") {
    Rng rng(17);
    const VolumeSpec spec = small_volume();
    const OccupancyNet net = OccupancyNet::init(rng, spec);

    const OccupancyGrid m_in = random_grid(rng, spec.dims, 0.2);
    const auto [logits, m_out] = predict_occupancy(m_in, net);
    CHECK(logits.rank() == 3);
    CHECK(logits.dim(0) == 4);
    CHECK(logits.dim(1) == 4);
    CHECK(logits.dim(2) == 2);
    CHECK(logits.values().isFinite().all());
    CHECK(m_out.dims == spec.query_dims);

    // Thresholding: bit set exactly where the logit is positive.
    const Eigen::ArrayXd& lv = logits.values();
    for (long f = 0; f < m_out.cell_count(); ++f)
        CHECK(m_out.bits[static_cast<std::size_t>(f)] == (lv[f] > 0.0 ? 1 : 0));
}

TEST_CASE("occupancy net is deterministic in the seed") {
    const VolumeSpec spec = small_volume();
    Rng ra(19), rb(19);
    const OccupancyNet na = OccupancyNet::init(ra, spec);
    const OccupancyNet nb = OccupancyNet::init(rb, spec);
    Rng grid_rng(1);
    const OccupancyGrid m_in = random_grid(grid_rng, spec.dims, 0.3);
    CHECK((na.forward(grid_tensor(m_in)).values() == nb.forward(grid_tensor(m_in)).values())
              .all());
}

TEST_CASE("binary cross entropy loss matches a direct computation") {
    Rng rng(23);
    const VolumeSpec spec = small_volume();
    const OccupancyGrid target = random_grid(rng, spec.query_dims, 0.4);
    Tensor logits = testutil::rand_signed(rng, {4, 4, 2}, 0.1, 2.0, true);

    const Tensor loss = stage1_loss(logits, target);
    double expect = 0;
    const Eigen::ArrayXd& x = logits.values();
    for (long f = 0; f < target.cell_count(); ++f) {
        const double t = target.bits[static_cast<std::size_t>(f)];
        expect += std::max(x[f], 0.0) - x[f] * t + std::log1p(std::exp(-std::abs(x[f])));
    }
    expect /= static_cast<double>(target.cell_count());
    CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("stage-1 gradients match finite differences") {
    Rng rng(29);
    VolumeSpec spec;
    spec.voxel_size = 0.5;
    spec.dims = {4, 4, 2};
    spec.query_dims = {2, 2, 1};
    const OccupancyNet net = OccupancyNet::init(rng, spec);
    const OccupancyGrid m_in = random_grid(rng, spec.dims, 0.25);
    const OccupancyGrid target = random_grid(rng, spec.query_dims, 0.3);
    const Tensor input = grid_tensor(m_in);

    const auto loss_fn = [&]() { return stage1_loss(net.forward(input), target); };
    const GradCheckReport report = check_gradients(loss_fn, net.named_params("occ"));
    INFO(report.worst);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("a few descent steps reduce the stage-1 loss") {
    Rng rng(31);
    const VolumeSpec spec = small_volume();
    const OccupancyNet net = OccupancyNet::init(rng, spec);
    const OccupancyGrid m_in = random_grid(rng, spec.dims, 0.25);
    const OccupancyGrid target = downsample_occupancy(m_in, spec);
    const Tensor input = grid_tensor(m_in);

    const auto params = net.named_params("occ");
    double first = 0, last = 0;
    for (int step = 0; step < 25; ++step) {
        for (const auto& [name, t] : params) Tensor(t).zero_grad();
        Tensor loss = stage1_loss(net.forward(input), target);
        if (step == 0) first = loss.value();
        last = loss.value();
        loss.backward();
        for (const auto& [name, t] : params) {
            Tensor handle = t;
            handle.leaf_values() -= 0.5 * handle.grad();
        }
    }
    CHECK(last < 0.75 * first);
}
