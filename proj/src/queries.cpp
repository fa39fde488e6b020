#include "ssc/queries.hpp"

#include <stdexcept>

namespace ssc {

VoxelQuerySet VoxelQuerySet::init(Rng& rng, const std::array<int, 3>& dims, int d) {
    if (d <= 0) throw std::invalid_argument("queries: feature dimension must be positive");
    VoxelQuerySet qs;
    qs.dims = dims;
    qs.d = d;
    const int n = static_cast<int>(qs.query_count());
    qs.q = Tensor::randn(rng, {n, d}, 0.02, true);
    qs.pos_embed = Tensor::randn(rng, {n, d}, 0.02, true);
    qs.mask_token = Tensor::randn(rng, {d}, 0.02, true);
    return qs;
}

std::vector<std::pair<std::string, Tensor>> VoxelQuerySet::named_params(
    const std::string& prefix) const {
    return {{prefix + ".q", q}, {prefix + ".pos", pos_embed}, {prefix + ".mask", mask_token}};
}

std::pair<std::optional<Tensor>, QueryProposal> propose_queries(const VoxelQuerySet& qset,
                                                                const OccupancyGrid& m_out) {
    if (m_out.dims != qset.dims)
        throw std::invalid_argument("propose_queries: mask dims do not match query grid");
    QueryProposal proposal;
    proposal.dims = qset.dims;
    for (std::size_t i = 0; i < m_out.bits.size(); ++i)
        if (m_out.bits[i]) proposal.indices.push_back(static_cast<int>(i));
    if (proposal.indices.empty()) return {std::nullopt, std::move(proposal)};
    Tensor rows = gather_rows(add(qset.q, qset.pos_embed), proposal.indices);
    return {std::move(rows), std::move(proposal)};
}

}  // namespace ssc
