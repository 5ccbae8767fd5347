#include "entropy_trap/landscape.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace entropy_trap {

std::vector<LandscapeRow> export_landscape(const Mdp& mdp, const SoftSolution& soft, const PlainSolution& plain,
                                           const std::optional<std::string>& state_filter) {
    if (state_filter) {
        auto it = mdp.states.find(*state_filter);
        if (it == mdp.states.end()) throw LookupError("unknown state '" + *state_filter + "'");
        if (it->second.terminal) throw LookupError("state '" + *state_filter + "' is terminal and has no atoms");
    }

    std::vector<LandscapeRow> rows;
    for (const auto& [id, st] : mdp.states) {
        if (st.terminal || (state_filter && id != *state_filter)) continue;
        const auto& qs = soft.Q.at(id);
        const auto& qp = plain.Q.at(id);
        const auto& masses = soft.policy.masses.at(id);
        std::vector<LandscapeRow> block;
        for (std::size_t k = 0; k < st.atoms.size(); ++k) {
            const auto& a = st.atoms[k];
            block.push_back({id, a.id, a.lo, a.hi, a.weight, qs[k], qp[k], masses[k], masses[k] / a.weight});
        }
        std::stable_sort(block.begin(), block.end(),
                         [](const LandscapeRow& x, const LandscapeRow& y) { return x.lo < y.lo; });
        rows.insert(rows.end(), block.begin(), block.end());
    }
    return rows;
}

std::string landscape_csv(const std::vector<LandscapeRow>& rows) {
    std::string out = "state_id,atom_id,lo,hi,weight,q_soft,q_plain,policy_mass,policy_density\n";
    for (const auto& r : rows)
        out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.state_id, r.atom_id,
                           r.lo, r.hi, r.weight, r.q_soft, r.q_plain, r.policy_mass, r.policy_density);
    return out;
}

}  // namespace entropy_trap
