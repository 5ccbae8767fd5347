#pragma once

#include <optional>
#include <string>
#include <vector>

#include "entropy_trap/mdp.hpp"
#include "entropy_trap/solvers.hpp"

namespace entropy_trap {

struct LandscapeRow {
    std::string state_id;
    std::string atom_id;
    double lo = 0.0;
    double hi = 0.0;
    double weight = 0.0;
    double q_soft = 0.0;
    double q_plain = 0.0;
    double policy_mass = 0.0;
    double policy_density = 0.0;  // policy_mass / weight
};

/// One row per (non-terminal state, atom), sorted by (state_id, lo). With a
/// filter only that state is exported; unknown or terminal filters throw
/// LookupError.
std::vector<LandscapeRow> export_landscape(const Mdp& mdp, const SoftSolution& soft, const PlainSolution& plain,
                                           const std::optional<std::string>& state_filter = std::nullopt);

std::string landscape_csv(const std::vector<LandscapeRow>& rows);

}  // namespace entropy_trap
