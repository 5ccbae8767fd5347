#pragma once

#include <string>
#include <vector>

#include "entropy_trap/mdp.hpp"

namespace entropy_trap {

/// Index-based view of an Mdp used by the solvers and learners.
///
/// State indices follow the Mdp's (sorted) state-id order. Each atom's backup is
///   Q(s,k) = immediate[k] + gamma * sum over non-terminal s' of P(s'|s,k) V(s')
/// where `immediate` already folds in terminal successors per the MDP's timing.
struct CompiledMdp {
    struct Successor {
        int state = 0;
        double prob = 0.0;
    };
    struct Atom {
        double weight = 1.0;
        double reward = 0.0;
        double immediate = 0.0;
        std::vector<Successor> successors;  // every successor, terminal or not
        std::vector<Successor> continuing;  // non-terminal successors only
    };
    struct State {
        std::string id;
        bool terminal = false;
        double terminal_reward = 0.0;
        /// Contribution of entering this terminal: r_T (on_entry) or gamma r_T.
        double terminal_value = 0.0;
        std::vector<Atom> atoms;
    };

    std::vector<State> states;
    int start = 0;
    double gamma = 0.99;

    explicit CompiledMdp(const Mdp& mdp);

    int index_of(const std::string& id) const;
    std::size_t size() const { return states.size(); }
};

}  // namespace entropy_trap
