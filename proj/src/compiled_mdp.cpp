#include "entropy_trap/compiled_mdp.hpp"

#include <algorithm>

namespace entropy_trap {

CompiledMdp::CompiledMdp(const Mdp& mdp) : gamma(mdp.gamma) {
    std::vector<std::string> ids;
    for (const auto& [id, spec] : mdp.states) ids.push_back(id);

    auto lookup = [&](const std::string& id) {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        if (it == ids.end() || *it != id) throw LookupError("unknown state '" + id + "'");
        return static_cast<int>(it - ids.begin());
    };

    states.reserve(ids.size());
    for (const auto& [id, spec] : mdp.states) {
        State s;
        s.id = id;
        s.terminal = spec.terminal;
        s.terminal_reward = spec.terminal_reward;
        s.terminal_value = mdp.terminal_timing == TerminalTiming::on_entry ? spec.terminal_reward
                                                                          : mdp.gamma * spec.terminal_reward;
        states.push_back(std::move(s));
    }
    for (const auto& [id, spec] : mdp.states) {
        auto& s = states[static_cast<std::size_t>(lookup(id))];
        for (const auto& atom : spec.atoms) {
            Atom a;
            a.weight = atom.weight;
            a.reward = atom.reward;
            a.immediate = atom.reward;
            for (const auto& [target, p] : atom.next) {
                const int t = lookup(target);
                a.successors.push_back({t, p});
                const auto& succ = states[static_cast<std::size_t>(t)];
                if (succ.terminal)
                    a.immediate += p * succ.terminal_value;
                else
                    a.continuing.push_back({t, p});
            }
            s.atoms.push_back(std::move(a));
        }
    }
    start = lookup(mdp.start);
}

int CompiledMdp::index_of(const std::string& id) const {
    auto it = std::lower_bound(states.begin(), states.end(), id,
                               [](const State& s, const std::string& key) { return s.id < key; });
    if (it == states.end() || it->id != id) throw LookupError("unknown state '" + id + "'");
    return static_cast<int>(it - states.begin());
}

}  // namespace entropy_trap
