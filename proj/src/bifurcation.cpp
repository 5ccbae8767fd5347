#include "entropy_trap/bifurcation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace entropy_trap {

using nlohmann::json;

TargetPolicySpec make_target(const Mdp& mdp, const std::string& state_id, const std::map<std::string, double>& by_atom) {
    const auto& spec = mdp.state(state_id);
    if (spec.terminal) throw Error("bad_target", "target state '" + state_id + "' is terminal");
    TargetPolicySpec target{state_id, std::vector<double>(spec.atoms.size(), 0.0)};
    for (const auto& [atom, mass] : by_atom) target.masses[mdp.atom_index(state_id, atom)] = mass;
    for (std::size_t k = 0; k < spec.atoms.size(); ++k)
        if (!by_atom.count(spec.atoms[k].id))
            throw Error("bad_target", "target omits atom '" + spec.atoms[k].id + "'");
    double total = 0.0;
    for (double p : target.masses) {
        if (!(p > 0.0)) throw Error("bad_target", "target masses must be strictly positive");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("bad_target", fmt::format("target masses sum to {}", total));
    return target;
}

TargetPolicySpec parse_target(const Mdp& mdp, const std::string& state_id, const std::string& spec) {
    std::map<std::string, double> by_atom;
    std::stringstream in(spec);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto colon = item.rfind(':');
        if (colon == std::string::npos) throw ParseError("target entry '" + item + "' is not atom:mass");
        try {
            by_atom[item.substr(0, colon)] = std::stod(item.substr(colon + 1));
        } catch (const std::exception&) {
            throw ParseError("target entry '" + item + "' has no numeric mass");
        }
    }
    return make_target(mdp, state_id, by_atom);
}

std::string target_to_json(const Mdp& mdp, const TargetPolicySpec& target) {
    json masses = json::object();
    const auto& atoms = mdp.state(target.state_id).atoms;
    for (std::size_t k = 0; k < atoms.size(); ++k) masses[atoms[k].id] = target.masses.at(k);
    return json{{"state", target.state_id}, {"masses", masses}}.dump(2);
}

TargetPolicySpec target_from_json(const Mdp& mdp, const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed target document: ") + e.what());
    }
    if (!doc.contains("state") || !doc["state"].is_string()) throw ParseError("missing field 'state' in target");
    if (!doc.contains("masses") || !doc["masses"].is_object()) throw ParseError("missing field 'masses' in target");
    std::map<std::string, double> by_atom;
    for (auto it = doc["masses"].begin(); it != doc["masses"].end(); ++it) {
        if (!it->is_number()) throw ParseError("target mass for '" + it.key() + "' must be a number");
        by_atom[it.key()] = it->get<double>();
    }
    return make_target(mdp, doc["state"].get<std::string>(), by_atom);
}

std::vector<double> backward_q(std::span<const double> masses, double v_s, double alpha,
                               std::span<const double> weights) {
    if (masses.size() != weights.size()) throw Error("length_mismatch", "masses and weights differ in length");
    std::vector<double> q(masses.size());
    for (std::size_t k = 0; k < masses.size(); ++k) {
        if (!(masses[k] > 0.0)) throw InfeasibleError(fmt::format("target mass of atom {} is not positive", k));
        q[k] = alpha * std::log(masses[k] / weights[k]) + v_s;
    }
    return q;
}

ForwardSolution forward_solve(double v_target, double q1, double alpha, double gamma, double w1, double w2,
                              TerminalTiming timing) {
    // log e^{v/alpha} vs log (w1 e^{q1/alpha})
    const double a = v_target / alpha;
    const double b = std::log(w1) + q1 / alpha;
    if (!(b < a))
        throw InfeasibleError(fmt::format("e^(v/alpha) <= w1 e^(q1/alpha): v={:.17g}, q1={:.17g}, w1={:.17g}",
                                          v_target, q1, w1));
    ForwardSolution out;
    out.q2 = alpha * (a + std::log(-std::expm1(b - a)) - std::log(w2));
    if (timing == TerminalTiming::discounted) {
        if (!(gamma > 0.0)) throw InfeasibleError("discounted trap reward needs gamma > 0");
        out.r_trap = out.q2 / gamma;
    } else {
        out.r_trap = out.q2;
    }
    return out;
}

namespace {

// Value a successor contributes per unit of gamma: V(s') for non-terminal
// states, and the terminal reward rescaled so that gamma * value reproduces the
// timing convention.
double continuation(const Mdp& mdp, const std::map<std::string, double>& V, const std::string& id) {
    const auto& st = mdp.state(id);
    if (!st.terminal) return V.at(id);
    return mdp.terminal_timing == TerminalTiming::on_entry ? st.terminal_reward / mdp.gamma : st.terminal_reward;
}

std::vector<double> weights_at(const Mdp& mdp, const std::string& id) {
    std::vector<double> w;
    for (const auto& a : mdp.state(id).atoms) w.push_back(a.weight);
    return w;
}

void check_target(const Mdp& mdp, const TargetPolicySpec& target) {
    const auto& spec = mdp.state(target.state_id);
    if (spec.terminal) throw Error("bad_target", "target state '" + target.state_id + "' is terminal");
    if (target.masses.size() != spec.atoms.size())
        throw Error("bad_target", "target masses are not aligned with the atoms of '" + target.state_id + "'");
    for (double p : target.masses)
        if (!(p > 0.0)) throw InfeasibleError("target masses must be strictly positive");
}

std::vector<BifurcationParams> plan(const Mdp& mdp, const SoftSolution& soft, const PlainSolution& plain,
                                    const TargetPolicySpec& target, const ExtensionOptions& options) {
    check_target(mdp, target);
    if (!(mdp.gamma > 0.0)) throw InfeasibleError("bifurcation needs gamma > 0");
    const auto& spec = mdp.state(target.state_id);
    for (const auto& atom : spec.atoms)
        if (atom.next.size() != 1)
            throw Error("nondeterministic_atom", "atom '" + atom.id + "' at '" + target.state_id +
                                                     "' does not have a single successor");

    const double alpha = soft.alpha;
    const double v_s = soft.V.at(target.state_id);
    const auto q_target = backward_q(target.masses, v_s, alpha, weights_at(mdp, target.state_id));

    std::vector<BifurcationParams> out;
    for (std::size_t k = 0; k < spec.atoms.size(); ++k) {
        const auto& atom = spec.atoms[k];
        BifurcationParams p;
        p.state_id = target.state_id;
        p.atom_id = atom.id;
        p.successor = atom.next.begin()->first;
        p.mu_state = target.state_id + "::" + atom.id + "::mu";
        p.trap_state = target.state_id + "::" + atom.id + "::muT";
        p.v_target = (q_target[k] - atom.reward) / mdp.gamma;

        const double v_plain_next = continuation(mdp, plain.V, p.successor);
        p.r_loop = (1.0 - mdp.gamma) * v_plain_next;
        p.q1 = p.r_loop + mdp.gamma * continuation(mdp, soft.V, p.successor);

        p.w1 = options.w1;
        std::size_t halvings = 0;
        while (!(std::log(p.w1) + p.q1 / alpha < p.v_target / alpha)) {
            if (halvings == options.max_w1_halvings)
                throw InfeasibleError(fmt::format(
                    "atom '{}' at '{}': v_target={:.17g} stays below q1 + alpha log w1 (q1={:.17g}) after {} "
                    "halvings of w1",
                    atom.id, target.state_id, p.v_target, p.q1, halvings));
            p.w1 *= 0.5;
            ++halvings;
        }

        // Smallest w2 that keeps the trap's Q at least `margin` below V_plain(s').
        const double a = p.v_target / alpha;
        const double log_spare = a + std::log(-std::expm1(std::log(p.w1) + p.q1 / alpha - a));
        const double log_w2 = log_spare - (v_plain_next - options.margin) / alpha;
        p.w2 = std::max(options.w2_min, std::exp(log_w2));
        if (!std::isfinite(p.w2) || !(p.w2 > 0.0))
            throw InfeasibleError(fmt::format("atom '{}' at '{}': trap weight exp({:.6g}) is not representable",
                                              atom.id, target.state_id, log_w2));

        const auto fwd = forward_solve(p.v_target, p.q1, alpha, mdp.gamma, p.w1, p.w2, mdp.terminal_timing);
        p.q2 = fwd.q2;
        p.r_trap = fwd.r_trap;
        out.push_back(std::move(p));
    }
    return out;
}

void apply_plan(Mdp& mdp, const std::vector<BifurcationParams>& params) {
    for (const auto& p : params) {
        if (mdp.states.count(p.mu_state) || mdp.states.count(p.trap_state))
            throw Error("id_collision", "state id '" + p.mu_state + "' already exists");
        auto& atom = mdp.states.at(p.state_id).atoms.at(mdp.atom_index(p.state_id, p.atom_id));
        atom.next = {{p.mu_state, 1.0}};

        StateSpec mu;
        mu.atoms.push_back(ActionAtom{"loop", 0.0, p.w1, p.w1, p.r_loop, {{p.successor, 1.0}}});
        mu.atoms.push_back(ActionAtom{"trap", -p.w2, 0.0, p.w2, 0.0, {{p.trap_state, 1.0}}});
        mdp.states.emplace(p.mu_state, std::move(mu));

        StateSpec trap;
        trap.terminal = true;
        trap.terminal_reward = p.r_trap;
        mdp.states.emplace(p.trap_state, std::move(trap));
    }
}

// Recovers the parameters of inserted states from an extended MDP so that
// reports built from files carry them too.
std::vector<BifurcationParams> recover_params(const Mdp& original, const Mdp& extended) {
    std::vector<BifurcationParams> out;
    for (const auto& [sid, spec] : original.states) {
        if (spec.terminal) continue;
        const auto& ext_atoms = extended.state(sid).atoms;
        for (const auto& atom : ext_atoms) {
            if (atom.next.size() != 1) continue;
            const auto& mu_id = atom.next.begin()->first;
            if (original.states.count(mu_id)) continue;
            const auto& mu = extended.state(mu_id);
            if (mu.terminal || mu.atoms.size() != 2) continue;
            BifurcationParams p;
            p.state_id = sid;
            p.atom_id = atom.id;
            p.mu_state = mu_id;
            for (const auto& branch : mu.atoms) {
                if (branch.next.size() != 1) continue;
                const auto& to = branch.next.begin()->first;
                if (original.states.count(to)) {
                    p.successor = to;
                    p.w1 = branch.weight;
                    p.r_loop = branch.reward;
                } else if (extended.state(to).terminal) {
                    p.trap_state = to;
                    p.w2 = branch.weight;
                    p.r_trap = extended.state(to).terminal_reward;
                }
            }
            if (!p.successor.empty() && !p.trap_state.empty()) out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace

Extension build_extension(const Mdp& mdp, const TargetPolicySpec& target, const ExtensionOptions& options) {
    const auto soft = soft_value_iteration(mdp, mdp.alpha, options.solver);
    const auto plain = plain_value_iteration(mdp, options.solver);
    Extension ext{mdp, plan(mdp, soft, plain, target, options)};
    apply_plan(ext.mdp, ext.params);
    return ext;
}

bool ExtensionReport::certifies(double kl_tol, double residual_tol) const {
    return kl_at_target < kl_tol && plain_q_residual < residual_tol && soft_v_residual < residual_tol &&
           greedy_sets_preserved && (!trap_avoidance_margin || *trap_avoidance_margin > 0.0);
}

ExtensionReport verify_extension(const Mdp& original, const Mdp& extended, const TargetPolicySpec& target,
                                 const SolverOptions& solver) {
    return verify_extension(original, extended, std::vector<TargetPolicySpec>{target}, solver);
}

ExtensionReport verify_extension(const Mdp& original, const Mdp& extended,
                                 const std::vector<TargetPolicySpec>& targets, const SolverOptions& solver) {
    for (const auto& [sid, spec] : original.states) {
        auto it = extended.states.find(sid);
        if (it == extended.states.end())
            throw Error("state_mismatch", "extended MDP lacks original state '" + sid + "'");
        if (it->second.terminal != spec.terminal || it->second.atoms.size() != spec.atoms.size())
            throw Error("state_mismatch", "state '" + sid + "' changed shape in the extended MDP");
    }
    for (const auto& t : targets) check_target(original, t);

    const auto soft_o = soft_value_iteration(original, original.alpha, solver);
    const auto soft_e = soft_value_iteration(extended, original.alpha, solver);
    const auto plain_o = plain_value_iteration(original, solver);
    const auto plain_e = plain_value_iteration(extended, solver);

    ExtensionReport report;
    for (const auto& t : targets)
        report.kl_at_target = std::max(report.kl_at_target, kl_divergence(soft_e.policy.masses.at(t.state_id), t.masses));

    for (const auto& [sid, q] : plain_o.Q) {
        const auto& qe = plain_e.Q.at(sid);
        for (std::size_t k = 0; k < q.size(); ++k)
            report.plain_q_residual = std::max(report.plain_q_residual, std::abs(qe[k] - q[k]));
        if (plain_o.greedy.at(sid) != plain_e.greedy.at(sid)) report.greedy_sets_preserved = false;
        report.soft_v_residual = std::max(report.soft_v_residual, std::abs(soft_e.V.at(sid) - soft_o.V.at(sid)));
    }

    report.params = recover_params(original, extended);
    for (auto& p : report.params) {
        const auto& q_soft = soft_e.Q.at(p.mu_state);
        const auto& q_plain = plain_e.Q.at(p.mu_state);
        const std::size_t trap = extended.atom_index(p.mu_state, "trap");
        const std::size_t loop = extended.atom_index(p.mu_state, "loop");
        p.q1 = q_soft[loop];
        p.q2 = q_soft[trap];
        p.v_target = soft_e.V.at(p.mu_state);
        const double margin = continuation(extended, plain_e.V, p.successor) - q_plain[trap];
        report.trap_avoidance_margin = std::min(report.trap_avoidance_margin.value_or(margin), margin);
    }
    return report;
}

WorstCaseResult worst_case_transform(const Mdp& mdp, double eta, const ExtensionOptions& options) {
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("eta must lie in (0, 1)");
    const auto soft = soft_value_iteration(mdp, mdp.alpha, options.solver);
    const auto plain = plain_value_iteration(mdp, options.solver);
    const auto worst = plain_value_iteration(mdp, options.solver, 1e-9, Objective::minimize);

    WorstCaseResult result{mdp, {}, {}};
    std::vector<BifurcationParams> all;
    for (const auto& sid : mdp.nonterminal_ids()) {
        const auto& q_min = worst.Q.at(sid);
        const std::size_t n = q_min.size();
        const auto worst_atom = static_cast<std::size_t>(std::min_element(q_min.begin(), q_min.end()) - q_min.begin());
        TargetPolicySpec target{sid, std::vector<double>(n, n == 1 ? 1.0 : (1.0 - eta) / static_cast<double>(n - 1))};
        if (n > 1) target.masses[worst_atom] = eta;
        auto params = plan(mdp, soft, plain, target, options);
        all.insert(all.end(), params.begin(), params.end());
        result.targets.push_back(std::move(target));
    }
    apply_plan(result.mdp, all);

    result.report = verify_extension(mdp, result.mdp, result.targets, options.solver);
    result.report.j_plus = plain.V.count(mdp.start) ? plain.V.at(mdp.start) : 0.0;
    result.report.j_minus = worst.V.count(mdp.start) ? worst.V.at(mdp.start) : 0.0;

    // The MaxEnt-optimal policy of the extension, read on the original states.
    // Passing through s^mu and taking the loop branch re-enters s' with the
    // original plain value, so evaluating on the original MDP is exact for it.
    const auto soft_ext = soft_value_iteration(result.mdp, mdp.alpha, options.solver);
    PiecewisePolicy restricted;
    for (const auto& sid : mdp.nonterminal_ids()) restricted.masses[sid] = soft_ext.policy.masses.at(sid);
    result.report.j_maxent = policy_evaluation(mdp, restricted, mdp.alpha, false, options.solver).J;
    return result;
}

std::string report_to_json(const ExtensionReport& report) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json params = json::array();
    for (const auto& p : report.params)
        params.push_back({{"state", p.state_id}, {"atom", p.atom_id}, {"successor", p.successor},
                          {"mu_state", p.mu_state}, {"trap_state", p.trap_state}, {"w1", p.w1}, {"w2", p.w2},
                          {"r_loop", p.r_loop}, {"r_trap", p.r_trap}, {"v_target", p.v_target}, {"q1", p.q1},
                          {"q2", p.q2}});
    json doc = {{"kl_at_target", report.kl_at_target},
                {"plain_q_residual", report.plain_q_residual},
                {"soft_v_residual", report.soft_v_residual},
                {"trap_avoidance_margin", opt(report.trap_avoidance_margin)},
                {"greedy_sets_preserved", report.greedy_sets_preserved},
                {"j_plus", opt(report.j_plus)},
                {"j_minus", opt(report.j_minus)},
                {"j_maxent", opt(report.j_maxent)},
                {"certified", report.certifies()},
                {"params", params}};
    if (std::isinf(report.kl_at_target)) doc["kl_at_target"] = "inf";
    return doc.dump(2);
}

}  // namespace entropy_trap
