#include "entropy_trap/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "entropy_trap/compiled_mdp.hpp"

namespace entropy_trap {

namespace {

// Neumaier summation.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            carry_ += (sum_ - t) + x;
        else
            carry_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

void check_atoms(std::span<const double> weights, std::span<const double> q, double alpha) {
    if (weights.empty()) throw std::invalid_argument("empty atom list");
    if (weights.size() != q.size()) throw Error("length_mismatch", "weights and Q differ in length");
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
}

double backup(const CompiledMdp::Atom& atom, const std::vector<double>& V, double gamma) {
    double cont = 0.0;
    for (const auto& s : atom.continuing) cont += s.prob * V[static_cast<std::size_t>(s.state)];
    return atom.immediate + gamma * cont;
}

std::vector<double> weights_of(const CompiledMdp::State& state) {
    std::vector<double> w;
    w.reserve(state.atoms.size());
    for (const auto& a : state.atoms) w.push_back(a.weight);
    return w;
}

std::vector<double> q_of(const CompiledMdp::State& state, const std::vector<double>& V, double gamma) {
    std::vector<double> q;
    q.reserve(state.atoms.size());
    for (const auto& a : state.atoms) q.push_back(backup(a, V, gamma));
    return q;
}

double lookup_q(const std::map<std::string, std::vector<double>>& Q, const Mdp& mdp, const std::string& state,
                const std::string& atom) {
    auto it = Q.find(state);
    if (it == Q.end()) throw LookupError("no Q values for state '" + state + "'");
    return it->second.at(mdp.atom_index(state, atom));
}

}  // namespace

double soft_state_value(std::span<const double> weights, std::span<const double> q, double alpha) {
    check_atoms(weights, q, alpha);
    const double shift = *std::max_element(q.begin(), q.end());
    CompensatedSum z;
    for (std::size_t k = 0; k < q.size(); ++k) z.add(weights[k] * std::exp((q[k] - shift) / alpha));
    return shift + alpha * std::log(z.value());
}

std::vector<double> boltzmann_policy(std::span<const double> weights, std::span<const double> q, double alpha) {
    check_atoms(weights, q, alpha);
    const double shift = *std::max_element(q.begin(), q.end());
    std::vector<double> p(q.size());
    CompensatedSum z;
    for (std::size_t k = 0; k < q.size(); ++k) {
        p[k] = weights[k] * std::exp((q[k] - shift) / alpha);
        z.add(p[k]);
    }
    const double total = z.value();
    for (auto& x : p) x /= total;
    return p;
}

double piecewise_entropy(std::span<const double> masses, std::span<const double> weights) {
    if (masses.size() != weights.size()) throw Error("length_mismatch", "masses and weights differ in length");
    double h = 0.0;
    for (std::size_t k = 0; k < masses.size(); ++k)
        if (masses[k] > 0.0) h -= masses[k] * std::log(masses[k] / weights[k]);
    return h;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw Error("length_mismatch", "KL arguments differ in length");
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= 0.0) continue;
        if (q[k] <= 0.0) return kInfiniteKl;
        kl += p[k] * std::log(p[k] / q[k]);
    }
    return std::max(kl, 0.0);
}

double SoftSolution::q(const Mdp& mdp, const std::string& state, const std::string& atom) const {
    return lookup_q(Q, mdp, state, atom);
}

double PlainSolution::q(const Mdp& mdp, const std::string& state, const std::string& atom) const {
    return lookup_q(Q, mdp, state, atom);
}

SoftSolution soft_value_iteration(const Mdp& mdp, double alpha, const SolverOptions& options) {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    const CompiledMdp model(mdp);
    const std::size_t n = model.size();
    std::vector<std::vector<double>> weights(n);
    for (std::size_t s = 0; s < n; ++s) weights[s] = weights_of(model.states[s]);

    SoftSolution sol;
    sol.alpha = alpha;
    std::vector<double> V(n, 0.0), next(n, 0.0);
    while (sol.iterations < options.max_iter) {
        double residual = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& st = model.states[s];
            if (st.terminal) continue;
            next[s] = soft_state_value(weights[s], q_of(st, V, model.gamma), alpha);
            residual = std::max(residual, std::abs(next[s] - V[s]));
        }
        V.swap(next);
        ++sol.iterations;
        sol.residual = residual;
        sol.residual_history.push_back(residual);
        if (!std::isfinite(residual)) break;
        if (residual < options.tol) {
            sol.converged = true;
            break;
        }
    }

    for (std::size_t s = 0; s < n; ++s) {
        const auto& st = model.states[s];
        if (st.terminal) continue;
        auto q = q_of(st, V, model.gamma);
        sol.V[st.id] = V[s];
        sol.policy.masses[st.id] = boltzmann_policy(weights[s], q, alpha);
        sol.Q[st.id] = std::move(q);
    }
    return sol;
}

PlainSolution plain_value_iteration(const Mdp& mdp, const SolverOptions& options, double tie_tol,
                                    Objective objective) {
    const CompiledMdp model(mdp);
    const std::size_t n = model.size();
    const bool maximize = objective == Objective::maximize;
    auto best = [maximize](const std::vector<double>& q) {
        return maximize ? *std::max_element(q.begin(), q.end()) : *std::min_element(q.begin(), q.end());
    };

    PlainSolution sol;
    std::vector<double> V(n, 0.0), next(n, 0.0);
    while (sol.iterations < options.max_iter) {
        double residual = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& st = model.states[s];
            if (st.terminal) continue;
            next[s] = best(q_of(st, V, model.gamma));
            residual = std::max(residual, std::abs(next[s] - V[s]));
        }
        V.swap(next);
        ++sol.iterations;
        sol.residual = residual;
        sol.residual_history.push_back(residual);
        if (!std::isfinite(residual)) break;
        if (residual < options.tol) {
            sol.converged = true;
            break;
        }
    }

    for (std::size_t s = 0; s < n; ++s) {
        const auto& st = model.states[s];
        if (st.terminal) continue;
        auto q = q_of(st, V, model.gamma);
        const double v = best(q);
        std::vector<std::size_t> ties;
        for (std::size_t k = 0; k < q.size(); ++k)
            if (maximize ? q[k] >= v - tie_tol : q[k] <= v + tie_tol) ties.push_back(k);
        sol.V[st.id] = v;
        sol.greedy[st.id] = std::move(ties);
        sol.Q[st.id] = std::move(q);
    }
    return sol;
}

PolicyEvaluation policy_evaluation(const Mdp& mdp, const PiecewisePolicy& policy, double alpha, bool with_entropy,
                                   const SolverOptions& options) {
    if (auto report = validate_policy(mdp, policy); !report.ok()) throw ValidationError(report);
    const CompiledMdp model(mdp);
    const std::size_t n = model.size();

    std::vector<std::vector<double>> masses(n);
    std::vector<double> bonus(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const auto& st = model.states[s];
        if (st.terminal) continue;
        masses[s] = policy.masses.at(st.id);
        if (with_entropy) bonus[s] = alpha * piecewise_entropy(masses[s], weights_of(st));
    }

    PolicyEvaluation eval;
    std::vector<double> V(n, 0.0), next(n, 0.0);
    while (eval.iterations < options.max_iter) {
        double residual = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& st = model.states[s];
            if (st.terminal) continue;
            double v = bonus[s];
            for (std::size_t k = 0; k < st.atoms.size(); ++k)
                if (masses[s][k] > 0.0) v += masses[s][k] * backup(st.atoms[k], V, model.gamma);
            next[s] = v;
            residual = std::max(residual, std::abs(next[s] - V[s]));
        }
        V.swap(next);
        ++eval.iterations;
        eval.residual = residual;
        if (!std::isfinite(residual)) break;
        if (residual < options.tol) {
            eval.converged = true;
            break;
        }
    }
    for (std::size_t s = 0; s < n; ++s)
        if (!model.states[s].terminal) eval.V[model.states[s].id] = V[s];
    eval.J = model.states[static_cast<std::size_t>(model.start)].terminal ? 0.0 : V[static_cast<std::size_t>(model.start)];
    return eval;
}

}  // namespace entropy_trap
