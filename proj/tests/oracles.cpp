#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace oracle {

namespace {

double terminal_part(const Mdp& mdp, const std::string& id) {
    const auto& st = mdp.states.at(id);
    const double scale = mdp.terminal_timing == entropy_trap::TerminalTiming::on_entry ? 1.0 : mdp.gamma;
    return scale * st.terminal_reward;
}

double atom_q(const Mdp& mdp, const entropy_trap::ActionAtom& atom, const std::map<std::string, double>& V) {
    double q = atom.reward;
    for (const auto& [to, p] : atom.next) {
        if (mdp.states.at(to).terminal)
            q += p * terminal_part(mdp, to);
        else
            q += p * mdp.gamma * V.at(to);
    }
    return q;
}

std::vector<std::string> live_states(const Mdp& mdp) {
    std::vector<std::string> ids;
    for (const auto& [id, st] : mdp.states)
        if (!st.terminal) ids.push_back(id);
    return ids;
}

}  // namespace

SoftValues naive_soft_vi(const Mdp& mdp, double alpha, double tol, int max_iter) {
    SoftValues out;
    for (const auto& id : live_states(mdp)) out.V[id] = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        std::map<std::string, double> next;
        double change = 0.0;
        for (const auto& [id, v] : out.V) {
            double z = 0.0;
            for (const auto& atom : mdp.states.at(id).atoms) z += atom.weight * std::exp(atom_q(mdp, atom, out.V) / alpha);
            next[id] = alpha * std::log(z);
            change = std::max(change, std::abs(next[id] - v));
        }
        out.V = next;
        if (change < tol) break;
    }
    for (const auto& [id, v] : out.V) {
        std::vector<double> q;
        for (const auto& atom : mdp.states.at(id).atoms) q.push_back(atom_q(mdp, atom, out.V));
        out.Q[id] = q;
    }
    return out;
}

std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-300) throw std::runtime_error("singular system");
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

std::map<std::string, double> stochastic_policy_values(const Mdp& mdp,
                                                       const std::map<std::string, std::vector<double>>& masses,
                                                       double alpha, bool with_entropy) {
    const auto ids = live_states(mdp);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
    const std::size_t n = ids.size();
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    std::vector<double> b(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        a[i][i] = 1.0;
        const auto& atoms = mdp.states.at(ids[i]).atoms;
        const auto& p = masses.at(ids[i]);
        for (std::size_t k = 0; k < atoms.size(); ++k) {
            if (p[k] == 0.0) continue;
            b[i] += p[k] * atoms[k].reward;
            if (with_entropy) b[i] -= alpha * p[k] * std::log(p[k] / atoms[k].weight);
            for (const auto& [to, prob] : atoms[k].next) {
                if (mdp.states.at(to).terminal)
                    b[i] += p[k] * prob * terminal_part(mdp, to);
                else
                    a[i][index.at(to)] -= p[k] * prob * mdp.gamma;
            }
        }
    }
    const auto x = solve_linear(a, b);
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < n; ++i) out[ids[i]] = x[i];
    return out;
}

std::map<std::string, double> deterministic_policy_values(const Mdp& mdp, const std::map<std::string, std::size_t>& choice) {
    std::map<std::string, std::vector<double>> masses;
    for (const auto& id : live_states(mdp)) {
        std::vector<double> p(mdp.states.at(id).atoms.size(), 0.0);
        p[choice.at(id)] = 1.0;
        masses[id] = p;
    }
    return stochastic_policy_values(mdp, masses, 0.0, false);
}

Enumeration enumerate_policies(const Mdp& mdp, std::size_t max_policies) {
    const auto ids = live_states(mdp);
    std::size_t total = 1;
    for (const auto& id : ids) {
        total *= mdp.states.at(id).atoms.size();
        if (total > max_policies) throw std::runtime_error("too many policies to enumerate");
    }
    Enumeration e;
    e.policies = total;
    std::map<std::string, std::size_t> choice;
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t rest = code;
        for (const auto& id : ids) {
            const auto n = mdp.states.at(id).atoms.size();
            choice[id] = rest % n;
            rest /= n;
        }
        const auto v = deterministic_policy_values(mdp, choice);
        for (const auto& [id, x] : v) {
            if (code == 0 || x > e.v_best[id]) e.v_best[id] = x;
            if (code == 0 || x < e.v_worst[id]) e.v_worst[id] = x;
        }
    }
    const bool start_terminal = mdp.states.at(mdp.start).terminal;
    e.j_best = start_terminal ? 0.0 : e.v_best.at(mdp.start);
    e.j_worst = start_terminal ? 0.0 : e.v_worst.at(mdp.start);
    return e;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double squashed_center_probability(double mu, double sigma, double c) {
    const double edge = std::atanh(c);
    return normal_cdf((edge - mu) / sigma) - normal_cdf((-edge - mu) / sigma);
}

Mdp random_mdp(std::uint64_t seed, const RandomMdpOptions& options) {
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    const int total = pick(3, options.max_states);
    const int terminals = pick(1, std::min(2, total - 2));
    const int live = total - terminals;

    Mdp mdp;
    mdp.gamma = uniform(0.5, 0.95);
    mdp.alpha = uniform(0.3, 2.0);
    mdp.terminal_timing = pick(0, 1) ? entropy_trap::TerminalTiming::on_entry : entropy_trap::TerminalTiming::discounted;
    mdp.start = "s0";

    std::vector<std::string> all;
    for (int i = 0; i < live; ++i) all.push_back("s" + std::to_string(i));
    for (int i = 0; i < terminals; ++i) all.push_back("t" + std::to_string(i));
    for (int i = 0; i < terminals; ++i)
        mdp.states["t" + std::to_string(i)] = entropy_trap::StateSpec{true, uniform(-2.0, 2.0), {}};

    for (int i = 0; i < live; ++i) {
        entropy_trap::StateSpec st;
        const int n_atoms = pick(1, options.max_atoms);
        double lo = -1.0;
        for (int k = 0; k < n_atoms; ++k) {
            entropy_trap::ActionAtom a;
            a.id = "a" + std::to_string(k);
            a.lo = lo;
            a.hi = lo + uniform(0.1, 1.5);
            a.weight = a.hi - a.lo;
            lo = a.hi;
            a.reward = uniform(-1.0, 1.0);
            if (options.deterministic) {
                a.next[all[static_cast<std::size_t>(pick(0, total - 1))]] = 1.0;
            } else {
                const auto x = all[static_cast<std::size_t>(pick(0, total - 1))];
                const auto y = all[static_cast<std::size_t>(pick(0, total - 1))];
                const double p = uniform(0.1, 0.9);
                a.next[x] += p;
                a.next[y] += 1.0 - p;
            }
            st.atoms.push_back(a);
        }
        mdp.states["s" + std::to_string(i)] = st;
    }
    return mdp;
}

}  // namespace oracle
