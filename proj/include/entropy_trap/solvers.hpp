#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "entropy_trap/mdp.hpp"

namespace entropy_trap {

struct SolverOptions {
    double tol = 1e-12;  // sup-norm change in V between sweeps
    std::size_t max_iter = 100000;
};

/// alpha * log sum_k w_k exp(q_k / alpha), evaluated with a max shift and
/// compensated summation. Throws std::invalid_argument on empty input.
double soft_state_value(std::span<const double> weights, std::span<const double> q, double alpha);

/// Masses p_k = w_k exp(q_k / alpha) / Z.
std::vector<double> boltzmann_policy(std::span<const double> weights, std::span<const double> q, double alpha);

/// Differential entropy of the piecewise-constant density with masses p over
/// atoms of the given weights: -sum p_k log(p_k / w_k).
double piecewise_entropy(std::span<const double> masses, std::span<const double> weights);

/// Returned by kl_divergence when q_k = 0 while p_k > 0.
inline constexpr double kInfiniteKl = std::numeric_limits<double>::infinity();

/// Mass-based KL(p || q). Throws Error("length_mismatch") on misaligned input.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct SoftSolution {
    double alpha = 1.0;
    std::map<std::string, double> V;               // non-terminal states
    std::map<std::string, std::vector<double>> Q;  // aligned with atoms
    PiecewisePolicy policy;                        // Boltzmann policy of Q
    double residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> residual_history;

    double q(const Mdp& mdp, const std::string& state, const std::string& atom) const;
};

struct PlainSolution {
    std::map<std::string, double> V;
    std::map<std::string, std::vector<double>> Q;
    /// Atoms within tie_tol of the optimum, in atom order.
    std::map<std::string, std::vector<std::size_t>> greedy;
    double residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> residual_history;

    double q(const Mdp& mdp, const std::string& state, const std::string& atom) const;
};

/// Synchronous (Jacobi) soft Bellman iteration from V = 0.
SoftSolution soft_value_iteration(const Mdp& mdp, double alpha, const SolverOptions& options = {});
inline SoftSolution soft_value_iteration(const Mdp& mdp) { return soft_value_iteration(mdp, mdp.alpha); }

enum class Objective { maximize, minimize };

/// Hard-max Bellman iteration. Objective::minimize gives the worst-policy values.
PlainSolution plain_value_iteration(const Mdp& mdp, const SolverOptions& options = {}, double tie_tol = 1e-9,
                                    Objective objective = Objective::maximize);

struct PolicyEvaluation {
    std::map<std::string, double> V;
    double J = 0.0;  // V at the start state
    double residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Fixed point of V(s) = sum_k p_k Q(s,k) (+ alpha H(pi(.|s)) when with_entropy).
/// Throws ValidationError when the policy is not aligned with the MDP.
PolicyEvaluation policy_evaluation(const Mdp& mdp, const PiecewisePolicy& policy, double alpha, bool with_entropy,
                                   const SolverOptions& options = {});

}  // namespace entropy_trap
