#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entropy_trap/mdp.hpp"
#include "entropy_trap/solvers.hpp"

namespace entropy_trap {

/// Desired MaxEnt-optimal policy at one state, masses aligned with its atoms.
struct TargetPolicySpec {
    std::string state_id;
    std::vector<double> masses;  // strictly positive, sum to 1
};

/// Aligns an atom-id -> mass map with the state's atoms. Every atom must be named.
TargetPolicySpec make_target(const Mdp& mdp, const std::string& state_id, const std::map<std::string, double>& by_atom);
/// Parses "A_1:0.01,A_2:0.99".
TargetPolicySpec parse_target(const Mdp& mdp, const std::string& state_id, const std::string& spec);
std::string target_to_json(const Mdp& mdp, const TargetPolicySpec& target);
TargetPolicySpec target_from_json(const Mdp& mdp, const std::string& document);

/// Thrown when the bifurcation parameters cannot be realized.
class InfeasibleError : public Error {
public:
    explicit InfeasibleError(const std::string& message) : Error("infeasible", message) {}
};

/// Parameters of one inserted bifurcating state s^mu.
struct BifurcationParams {
    std::string state_id;    // targeted original state
    std::string atom_id;     // atom of the targeted state routed through s^mu
    std::string successor;   // original successor s'
    std::string mu_state;    // s^mu
    std::string trap_state;  // fresh terminal reached through the trap branch
    double w1 = 1.0;         // weight of the loop branch (back to s')
    double w2 = 1.0;         // weight of the trap branch
    double r_loop = 0.0;     // reward on the loop branch
    double r_trap = 0.0;     // terminal reward of trap_state
    double v_target = 0.0;   // soft value s^mu must take
    double q1 = 0.0;         // soft Q of the loop branch
    double q2 = 0.0;         // Q of the trap branch

    bool operator==(const BifurcationParams&) const = default;
};

/// Q_k = alpha log(p_k / w_k) + v_s: the Q landscape whose Boltzmann policy is the
/// target and whose soft value is v_s. Throws InfeasibleError on a zero mass.
std::vector<double> backward_q(std::span<const double> masses, double v_s, double alpha,
                               std::span<const double> weights);

struct ForwardSolution {
    double q2 = 0.0;
    double r_trap = 0.0;
};

/// Solves alpha log(w1 e^{q1/alpha} + w2 e^{q2/alpha}) = v_target for q2 (in log
/// space) and converts q2 to the trap terminal's reward under the given timing.
/// Throws InfeasibleError when e^{v/alpha} <= w1 e^{q1/alpha}.
ForwardSolution forward_solve(double v_target, double q1, double alpha, double gamma, double w1, double w2,
                              TerminalTiming timing);

struct ExtensionOptions {
    double w1 = 1.0;
    double w2_min = 1.0;
    double margin = 0.1;  // plain gap kept between the loop and trap branches
    std::size_t max_w1_halvings = 60;
    SolverOptions solver{};
};

struct Extension {
    Mdp mdp;
    std::vector<BifurcationParams> params;
};

/// Inserts one bifurcating state per atom of the target state so that the
/// extended MDP's MaxEnt-optimal policy there equals the target while plain Q
/// values of every original (state, atom) are unchanged.
Extension build_extension(const Mdp& mdp, const TargetPolicySpec& target, const ExtensionOptions& options = {});

struct ExtensionReport {
    double kl_at_target = 0.0;     // max over targets of KL(extended policy || target)
    double plain_q_residual = 0.0;
    double soft_v_residual = 0.0;
    std::optional<double> trap_avoidance_margin;  // empty when nothing was inserted
    bool greedy_sets_preserved = true;
    std::optional<double> j_plus;
    std::optional<double> j_minus;
    std::optional<double> j_maxent;
    std::vector<BifurcationParams> params;

    bool certifies(double kl_tol = 1e-6, double residual_tol = 1e-8) const;
};

ExtensionReport verify_extension(const Mdp& original, const Mdp& extended, const TargetPolicySpec& target,
                                 const SolverOptions& solver = {});
ExtensionReport verify_extension(const Mdp& original, const Mdp& extended,
                                 const std::vector<TargetPolicySpec>& targets, const SolverOptions& solver = {});

struct WorstCaseResult {
    Mdp mdp;
    std::vector<TargetPolicySpec> targets;
    ExtensionReport report;
};

/// Extends every non-terminal state toward mass eta on its plain-worst atom and
/// reports J^+, J^- and the plain return of the resulting MaxEnt-optimal policy.
WorstCaseResult worst_case_transform(const Mdp& mdp, double eta, const ExtensionOptions& options = {});

std::string report_to_json(const ExtensionReport& report);

}  // namespace entropy_trap
