#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "entropy_trap/bifurcation.hpp"
#include "entropy_trap/mdp.hpp"

namespace entropy_trap {

// ---------------------------------------------------------------------------
// Toy MDP: s_0 chooses between a narrow-reward branch s_g and an all-negative,
// entropy-rich branch s_b.
// ---------------------------------------------------------------------------

struct ToyParams {
    double r_plus = 1.0;      // terminal reached from the narrow centre of s_g
    double r_g_minus = -20.0;  // terminal reached from the rest of s_g
    double r_b_minus = -1.0;   // terminal reached from any action at s_b
    double gamma = 0.99;
    double alpha = 1.0;
    TerminalTiming timing = TerminalTiming::on_entry;
};

namespace toy_ids {
inline constexpr const char* start = "s_0";
inline constexpr const char* good = "s_g";
inline constexpr const char* bad = "s_b";
inline constexpr const char* plus_terminal = "s_T+";
inline constexpr const char* good_minus_terminal = "s_gT-";
inline constexpr const char* bad_minus_terminal = "s_bT-";
inline constexpr const char* a1 = "A_1";
inline constexpr const char* a2 = "A_2";
}  // namespace toy_ids

Mdp build_toy(const ToyParams& params = {});

/// Toy with every terminal reward multiplied by alpha_new and temperature alpha_new.
Mdp alpha_scaled_toy(double alpha_new);

struct RewardInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double r) const { return lo < r && r < hi; }
};

/// Open interval of bad-terminal rewards for which the MaxEnt-optimal choice at
/// s_0 is the bad branch while the plain optimum stays on the good branch.
/// Expects the toy shape: the start state's first atom leads to the good
/// state and its second atom to the bad state. Throws Error("empty_interval").
RewardInterval misleading_reward_interval(const Mdp& toy, double alpha);

/// Pre-squash Gaussian of a tanh-squashed policy on [-1, 1].
struct GaussianPolicyParams {
    double mu = 0.0;
    double sigma = 1.0;
};

struct ToyGaussianValues {
    double q_a1 = 0.0;  // gamma V(s_g)
    double q_a2 = 0.0;  // gamma V(s_b)
};

/// Monte Carlo estimate of gamma E[Q - alpha log pi(a')] for squashed Gaussian
/// policies at s_g and s_b, with the toy's region Q values.
ToyGaussianValues toy_gaussian_values(const GaussianPolicyParams& at_good, const GaussianPolicyParams& at_bad,
                                      double alpha, double gamma, std::size_t n_samples, std::uint64_t seed,
                                      const ToyParams& toy = {});

// ---------------------------------------------------------------------------
// Obstacle2D: reach (3,0) from (0,0) around a wall at x = 2, |y| <= 2.
// ---------------------------------------------------------------------------

using Vec2 = std::array<double, 2>;

struct Obstacle2DConfig {
    Vec2 start{0.0, 0.0};
    Vec2 goal{3.0, 0.0};
    double goal_radius = 0.1;
    double wall_x = 2.0;
    double wall_half_height = 2.0;
    double action_bound = 3.0;
    Vec2 x_bounds{-1.0, 4.0};
    Vec2 y_bounds{-4.0, 4.0};
    double goal_reward = 500.0;
    double wall_reward = -200.0;
    int max_steps = 50;
};

enum class Obstacle2DOutcome { running, goal, wall, timeout };

struct Obstacle2DState {
    Vec2 position{0.0, 0.0};
    bool done = false;
    Obstacle2DOutcome outcome = Obstacle2DOutcome::running;
    int steps = 0;
};

struct Obstacle2DStep {
    Obstacle2DState next;
    double reward = 0.0;
};

Obstacle2DState obstacle2d_reset(const Obstacle2DConfig& config = {});

/// Straight-line move p -> clamp(p + a). Throws std::invalid_argument when the
/// episode is over or the action leaves [-bound, bound]^2.
Obstacle2DStep obstacle2d_step(const Obstacle2DState& state, const Vec2& action, const Obstacle2DConfig& config = {});

/// Closed-segment intersection of p -> q with the wall.
bool crosses_wall(const Vec2& p, const Vec2& q, const Obstacle2DConfig& config = {});

namespace obstacle_ids {
inline constexpr const char* goal = "goal";
inline constexpr const char* wall = "wall";
}  // namespace obstacle_ids

/// Cell id "c_<i>_<j>" for column i (x) and row j (y).
std::string obstacle_cell_id(int i, int j);
std::pair<int, int> obstacle_cell_of(const Vec2& p, int grid_n, const Obstacle2DConfig& config = {});

/// Tabular version of Obstacle2D: one state per grid cell, one unit-weight atom
/// per action, transitions computed from cell centres.
Mdp discretize_obstacle2d(int grid_n, const std::vector<Vec2>& actions, const Obstacle2DConfig& config = {});

/// 8 compass moves of length 3 along the axes and diagonals.
std::vector<Vec2> obstacle2d_compass_actions();

// ---------------------------------------------------------------------------
// Trap chains: L states, each with an "advance" and a "detour" atom.
// ---------------------------------------------------------------------------

struct TrapChain {
    Mdp original;
    Mdp extended;
    ExtensionReport report;
    std::uint64_t seed = 0;
};

inline constexpr double kTrapChainEta = 0.99;

/// Chain c0 -> ... -> c{L-1} -> end. Both atoms move forward; "advance" pays
/// good_reward and "detour" pays bad_reward. The seed fixes the atom order per
/// state. The extension is worst_case_transform with eta = 0.99.
TrapChain build_trap_chain(int length, double good_reward, double bad_reward, std::uint64_t seed,
                           const ExtensionOptions& options = {});

Mdp trap_chain_mdp(int length, double good_reward, double bad_reward, std::uint64_t seed);

}  // namespace entropy_trap
