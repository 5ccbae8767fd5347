#include "entropy_trap/environments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "entropy_trap/solvers.hpp"

namespace entropy_trap {

Mdp build_toy(const ToyParams& params) {
    using namespace toy_ids;
    Mdp mdp;
    mdp.gamma = params.gamma;
    mdp.alpha = params.alpha;
    mdp.terminal_timing = params.timing;
    mdp.start = start;

    StateSpec s0;
    s0.atoms.push_back({a1, -1.0, 0.0, 1.0, 0.0, {{good, 1.0}}});
    s0.atoms.push_back({a2, 0.0, 1.0, 1.0, 0.0, {{bad, 1.0}}});

    // [-1,-0.1) and (0.1,1] are two atoms so the action set stays a union of intervals.
    StateSpec sg;
    sg.atoms.push_back({"left", -1.0, -0.1, 0.9, 0.0, {{good_minus_terminal, 1.0}}});
    sg.atoms.push_back({"center", -0.1, 0.1, 0.2, 0.0, {{plus_terminal, 1.0}}});
    sg.atoms.push_back({"right", 0.1, 1.0, 0.9, 0.0, {{good_minus_terminal, 1.0}}});

    StateSpec sb;
    sb.atoms.push_back({"all", -1.0, 1.0, 2.0, 0.0, {{bad_minus_terminal, 1.0}}});

    mdp.states[start] = s0;
    mdp.states[good] = sg;
    mdp.states[bad] = sb;
    mdp.states[plus_terminal] = StateSpec{true, params.r_plus, {}};
    mdp.states[good_minus_terminal] = StateSpec{true, params.r_g_minus, {}};
    mdp.states[bad_minus_terminal] = StateSpec{true, params.r_b_minus, {}};
    return mdp;
}

Mdp alpha_scaled_toy(double alpha_new) {
    if (!(alpha_new > 0.0)) throw std::invalid_argument("alpha must be positive");
    ToyParams p;
    p.r_plus *= alpha_new;
    p.r_g_minus *= alpha_new;
    p.r_b_minus *= alpha_new;
    p.alpha = alpha_new;
    return build_toy(p);
}

RewardInterval misleading_reward_interval(const Mdp& toy, double alpha) {
    const auto& start = toy.state(toy.start);
    if (start.atoms.size() != 2 || start.atoms[0].next.size() != 1 || start.atoms[1].next.size() != 1)
        throw Error("not_toy_shaped", "start state must have two deterministic atoms");
    const std::string good = start.atoms[0].next.begin()->first;
    const std::string bad = start.atoms[1].next.begin()->first;

    const auto& bad_state = toy.state(bad);
    if (bad_state.terminal || bad_state.atoms.empty())
        throw Error("not_toy_shaped", "bad branch must be a non-terminal state");
    double bad_weight = 0.0;
    const double bad_reward = bad_state.atoms.front().reward;
    for (const auto& a : bad_state.atoms) {
        if (a.next != bad_state.atoms.front().next || a.next.size() != 1 || !toy.state(a.next.begin()->first).terminal ||
            a.reward != bad_reward)
            throw Error("not_toy_shaped", "every bad-branch atom must reach the same terminal with the same reward");
        bad_weight += a.weight;
    }

    const auto soft = soft_value_iteration(toy, alpha);
    const auto plain = plain_value_iteration(toy);
    // Terminal reward r enters Q as scale * r.
    const double scale = toy.terminal_timing == TerminalTiming::on_entry ? 1.0 : toy.gamma;
    const double shift = (start.atoms[0].reward - start.atoms[1].reward) / toy.gamma - bad_reward;

    RewardInterval out;
    out.lo = (soft.V.at(good) + shift - alpha * std::log(bad_weight)) / scale;
    out.hi = (plain.V.at(good) + shift) / scale;
    if (!(out.lo < out.hi))
        throw Error("empty_interval", fmt::format("misleading interval ({:.17g}, {:.17g}) is empty", out.lo, out.hi));
    return out;
}

namespace {

// log(1 - tanh(u)^2) without cancellation for large |u|.
double log_tanh_jacobian(double u) {
    const double x = -2.0 * u;
    const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return 2.0 * (std::numbers::ln2 - u - softplus);
}

template <class QOf>
double squashed_soft_value(const GaussianPolicyParams& g, double alpha, std::size_t n, std::mt19937_64& rng,
                           QOf q_of) {
    if (!(g.sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    std::normal_distribution<double> normal(0.0, 1.0);
    const double log_norm = std::log(g.sigma) + 0.5 * std::log(2.0 * std::numbers::pi);
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = normal(rng);
        const double u = g.mu + g.sigma * z;
        const double log_gauss = -0.5 * z * z - log_norm;
        // log pi(a') of the squashed action = log N(u) - log(1 - tanh^2 u)
        const double log_pi = log_gauss - log_tanh_jacobian(u);
        total += q_of(std::tanh(u)) - (alpha > 0.0 ? alpha * log_pi : 0.0);
    }
    return static_cast<double>(total / static_cast<long double>(n));
}

}  // namespace

ToyGaussianValues toy_gaussian_values(const GaussianPolicyParams& at_good, const GaussianPolicyParams& at_bad,
                                      double alpha, double gamma, std::size_t n_samples, std::uint64_t seed,
                                      const ToyParams& toy) {
    if (n_samples == 0) throw std::invalid_argument("n_samples must be positive");
    if (alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
    const double scale = toy.timing == TerminalTiming::on_entry ? 1.0 : gamma;
    const double q_plus = scale * toy.r_plus;
    const double q_good_minus = scale * toy.r_g_minus;
    const double q_bad = scale * toy.r_b_minus;

    std::mt19937_64 rng(seed);
    ToyGaussianValues out;
    out.q_a1 = gamma * squashed_soft_value(at_good, alpha, n_samples, rng, [&](double a) {
                   return std::abs(a) <= 0.1 ? q_plus : q_good_minus;
               });
    out.q_a2 = gamma * squashed_soft_value(at_bad, alpha, n_samples, rng, [&](double) { return q_bad; });
    return out;
}

// ---------------------------------------------------------------------------

Obstacle2DState obstacle2d_reset(const Obstacle2DConfig& config) {
    Obstacle2DState s;
    s.position = config.start;
    return s;
}

bool crosses_wall(const Vec2& p, const Vec2& q, const Obstacle2DConfig& config) {
    // Canonical endpoint order keeps the test symmetric in floating point.
    Vec2 a = p, b = q;
    if (b < a) std::swap(a, b);
    const double wx = config.wall_x, h = config.wall_half_height;
    if (a[0] == b[0]) {
        if (a[0] != wx) return false;
        return std::min(a[1], b[1]) <= h && std::max(a[1], b[1]) >= -h;
    }
    if (wx < a[0] || wx > b[0]) return false;
    const double t = (wx - a[0]) / (b[0] - a[0]);
    const double y = a[1] + t * (b[1] - a[1]);
    return std::abs(y) <= h;
}

namespace {
double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }
}  // namespace

Obstacle2DStep obstacle2d_step(const Obstacle2DState& state, const Vec2& action, const Obstacle2DConfig& config) {
    if (state.done) throw std::invalid_argument("obstacle2d_step on a finished episode");
    for (double a : action)
        if (!(std::abs(a) <= config.action_bound))
            throw std::invalid_argument(fmt::format("action component {} outside [-{}, {}]", a, config.action_bound,
                                                    config.action_bound));

    const Vec2& p = state.position;
    const Vec2 q{std::clamp(p[0] + action[0], config.x_bounds[0], config.x_bounds[1]),
                 std::clamp(p[1] + action[1], config.y_bounds[0], config.y_bounds[1])};

    Obstacle2DStep out;
    out.next.position = q;
    out.next.steps = state.steps + 1;
    if (crosses_wall(p, q, config)) {
        out.reward = config.wall_reward;
        out.next.outcome = Obstacle2DOutcome::wall;
    } else if (distance(q, config.goal) <= config.goal_radius) {
        out.reward = config.goal_reward;
        out.next.outcome = Obstacle2DOutcome::goal;
    } else {
        out.reward = distance(p, config.goal) - distance(q, config.goal);
        if (out.next.steps >= config.max_steps) out.next.outcome = Obstacle2DOutcome::timeout;
    }
    out.next.done = out.next.outcome != Obstacle2DOutcome::running;
    return out;
}

std::string obstacle_cell_id(int i, int j) { return fmt::format("c_{}_{}", i, j); }

std::pair<int, int> obstacle_cell_of(const Vec2& p, int grid_n, const Obstacle2DConfig& config) {
    const double dx = (config.x_bounds[1] - config.x_bounds[0]) / grid_n;
    const double dy = (config.y_bounds[1] - config.y_bounds[0]) / grid_n;
    // Points on a cell boundary belong to the upper cell; the nudge absorbs
    // rounding in centre + move computations.
    auto index = [grid_n](double offset, double size) {
        const int i = static_cast<int>(std::floor(offset / size + 1e-9));
        return std::clamp(i, 0, grid_n - 1);
    };
    return {index(p[0] - config.x_bounds[0], dx), index(p[1] - config.y_bounds[0], dy)};
}

Mdp discretize_obstacle2d(int grid_n, const std::vector<Vec2>& actions, const Obstacle2DConfig& config) {
    if (grid_n < 4) throw std::invalid_argument("grid_n must be at least 4");
    if (actions.empty()) throw std::invalid_argument("action set is empty");
    for (const auto& a : actions)
        if (std::abs(a[0]) > config.action_bound || std::abs(a[1]) > config.action_bound)
            throw std::invalid_argument("action outside bounds");

    const double dx = (config.x_bounds[1] - config.x_bounds[0]) / grid_n;
    const double dy = (config.y_bounds[1] - config.y_bounds[0]) / grid_n;
    const auto goal_cell = obstacle_cell_of(config.goal, grid_n, config);

    Mdp mdp;
    mdp.gamma = 0.99;
    mdp.alpha = 1.0;
    mdp.terminal_timing = TerminalTiming::on_entry;
    mdp.states[obstacle_ids::goal] = StateSpec{true, 0.0, {}};
    mdp.states[obstacle_ids::wall] = StateSpec{true, 0.0, {}};

    for (int i = 0; i < grid_n; ++i) {
        for (int j = 0; j < grid_n; ++j) {
            Obstacle2DState from;
            from.position = {config.x_bounds[0] + (i + 0.5) * dx, config.y_bounds[0] + (j + 0.5) * dy};
            StateSpec cell;
            for (std::size_t m = 0; m < actions.size(); ++m) {
                const auto step = obstacle2d_step(from, actions[m], config);
                ActionAtom atom;
                atom.id = fmt::format("a{}", m);
                atom.lo = static_cast<double>(m);
                atom.hi = static_cast<double>(m + 1);
                atom.weight = 1.0;
                atom.reward = step.reward;
                std::string target;
                if (step.next.outcome == Obstacle2DOutcome::wall) {
                    target = obstacle_ids::wall;
                } else if (step.next.outcome == Obstacle2DOutcome::goal) {
                    target = obstacle_ids::goal;
                } else {
                    const auto landing = obstacle_cell_of(step.next.position, grid_n, config);
                    if (landing == goal_cell) {
                        target = obstacle_ids::goal;
                        atom.reward = config.goal_reward;
                    } else {
                        target = obstacle_cell_id(landing.first, landing.second);
                    }
                }
                atom.next = {{target, 1.0}};
                cell.atoms.push_back(std::move(atom));
            }
            mdp.states[obstacle_cell_id(i, j)] = std::move(cell);
        }
    }
    const auto start = obstacle_cell_of(config.start, grid_n, config);
    mdp.start = obstacle_cell_id(start.first, start.second);
    return mdp;
}

std::vector<Vec2> obstacle2d_compass_actions() {
    return {{3.0, 0.0}, {-3.0, 0.0}, {0.0, 3.0}, {0.0, -3.0}, {3.0, 3.0}, {3.0, -3.0}, {-3.0, 3.0}, {-3.0, -3.0}};
}

// ---------------------------------------------------------------------------

Mdp trap_chain_mdp(int length, double good_reward, double bad_reward, std::uint64_t seed) {
    if (length < 2) throw std::invalid_argument("trap chain needs length >= 2");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution flip(0.5);

    Mdp mdp;
    mdp.gamma = 0.99;
    mdp.alpha = 1.0;
    mdp.terminal_timing = TerminalTiming::on_entry;
    mdp.start = "c0";
    mdp.states["end"] = StateSpec{true, 0.0, {}};
    for (int i = 0; i < length; ++i) {
        const std::string next = i + 1 < length ? fmt::format("c{}", i + 1) : "end";
        ActionAtom advance{"advance", -1.0, 0.0, 1.0, good_reward, {{next, 1.0}}};
        ActionAtom detour{"detour", 0.0, 1.0, 1.0, bad_reward, {{next, 1.0}}};
        if (flip(rng)) {
            std::swap(advance.lo, detour.lo);
            std::swap(advance.hi, detour.hi);
            std::swap(advance, detour);
        }
        StateSpec s;
        s.atoms = {advance, detour};
        mdp.states[fmt::format("c{}", i)] = std::move(s);
    }
    return mdp;
}

TrapChain build_trap_chain(int length, double good_reward, double bad_reward, std::uint64_t seed,
                           const ExtensionOptions& options) {
    TrapChain chain;
    chain.seed = seed;
    chain.original = trap_chain_mdp(length, good_reward, bad_reward, seed);
    auto worst = worst_case_transform(chain.original, kTrapChainEta, options);
    chain.extended = std::move(worst.mdp);
    chain.report = std::move(worst.report);
    return chain;
}

}  // namespace entropy_trap
