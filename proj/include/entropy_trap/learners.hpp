#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "entropy_trap/compiled_mdp.hpp"
#include "entropy_trap/mdp.hpp"

namespace entropy_trap {

enum class LearnerMode { soft, plain, adaent };
enum class Selection { greedy_soft, greedy_plain, gated };

std::string to_string(LearnerMode mode);
LearnerMode learner_mode_from_string(const std::string& name);
std::string to_string(Selection selection);
Selection selection_from_string(const std::string& name);

struct Behavior {
    enum class Kind { boltzmann, epsilon_greedy };
    Kind kind = Kind::boltzmann;
    double epsilon = 0.05;  // exploration rate for epsilon_greedy
};

struct LearnerConfig {
    double alpha = 1.0;
    double lr = 0.2;
    bool anneal_lr = false;  // lr = 1 / (1 + visits) when set
    std::size_t episodes = 1000;
    std::size_t max_steps = 50;
    double epsilon_gate = 0.95;  // soft table used where cosine similarity > epsilon_gate
    Behavior behavior{};
    std::uint64_t seed = 0;
    std::size_t eval_every = 100;  // 0 disables periodic evaluation
    std::size_t eval_episodes = 10;
};

/// Soft and plain Q tables aligned with a CompiledMdp's state and atom order.
struct DualQTables {
    std::vector<std::string> state_ids;
    std::vector<std::vector<double>> q_soft;
    std::vector<std::vector<double>> q_plain;
    std::vector<std::vector<std::size_t>> visits;

    static DualQTables zeros(const CompiledMdp& model);
    double max_abs() const;
};

std::string tables_to_json(const DualQTables& tables);
DualQTables tables_from_json(const std::string& document);

struct TrainingLogRow {
    std::size_t episode = 0;
    LearnerMode mode = LearnerMode::soft;
    double eval_return = 0.0;
    double gate_soft_fraction = 0.0;  // share of updates since the last row whose behavior used q_soft
    double max_abs_q = 0.0;
};

struct TrainingResult {
    DualQTables tables;
    std::vector<TrainingLogRow> log;
};

/// Non-finite table entries abort training with this error.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& message) : Error("divergence", message) {}
};

/// Returns 1 when either norm is below 1e-12. Throws Error("length_mismatch").
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Sampled-transition Q-learning updating both tables on every step.
TrainingResult q_learning(const Mdp& mdp, const LearnerConfig& config, LearnerMode mode);

std::string training_log_csv(const std::vector<TrainingLogRow>& log);

struct EvalResult {
    double mean_return = 0.0;
    double stderr_return = 0.0;
    std::size_t episodes = 0;
    std::map<std::string, std::size_t> terminal_counts;  // episodes ending in each terminal
    std::size_t truncated = 0;                           // episodes cut at max_steps

    double reach_rate(const std::string& terminal) const;
};

/// Greedy rollouts (ties to the lowest atom index) from the start state.
/// Deterministic given the seed.
EvalResult evaluate_rollouts(const Mdp& mdp, const DualQTables& tables, Selection selection, std::size_t n_episodes,
                             std::uint64_t seed, double epsilon_gate = 0.95, std::size_t max_steps = 50);

}  // namespace entropy_trap
