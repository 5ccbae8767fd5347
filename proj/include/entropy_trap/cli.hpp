#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace entropy_trap {

inline constexpr const char* kVersion = "0.1.0";

/// Every option any subcommand understands. Unused fields keep their defaults.
struct RunConfig {
    std::string command;
    std::vector<std::string> argv;
    std::string out_dir;

    // inputs
    std::string mdp_path;
    std::string env;  // toy | trap-chain | trap-chain-extended | obstacle2d
    int length = 5;
    int grid = 20;
    std::string state;
    std::string target;
    std::string target_file;
    std::string original_path;
    std::string extended_path;
    std::string tables_path;

    // numerics
    std::optional<double> alpha;
    std::optional<double> gamma_override;
    double tol = 1e-12;
    double eta = 0.99;

    // learning
    std::vector<std::uint64_t> seeds{0};
    std::size_t episodes = 1000;
    double lr = 0.2;
    bool anneal_lr = false;
    double epsilon_gate = 0.95;
    std::string mode = "soft";
    std::string behavior = "boltzmann";
    double epsilon_explore = 0.05;
    std::size_t max_steps = 50;
    std::size_t eval_every = 100;
    std::size_t eval_episodes = 10;
    std::string selection;  // eval; defaults from mode

    // gauss-toy
    double mu_good = 0.013, sigma_good = 0.027;
    double mu_bad = 0.016, sigma_bad = 0.877;
    std::size_t samples = 1000000;

    std::string to_json() const;
};

/// argv without the program name. Returns 0 on success, 2 on validation or
/// feasibility failures (JSON error document on stderr), 1 on internal errors.
int run_command(const std::vector<std::string>& argv);

}  // namespace entropy_trap
