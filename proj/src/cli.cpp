#include "entropy_trap/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "entropy_trap/bifurcation.hpp"
#include "entropy_trap/compiled_mdp.hpp"
#include "entropy_trap/environments.hpp"
#include "entropy_trap/landscape.hpp"
#include "entropy_trap/learners.hpp"
#include "entropy_trap/solvers.hpp"
#include "json.hpp"

namespace entropy_trap {

namespace fs = std::filesystem;
using nlohmann::json;

std::string RunConfig::to_json() const {
    json j{{"command", command},
           {"argv", argv},
           {"out_dir", out_dir},
           {"mdp", mdp_path},
           {"env", env},
           {"length", length},
           {"grid", grid},
           {"state", state},
           {"target", target},
           {"target_file", target_file},
           {"original", original_path},
           {"extended", extended_path},
           {"tables", tables_path},
           {"alpha", alpha ? json(*alpha) : json(nullptr)},
           {"gamma_override", gamma_override ? json(*gamma_override) : json(nullptr)},
           {"tol", tol},
           {"eta", eta},
           {"seeds", seeds},
           {"episodes", episodes},
           {"lr", lr},
           {"anneal_lr", anneal_lr},
           {"epsilon_gate", epsilon_gate},
           {"mode", mode},
           {"behavior", behavior},
           {"epsilon_explore", epsilon_explore},
           {"max_steps", max_steps},
           {"eval_every", eval_every},
           {"eval_episodes", eval_episodes},
           {"selection", selection},
           {"mu_good", mu_good},
           {"sigma_good", sigma_good},
           {"mu_bad", mu_bad},
           {"sigma_bad", sigma_bad},
           {"samples", samples}};
    return j.dump(2);
}

namespace {

// Failure carrying an optional machine-readable payload for the error document.
struct CommandFailure {
    std::string code;
    std::string message;
    json detail;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("unreadable_input", "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("unwritable_output", "cannot write '" + path.string() + "'");
    out << content;
}

class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}
    void write(const std::string& name, const std::string& content) {
        write_file(dir_ / name, content);
        files_.push_back(name);
    }
    const std::vector<std::string>& files() const { return files_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::vector<std::string> files_;
};

SolverOptions solver_options(const RunConfig& c) {
    SolverOptions o;
    o.tol = c.tol;
    return o;
}

Mdp build_env(const RunConfig& c) {
    const std::uint64_t seed = c.seeds.empty() ? 0 : c.seeds.front();
    if (c.env == "toy") return build_toy();
    if (c.env == "trap-chain") return trap_chain_mdp(c.length, 1.0, -1.0, seed);
    if (c.env == "trap-chain-extended") return build_trap_chain(c.length, 1.0, -1.0, seed).extended;
    if (c.env == "obstacle2d") return discretize_obstacle2d(c.grid, obstacle2d_compass_actions());
    throw ParseError("unknown env '" + c.env + "' (toy, trap-chain, trap-chain-extended, obstacle2d)");
}

// Loads --mdp or builds --env, then applies --alpha and --gamma-override.
Mdp input_mdp(const RunConfig& c) {
    if (c.mdp_path.empty() == c.env.empty()) throw ParseError("give exactly one of --mdp and --env");
    Mdp mdp = c.mdp_path.empty() ? build_env(c) : load_mdp(read_file(c.mdp_path));
    if (c.alpha) mdp.alpha = *c.alpha;
    if (c.gamma_override) mdp.gamma = *c.gamma_override;
    const auto report = validate(mdp);
    if (!report.ok()) throw ValidationError(report);
    return mdp;
}

Mdp load_checked(const std::string& path, const std::string& flag) {
    if (path.empty()) throw ParseError("missing " + flag);
    return load_mdp(read_file(path));
}

json report_json(const ExtensionReport& r) { return json::parse(report_to_json(r)); }

json violation_json(const Violation& v) {
    return {{"state", v.state_id}, {"atom", v.atom_id}, {"message", v.message}};
}

int cmd_toy(const RunConfig& c, Outputs& out) {
    ToyParams p;
    if (c.alpha) p.alpha = *c.alpha;
    if (c.gamma_override) p.gamma = *c.gamma_override;
    const Mdp toy = build_toy(p);
    const auto soft = soft_value_iteration(toy, toy.alpha, solver_options(c));
    const auto plain = plain_value_iteration(toy, solver_options(c));
    out.write("mdp.json", save_mdp(toy));
    out.write("landscape.csv", landscape_csv(export_landscape(toy, soft, plain)));
    const auto& qs = soft.Q.at(toy_ids::start);
    const auto& qp = plain.Q.at(toy_ids::start);
    json summary{{"alpha", toy.alpha},
                 {"gamma", toy.gamma},
                 {"q_soft", {{toy_ids::a1, qs[0]}, {toy_ids::a2, qs[1]}}},
                 {"q_plain", {{toy_ids::a1, qp[0]}, {toy_ids::a2, qp[1]}}},
                 {"soft_prefers", qs[1] > qs[0] ? toy_ids::a2 : toy_ids::a1}};
    out.write("summary.json", summary.dump(2));
    fmt::print("Q_soft(s_0) = ({:.6f}, {:.6f})  Q_plain(s_0) = ({:.6f}, {:.6f})\n", qs[0], qs[1], qp[0], qp[1]);
    return 0;
}

int cmd_gauss_toy(const RunConfig& c, Outputs& out) {
    const double alpha = c.alpha.value_or(1.0);
    const double gamma = c.gamma_override.value_or(0.99);
    const std::uint64_t seed = c.seeds.empty() ? 0 : c.seeds.front();
    const auto v = toy_gaussian_values({c.mu_good, c.sigma_good}, {c.mu_bad, c.sigma_bad}, alpha, gamma, c.samples, seed);
    json j{{"q_a1", v.q_a1}, {"q_a2", v.q_a2}, {"alpha", alpha}, {"gamma", gamma}, {"samples", c.samples}, {"seed", seed}};
    out.write("gauss_toy.json", j.dump(2));
    fmt::print("Q(s_0,A_1) = {:.6f}  Q(s_0,A_2) = {:.6f}\n", v.q_a1, v.q_a2);
    return 0;
}

TargetPolicySpec read_target(const RunConfig& c, const Mdp& mdp) {
    if (!c.target_file.empty()) return target_from_json(mdp, read_file(c.target_file));
    if (c.target.empty()) throw ParseError("missing --target or --target-file");
    if (c.state.empty()) throw ParseError("--target needs --state");
    return parse_target(mdp, c.state, c.target);
}

int fail_uncertified(const ExtensionReport& report) {
    throw CommandFailure{"not_certified",
                         fmt::format("extension does not certify the target (kl {:.3g}, plain residual {:.3g})",
                                     report.kl_at_target, report.plain_q_residual),
                         {{"report", report_json(report)}}};
}

int cmd_extend(const RunConfig& c, Outputs& out) {
    const Mdp mdp = input_mdp(c);
    const auto target = read_target(c, mdp);
    ExtensionOptions opts;
    opts.solver = solver_options(c);
    const auto ext = build_extension(mdp, target, opts);
    const auto report = verify_extension(mdp, ext.mdp, target, opts.solver);
    out.write("extended.json", save_mdp(ext.mdp));
    out.write("target.json", target_to_json(mdp, target));
    out.write("report.json", report_to_json(report));
    fmt::print("inserted {} bifurcating states; kl {:.3g}, plain residual {:.3g}\n", ext.params.size(),
               report.kl_at_target, report.plain_q_residual);
    if (!report.certifies()) return fail_uncertified(report);
    return 0;
}

int cmd_verify(const RunConfig& c, Outputs& out) {
    const Mdp original = load_checked(c.original_path, "--original");
    const Mdp extended = load_checked(c.extended_path, "--extended");
    // --target is a file here; an "atom:mass" list is accepted together with --state.
    TargetPolicySpec target;
    if (!c.target_file.empty())
        target = target_from_json(original, read_file(c.target_file));
    else if (!c.target.empty() && c.state.empty())
        target = target_from_json(original, read_file(c.target));
    else
        target = read_target(c, original);
    const auto report = verify_extension(original, extended, target, solver_options(c));
    out.write("report.json", report_to_json(report));
    fmt::print("kl {:.3g}, plain residual {:.3g}, certified {}\n", report.kl_at_target, report.plain_q_residual,
               report.certifies());
    if (!report.certifies()) return fail_uncertified(report);
    return 0;
}

int cmd_worst_case(const RunConfig& c, Outputs& out) {
    const Mdp mdp = input_mdp(c);
    ExtensionOptions opts;
    opts.solver = solver_options(c);
    const auto result = worst_case_transform(mdp, c.eta, opts);
    out.write("extended.json", save_mdp(result.mdp));
    json targets = json::array();
    for (const auto& t : result.targets) targets.push_back(json::parse(target_to_json(mdp, t)));
    out.write("targets.json", targets.dump(2));
    out.write("report.json", report_to_json(result.report));
    const auto& r = result.report;
    fmt::print("J+ {:.6f}  J- {:.6f}  J(MaxEnt) {:.6f}\n", r.j_plus.value_or(0.0), r.j_minus.value_or(0.0),
               r.j_maxent.value_or(0.0));
    if (!r.certifies()) return fail_uncertified(r);
    return 0;
}

LearnerConfig learner_config(const RunConfig& c, std::uint64_t seed) {
    LearnerConfig l;
    l.alpha = c.alpha.value_or(1.0);
    l.lr = c.lr;
    l.anneal_lr = c.anneal_lr;
    l.episodes = c.episodes;
    l.max_steps = c.max_steps;
    l.epsilon_gate = c.epsilon_gate;
    if (c.behavior == "boltzmann")
        l.behavior.kind = Behavior::Kind::boltzmann;
    else if (c.behavior == "epsilon_greedy")
        l.behavior.kind = Behavior::Kind::epsilon_greedy;
    else
        throw ParseError("behavior must be boltzmann or epsilon_greedy, got '" + c.behavior + "'");
    l.behavior.epsilon = c.epsilon_explore;
    l.seed = seed;
    l.eval_every = c.eval_every;
    l.eval_episodes = c.eval_episodes;
    return l;
}

int cmd_train(const RunConfig& c, Outputs& out) {
    if (c.seeds.empty()) throw ParseError("train needs at least one seed");
    const Mdp mdp = input_mdp(c);
    const auto mode = learner_mode_from_string(c.mode);
    if (c.lr <= 0.0 || c.lr > 1.0) throw ParseError("--lr must lie in (0, 1]");
    if (c.episodes == 0) throw ParseError("--episodes must be at least 1");

    // Seeds run one after another; the merged log is concatenated in seed order.
    std::string merged = "seed,episode,mode,eval_return,gate_soft_fraction,max_abs_q\n";
    for (auto seed : c.seeds) {
        const auto result = q_learning(mdp, learner_config(c, seed), mode);
        const auto csv = training_log_csv(result.log);
        out.write(fmt::format("log_seed{}.csv", seed), csv);
        out.write(fmt::format("tables_seed{}.json", seed), tables_to_json(result.tables));
        std::istringstream lines(csv);
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line)) merged += fmt::format("{},{}\n", seed, line);
        const double last = result.log.empty() ? 0.0 : result.log.back().eval_return;
        fmt::print("seed {}: final eval return {:.6f}\n", seed, last);
    }
    out.write("training_log.csv", merged);
    return 0;
}

Selection default_selection(const RunConfig& c) {
    if (!c.selection.empty()) return selection_from_string(c.selection);
    switch (learner_mode_from_string(c.mode)) {
        case LearnerMode::soft: return Selection::greedy_soft;
        case LearnerMode::plain: return Selection::greedy_plain;
        case LearnerMode::adaent: return Selection::gated;
    }
    return Selection::gated;
}

int cmd_eval(const RunConfig& c, Outputs& out) {
    const Mdp mdp = input_mdp(c);
    if (c.tables_path.empty()) throw ParseError("missing --tables");
    auto stored = tables_from_json(read_file(c.tables_path));
    // Stored tables omit terminals; realign with the compiled state order.
    const CompiledMdp model(mdp);
    auto tables = DualQTables::zeros(model);
    for (std::size_t i = 0; i < stored.state_ids.size(); ++i) {
        const int s = model.index_of(stored.state_ids[i]);
        tables.q_soft[s] = stored.q_soft[i];
        tables.q_plain[s] = stored.q_plain[i];
        tables.visits[s] = stored.visits[i];
    }
    const auto selection = default_selection(c);
    json results = json::array();
    for (auto seed : c.seeds) {
        const auto r = evaluate_rollouts(mdp, tables, selection, c.eval_episodes, seed, c.epsilon_gate, c.max_steps);
        results.push_back({{"seed", seed},
                           {"mean_return", r.mean_return},
                           {"stderr_return", r.stderr_return},
                           {"episodes", r.episodes},
                           {"terminal_counts", r.terminal_counts},
                           {"truncated", r.truncated}});
        fmt::print("seed {}: mean return {:.6f} +- {:.6f}\n", seed, r.mean_return, r.stderr_return);
    }
    out.write("eval.json", json{{"selection", to_string(selection)}, {"results", results}}.dump(2));
    return 0;
}

int cmd_landscape(const RunConfig& c, Outputs& out) {
    const Mdp mdp = input_mdp(c);
    const auto soft = soft_value_iteration(mdp, mdp.alpha, solver_options(c));
    const auto plain = plain_value_iteration(mdp, solver_options(c));
    const auto filter = c.state.empty() ? std::nullopt : std::optional<std::string>(c.state);
    const auto rows = export_landscape(mdp, soft, plain, filter);
    out.write("landscape.csv", landscape_csv(rows));
    fmt::print("{} rows\n", rows.size());
    return 0;
}

int cmd_validate(const RunConfig& c, Outputs& out) {
    if (c.mdp_path.empty() == c.env.empty()) throw ParseError("give exactly one of --mdp and --env");
    Mdp mdp = c.mdp_path.empty() ? build_env(c) : load_mdp(read_file(c.mdp_path));
    if (c.gamma_override) mdp.gamma = *c.gamma_override;
    const auto report = validate(mdp);
    json violations = json::array();
    for (const auto& v : report.violations) violations.push_back(violation_json(v));
    out.write("validation.json", json{{"ok", report.ok()}, {"violations", violations}}.dump(2));
    if (!report.ok()) throw ValidationError(report);
    fmt::print("ok\n");
    return 0;
}

fs::path default_out_root() {
    if (const char* env = std::getenv("ENTROPY_TRAP_OUT"); env && *env) return env;
    return "entropy_trap_out";
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void print_error(const std::string& code, const std::string& message, const json& detail = nullptr) {
    json doc{{"code", code}, {"message", message}};
    if (!detail.is_null())
        for (auto it = detail.begin(); it != detail.end(); ++it) doc[it.key()] = it.value();
    std::cerr << doc.dump() << '\n';
}

}  // namespace

int run_command(const std::vector<std::string>& argv) {
    RunConfig c;
    c.argv = argv;
    std::string seeds_list;
    std::uint64_t single_seed = 0;

    CLI::App app{"Entropy bifurcation experiments on tabular MDPs", "entropy_trap"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", c.out_dir, "Output directory");
        sub->add_option("--tol", c.tol, "Solver tolerance (sup-norm on V)");
        sub->add_option("--alpha", c.alpha, "Entropy temperature override");
        sub->add_option("--gamma-override", c.gamma_override, "Discount override");
    };
    auto add_input = [&](CLI::App* sub) {
        sub->add_option("--mdp", c.mdp_path, "MDP JSON file");
        sub->add_option("--env", c.env, "Built-in environment: toy, trap-chain, trap-chain-extended, obstacle2d");
        sub->add_option("--length", c.length, "Trap-chain length");
        sub->add_option("--grid", c.grid, "Obstacle2D grid size");
    };
    auto add_seeds = [&](CLI::App* sub) {
        auto* s = sub->add_option("--seed", single_seed, "Seed");
        auto* l = sub->add_option("--seeds", seeds_list, "Comma-separated seeds");
        s->excludes(l);
    };

    auto* toy = app.add_subcommand("toy", "Solve the toy MDP and export its landscape");
    add_common(toy);

    auto* gauss = app.add_subcommand("gauss-toy", "Monte Carlo toy values under squashed Gaussian policies");
    add_common(gauss);
    add_seeds(gauss);
    gauss->add_option("--mu-good", c.mu_good);
    gauss->add_option("--sigma-good", c.sigma_good);
    gauss->add_option("--mu-bad", c.mu_bad);
    gauss->add_option("--sigma-bad", c.sigma_bad);
    gauss->add_option("--samples", c.samples);

    auto* extend = app.add_subcommand("extend", "Build a bifurcation extension toward a target policy");
    add_common(extend);
    add_input(extend);
    add_seeds(extend);
    extend->add_option("--state", c.state, "Targeted state");
    extend->add_option("--target", c.target, "Target masses as atom:mass,...");
    extend->add_option("--target-file", c.target_file, "Target JSON file");

    auto* verify = app.add_subcommand("verify", "Verify an extension against its original and target");
    add_common(verify);
    verify->add_option("--original", c.original_path)->required();
    verify->add_option("--extended", c.extended_path)->required();
    verify->add_option("--target", c.target, "Target JSON file, or atom:mass list with --state");
    verify->add_option("--target-file", c.target_file, "Target JSON file");
    verify->add_option("--state", c.state);

    auto* worst = app.add_subcommand("worst-case", "Extend every state toward its plain-worst atom");
    add_common(worst);
    add_input(worst);
    add_seeds(worst);
    worst->add_option("--eta", c.eta, "Target mass on the worst atom");

    auto* train = app.add_subcommand("train", "Tabular Q-learning with soft and plain tables");
    add_common(train);
    add_input(train);
    add_seeds(train);
    train->add_option("--episodes", c.episodes);
    train->add_option("--lr", c.lr);
    train->add_flag("--anneal-lr", c.anneal_lr, "Use lr = 1/(1+visits)");
    train->add_option("--epsilon-gate", c.epsilon_gate);
    train->add_option("--mode", c.mode, "soft, plain or adaent");
    train->add_option("--behavior", c.behavior, "boltzmann or epsilon_greedy");
    train->add_option("--epsilon-explore", c.epsilon_explore);
    train->add_option("--max-steps", c.max_steps);
    train->add_option("--eval-every", c.eval_every);
    train->add_option("--eval-episodes", c.eval_episodes);

    auto* eval = app.add_subcommand("eval", "Greedy rollouts from stored tables");
    add_common(eval);
    add_input(eval);
    add_seeds(eval);
    eval->add_option("--tables", c.tables_path)->required();
    eval->add_option("--mode", c.mode, "Picks the default selection");
    eval->add_option("--selection", c.selection, "greedy_soft, greedy_plain or gated");
    eval->add_option("--episodes", c.eval_episodes);
    eval->add_option("--epsilon-gate", c.epsilon_gate);
    eval->add_option("--max-steps", c.max_steps);

    auto* landscape = app.add_subcommand("landscape", "Export soft and plain Q per atom");
    add_common(landscape);
    add_input(landscape);
    add_seeds(landscape);
    landscape->add_option("--state", c.state, "Only this state");

    auto* validate_cmd = app.add_subcommand("validate", "Check an MDP document");
    add_common(validate_cmd);
    add_input(validate_cmd);
    add_seeds(validate_cmd);

    std::vector<std::string> owned{"entropy_trap"};
    owned.insert(owned.end(), argv.begin(), argv.end());
    std::vector<char*> raw;
    for (auto& s : owned) raw.push_back(s.data());
    try {
        app.parse(static_cast<int>(raw.size()), raw.data());
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    }

    CLI::App* chosen = app.get_subcommands().front();
    c.command = chosen->get_name();
    if (!seeds_list.empty()) {
        c.seeds.clear();
        std::stringstream ss(seeds_list);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                std::size_t used = 0;
                c.seeds.push_back(std::stoull(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                print_error("usage", "bad seed '" + item + "' in --seeds");
                return 2;
            }
        }
    } else {
        c.seeds = {single_seed};
    }

    const fs::path out_dir = c.out_dir.empty() ? default_out_root() / c.command : fs::path(c.out_dir);
    c.out_dir = out_dir.string();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        print_error("unwritable_output", "cannot create '" + out_dir.string() + "': " + ec.message());
        return 2;
    }

    const auto started = std::chrono::steady_clock::now();
    Outputs out(out_dir);
    int code = 0;
    json error = nullptr;
    try {
        if (c.command == "toy") code = cmd_toy(c, out);
        else if (c.command == "gauss-toy") code = cmd_gauss_toy(c, out);
        else if (c.command == "extend") code = cmd_extend(c, out);
        else if (c.command == "verify") code = cmd_verify(c, out);
        else if (c.command == "worst-case") code = cmd_worst_case(c, out);
        else if (c.command == "train") code = cmd_train(c, out);
        else if (c.command == "eval") code = cmd_eval(c, out);
        else if (c.command == "landscape") code = cmd_landscape(c, out);
        else if (c.command == "validate") code = cmd_validate(c, out);
    } catch (const CommandFailure& f) {
        print_error(f.code, f.message, f.detail);
        error = {{"code", f.code}, {"message", f.message}};
        code = 2;
    } catch (const ValidationError& e) {
        json violations = json::array();
        for (const auto& v : e.report().violations) violations.push_back(violation_json(v));
        print_error(e.code(), e.what(), {{"violations", violations}});
        error = {{"code", e.code()}, {"message", e.what()}};
        code = 2;
    } catch (const Error& e) {
        print_error(e.code(), e.what());
        error = {{"code", e.code()}, {"message", e.what()}};
        code = 2;
    } catch (const std::invalid_argument& e) {
        print_error("invalid_argument", e.what());
        error = {{"code", "invalid_argument"}, {"message", e.what()}};
        code = 2;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        error = {{"code", "internal"}, {"message", e.what()}};
        code = 1;
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    json manifest{{"version", kVersion},
                  {"command", c.command},
                  {"config", json::parse(c.to_json())},
                  {"outputs", out.files()},
                  {"exit_code", code},
                  {"error", error},
                  {"started_at", utc_timestamp()},
                  {"wall_time_seconds", wall}};
    try {
        write_file(out_dir / "manifest.json", manifest.dump(2));
    } catch (const Error& e) {
        print_error(e.code(), e.what());
        return code == 0 ? 2 : code;
    }
    return code;
}

}  // namespace entropy_trap
