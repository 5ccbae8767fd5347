#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace entropy_trap {

/// How a terminal successor's reward enters the backup of the atom leading to it.
/// on_entry adds P * r_T undiscounted, discounted adds gamma * P * r_T.
enum class TerminalTiming { on_entry, discounted };

std::string to_string(TerminalTiming timing);
TerminalTiming terminal_timing_from_string(const std::string& name);

/// One interval of a state's action space. Reward and transitions are constant
/// over the interval, so Q is piecewise constant with one value per atom.
struct ActionAtom {
    std::string id;
    double lo = 0.0;
    double hi = 1.0;
    double weight = 1.0;  // Lebesgue measure of the interval
    double reward = 0.0;
    std::map<std::string, double> next;

    bool operator==(const ActionAtom&) const = default;
};

struct StateSpec {
    bool terminal = false;
    double terminal_reward = 0.0;
    std::vector<ActionAtom> atoms;  // canonical order for every per-atom vector

    bool operator==(const StateSpec&) const = default;
};

struct Mdp {
    std::map<std::string, StateSpec> states;
    std::string start;
    double gamma = 0.99;
    double alpha = 1.0;
    TerminalTiming terminal_timing = TerminalTiming::on_entry;

    const StateSpec& state(const std::string& id) const;
    /// Index of an atom within its state; throws std::out_of_range when absent.
    std::size_t atom_index(const std::string& state_id, const std::string& atom_id) const;
    std::vector<std::string> nonterminal_ids() const;

    bool operator==(const Mdp&) const = default;
};

/// Per non-terminal state, masses aligned with the state's atoms.
struct PiecewisePolicy {
    std::map<std::string, std::vector<double>> masses;

    /// Density over atom k is mass_k / weight_k.
    std::vector<double> densities(const Mdp& mdp, const std::string& state_id) const;

    bool operator==(const PiecewisePolicy&) const = default;
};

struct Violation {
    std::string state_id;  // empty for model-level problems
    std::string atom_id;   // empty for state-level problems
    std::string message;

    std::string to_string() const;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::string summary() const;
};

/// Errors carry a stable code so the CLI can emit machine-readable documents.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& message) : Error("parse_error", message) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(ValidationReport report)
        : Error("validation_error", "invalid MDP: " + report.summary()), report_(std::move(report)) {}
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

class LookupError : public Error {
public:
    explicit LookupError(const std::string& message) : Error("unknown_id", message) {}
};

ValidationReport validate(const Mdp& mdp);

/// Checks masses against the MDP's atoms: one entry per non-terminal state,
/// aligned lengths, nonnegative, summing to 1 within 1e-10.
ValidationReport validate_policy(const Mdp& mdp, const PiecewisePolicy& policy);

/// Serialized JSON text of the document. Requires a valid MDP.
std::string save_mdp(const Mdp& mdp);
/// Parses and validates; throws ParseError or ValidationError.
Mdp load_mdp(const std::string& document);

Mdp load_mdp_file(const std::string& path);
void save_mdp_file(const Mdp& mdp, const std::string& path);

/// Replaces one atom by `parts` equal-width atoms carrying weight/parts each
/// and the same reward and transitions. New ids are "<atom>.<i>".
Mdp refine_atom(const Mdp& mdp, const std::string& state_id, const std::string& atom_id,
                std::size_t parts);

}  // namespace entropy_trap
