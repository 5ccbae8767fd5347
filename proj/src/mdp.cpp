#include "entropy_trap/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace entropy_trap {

using nlohmann::json;

std::string to_string(TerminalTiming timing) {
    return timing == TerminalTiming::on_entry ? "on_entry" : "discounted";
}

TerminalTiming terminal_timing_from_string(const std::string& name) {
    if (name == "on_entry") return TerminalTiming::on_entry;
    if (name == "discounted") return TerminalTiming::discounted;
    throw ParseError("terminal_timing must be \"on_entry\" or \"discounted\", got \"" + name + "\"");
}

const StateSpec& Mdp::state(const std::string& id) const {
    auto it = states.find(id);
    if (it == states.end()) throw LookupError("unknown state '" + id + "'");
    return it->second;
}

std::size_t Mdp::atom_index(const std::string& state_id, const std::string& atom_id) const {
    const auto& atoms = state(state_id).atoms;
    for (std::size_t k = 0; k < atoms.size(); ++k)
        if (atoms[k].id == atom_id) return k;
    throw LookupError("unknown atom '" + atom_id + "' at state '" + state_id + "'");
}

std::vector<std::string> Mdp::nonterminal_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, spec] : states)
        if (!spec.terminal) ids.push_back(id);
    return ids;
}

std::vector<double> PiecewisePolicy::densities(const Mdp& mdp, const std::string& state_id) const {
    const auto& atoms = mdp.state(state_id).atoms;
    auto it = masses.find(state_id);
    if (it == masses.end()) throw LookupError("policy has no entry for state '" + state_id + "'");
    if (it->second.size() != atoms.size())
        throw Error("policy_mismatch", "policy at '" + state_id + "' is not aligned with its atoms");
    std::vector<double> out(atoms.size());
    for (std::size_t k = 0; k < atoms.size(); ++k) out[k] = it->second[k] / atoms[k].weight;
    return out;
}

std::string Violation::to_string() const {
    std::string where;
    if (!state_id.empty()) where += "state " + state_id;
    if (!atom_id.empty()) where += " atom " + atom_id;
    return where.empty() ? message : where + ": " + message;
}

std::string ValidationReport::summary() const {
    std::string out;
    for (const auto& v : violations) {
        if (!out.empty()) out += "; ";
        out += v.to_string();
    }
    return out;
}

ValidationReport validate(const Mdp& mdp) {
    ValidationReport report;
    auto add = [&](const std::string& s, const std::string& a, std::string msg) {
        report.violations.push_back({s, a, std::move(msg)});
    };

    if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0)) add("", "", fmt::format("gamma {} outside [0,1)", mdp.gamma));
    if (!(mdp.alpha > 0.0) || !std::isfinite(mdp.alpha)) add("", "", fmt::format("alpha {} is not positive", mdp.alpha));
    if (mdp.states.empty()) add("", "", "no states");
    if (!mdp.states.count(mdp.start)) add("", "", "start state '" + mdp.start + "' does not exist");

    for (const auto& [sid, spec] : mdp.states) {
        if (spec.terminal) {
            if (!spec.atoms.empty()) add(sid, "", "terminal state has atoms");
            if (!std::isfinite(spec.terminal_reward)) add(sid, "", "terminal reward is not finite");
            continue;
        }
        if (spec.atoms.empty()) add(sid, "", "non-terminal state has no atoms");

        for (std::size_t k = 0; k < spec.atoms.size(); ++k) {
            const auto& atom = spec.atoms[k];
            for (std::size_t j = 0; j < k; ++j)
                if (spec.atoms[j].id == atom.id) add(sid, atom.id, "duplicate atom id");
            if (!(atom.hi > atom.lo)) add(sid, atom.id, fmt::format("empty interval [{}, {}]", atom.lo, atom.hi));
            if (!(atom.weight > 0.0) || !std::isfinite(atom.weight)) add(sid, atom.id, "nonpositive weight");
            if (!std::isfinite(atom.reward)) add(sid, atom.id, "reward is not finite");
            if (atom.next.empty()) add(sid, atom.id, "no transitions");

            double total = 0.0;
            bool negative = false;
            for (const auto& [target, p] : atom.next) {
                if (!mdp.states.count(target)) add(sid, atom.id, "unknown transition target '" + target + "'");
                if (!(p >= 0.0)) negative = true;
                total += p;
            }
            if (negative) add(sid, atom.id, "negative transition probability");
            if (!atom.next.empty() && !(std::abs(total - 1.0) <= 1e-12))
                add(sid, atom.id, fmt::format("probabilities sum to {:.12g}", total));

            for (std::size_t j = 0; j < k; ++j) {
                const auto& other = spec.atoms[j];
                // Touching endpoints is allowed; positive-length overlap is not.
                if (std::max(atom.lo, other.lo) < std::min(atom.hi, other.hi))
                    add(sid, atom.id, "overlaps atom " + other.id);
            }
        }
    }
    return report;
}

ValidationReport validate_policy(const Mdp& mdp, const PiecewisePolicy& policy) {
    ValidationReport report;
    for (const auto& [sid, spec] : mdp.states) {
        if (spec.terminal) continue;
        auto it = policy.masses.find(sid);
        if (it == policy.masses.end()) {
            report.violations.push_back({sid, "", "policy has no masses"});
            continue;
        }
        if (it->second.size() != spec.atoms.size()) {
            report.violations.push_back({sid, "", fmt::format("policy has {} masses for {} atoms",
                                                              it->second.size(), spec.atoms.size())});
            continue;
        }
        double total = 0.0;
        for (double p : it->second) {
            if (!(p >= 0.0) || !std::isfinite(p)) report.violations.push_back({sid, "", "invalid mass"});
            total += p;
        }
        if (!(std::abs(total - 1.0) <= 1e-10))
            report.violations.push_back({sid, "", fmt::format("masses sum to {:.12g}", total)});
    }
    for (const auto& [sid, m] : policy.masses)
        if (!mdp.states.count(sid)) report.violations.push_back({sid, "", "policy names an unknown state"});
    return report;
}

namespace {

const json& require(const json& node, const char* field, const std::string& where) {
    auto it = node.find(field);
    if (it == node.end()) throw ParseError("missing field '" + std::string(field) + "'" + where);
    return *it;
}

double number(const json& node, const char* field, const std::string& where) {
    const auto& v = require(node, field, where);
    if (!v.is_number()) throw ParseError("field '" + std::string(field) + "'" + where + " must be a number");
    return v.get<double>();
}

double number_or(const json& node, const char* field, double fallback, const std::string& where) {
    return node.contains(field) ? number(node, field, where) : fallback;
}

std::string text(const json& node, const char* field, const std::string& where) {
    const auto& v = require(node, field, where);
    if (!v.is_string()) throw ParseError("field '" + std::string(field) + "'" + where + " must be a string");
    return v.get<std::string>();
}

json atom_to_json(const ActionAtom& atom) {
    json next = json::object();
    for (const auto& [target, p] : atom.next) next[target] = p;
    return {{"id", atom.id}, {"lo", atom.lo}, {"hi", atom.hi}, {"weight", atom.weight},
            {"reward", atom.reward}, {"next", next}};
}

ActionAtom atom_from_json(const json& node, const std::string& where) {
    if (!node.is_object()) throw ParseError("atom" + where + " must be an object");
    ActionAtom atom;
    atom.id = text(node, "id", where);
    const std::string at = where + " atom " + atom.id;
    atom.lo = number(node, "lo", at);
    atom.hi = number(node, "hi", at);
    atom.weight = number_or(node, "weight", atom.hi - atom.lo, at);
    atom.reward = number_or(node, "reward", 0.0, at);
    const auto& next = require(node, "next", at);
    if (!next.is_object()) throw ParseError("field 'next'" + at + " must be an object");
    for (auto it = next.begin(); it != next.end(); ++it) {
        if (!it->is_number()) throw ParseError("transition probability" + at + " must be a number");
        atom.next[it.key()] = it->get<double>();
    }
    return atom;
}

}  // namespace

std::string save_mdp(const Mdp& mdp) {
    if (auto report = validate(mdp); !report.ok()) throw ValidationError(report);
    json states = json::object();
    for (const auto& [sid, spec] : mdp.states) {
        json atoms = json::array();
        for (const auto& atom : spec.atoms) atoms.push_back(atom_to_json(atom));
        states[sid] = {{"terminal", spec.terminal}, {"terminal_reward", spec.terminal_reward}, {"atoms", atoms}};
    }
    json doc = {{"gamma", mdp.gamma},
                {"alpha", mdp.alpha},
                {"terminal_timing", to_string(mdp.terminal_timing)},
                {"start", mdp.start},
                {"states", states}};
    return doc.dump(2);
}

Mdp load_mdp(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed document: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("document root must be an object");

    Mdp mdp;
    mdp.gamma = number(doc, "gamma", "");
    mdp.alpha = number_or(doc, "alpha", 1.0, "");
    if (doc.contains("terminal_timing"))
        mdp.terminal_timing = terminal_timing_from_string(text(doc, "terminal_timing", ""));
    mdp.start = text(doc, "start", "");
    const auto& states = require(doc, "states", "");
    if (!states.is_object()) throw ParseError("field 'states' must be an object");
    for (auto it = states.begin(); it != states.end(); ++it) {
        const std::string where = " in state " + it.key();
        if (!it->is_object()) throw ParseError("state" + where + " must be an object");
        StateSpec spec;
        if (it->contains("terminal")) {
            if (!(*it)["terminal"].is_boolean()) throw ParseError("field 'terminal'" + where + " must be a bool");
            spec.terminal = (*it)["terminal"].get<bool>();
        }
        spec.terminal_reward = number_or(*it, "terminal_reward", 0.0, where);
        if (it->contains("atoms")) {
            const auto& atoms = (*it)["atoms"];
            if (!atoms.is_array()) throw ParseError("field 'atoms'" + where + " must be an array");
            for (const auto& a : atoms) spec.atoms.push_back(atom_from_json(a, where));
        }
        mdp.states.emplace(it.key(), std::move(spec));
    }
    if (auto report = validate(mdp); !report.ok()) throw ValidationError(report);
    return mdp;
}

Mdp load_mdp_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io_error", "cannot read '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return load_mdp(buf.str());
}

void save_mdp_file(const Mdp& mdp, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("io_error", "cannot write '" + path + "'");
    out << save_mdp(mdp) << '\n';
}

Mdp refine_atom(const Mdp& mdp, const std::string& state_id, const std::string& atom_id,
                std::size_t parts) {
    if (parts < 2) throw std::invalid_argument("refine_atom needs parts >= 2");
    const std::size_t k = mdp.atom_index(state_id, atom_id);
    Mdp out = mdp;
    auto& atoms = out.states.at(state_id).atoms;
    const ActionAtom original = atoms[k];
    std::vector<ActionAtom> pieces;
    const double width = original.hi - original.lo;
    for (std::size_t i = 0; i < parts; ++i) {
        ActionAtom piece = original;
        piece.id = original.id + "." + std::to_string(i);
        piece.lo = original.lo + width * static_cast<double>(i) / static_cast<double>(parts);
        piece.hi = i + 1 == parts ? original.hi
                                  : original.lo + width * static_cast<double>(i + 1) / static_cast<double>(parts);
        piece.weight = original.weight / static_cast<double>(parts);
        pieces.push_back(std::move(piece));
    }
    atoms.erase(atoms.begin() + static_cast<std::ptrdiff_t>(k));
    atoms.insert(atoms.begin() + static_cast<std::ptrdiff_t>(k), pieces.begin(), pieces.end());
    return out;
}

}  // namespace entropy_trap
