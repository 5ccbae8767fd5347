#include "entropy_trap/learners.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "entropy_trap/solvers.hpp"
#include "json.hpp"

namespace entropy_trap {

using nlohmann::json;

std::string to_string(LearnerMode mode) {
    switch (mode) {
        case LearnerMode::soft: return "soft";
        case LearnerMode::plain: return "plain";
        case LearnerMode::adaent: return "adaent";
    }
    return "?";
}

LearnerMode learner_mode_from_string(const std::string& name) {
    if (name == "soft") return LearnerMode::soft;
    if (name == "plain") return LearnerMode::plain;
    if (name == "adaent") return LearnerMode::adaent;
    throw ParseError("mode must be soft, plain or adaent, got '" + name + "'");
}

std::string to_string(Selection selection) {
    switch (selection) {
        case Selection::greedy_soft: return "greedy_soft";
        case Selection::greedy_plain: return "greedy_plain";
        case Selection::gated: return "gated";
    }
    return "?";
}

Selection selection_from_string(const std::string& name) {
    if (name == "greedy_soft") return Selection::greedy_soft;
    if (name == "greedy_plain") return Selection::greedy_plain;
    if (name == "gated") return Selection::gated;
    throw ParseError("selection must be greedy_soft, greedy_plain or gated, got '" + name + "'");
}

DualQTables DualQTables::zeros(const CompiledMdp& model) {
    DualQTables t;
    for (const auto& s : model.states) {
        t.state_ids.push_back(s.id);
        t.q_soft.emplace_back(s.atoms.size(), 0.0);
        t.q_plain.emplace_back(s.atoms.size(), 0.0);
        t.visits.emplace_back(s.atoms.size(), 0);
    }
    return t;
}

double DualQTables::max_abs() const {
    double m = 0.0;
    for (const auto* table : {&q_soft, &q_plain})
        for (const auto& row : *table)
            for (double q : row) m = std::max(m, std::abs(q));
    return m;
}

std::string tables_to_json(const DualQTables& tables) {
    json states = json::object();
    for (std::size_t s = 0; s < tables.state_ids.size(); ++s) {
        if (tables.q_soft[s].empty()) continue;
        states[tables.state_ids[s]] = {
            {"q_soft", tables.q_soft[s]}, {"q_plain", tables.q_plain[s]}, {"visits", tables.visits[s]}};
    }
    return json{{"states", states}}.dump(2);
}

DualQTables tables_from_json(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed tables document: ") + e.what());
    }
    if (!doc.contains("states") || !doc["states"].is_object()) throw ParseError("missing field 'states' in tables");
    DualQTables t;
    for (auto it = doc["states"].begin(); it != doc["states"].end(); ++it) {
        t.state_ids.push_back(it.key());
        try {
            t.q_soft.push_back(it->at("q_soft").get<std::vector<double>>());
            t.q_plain.push_back(it->at("q_plain").get<std::vector<double>>());
            t.visits.push_back(it->value("visits", std::vector<std::size_t>(t.q_soft.back().size(), 0)));
        } catch (const json::exception& e) {
            throw ParseError("bad table entry for state '" + it.key() + "': " + e.what());
        }
    }
    return t;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size() || u.empty()) throw Error("length_mismatch", "cosine similarity needs equal, nonempty vectors");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        dot += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu < 1e-12 || nv < 1e-12) return 1.0;
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

namespace {

std::size_t greedy_index(const std::vector<double>& q) {
    return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

std::size_t sample_index(std::span<const double> probs, std::mt19937_64& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return k;
    }
    // Rounding can leave acc slightly below 1; fall back to the last positive entry.
    for (std::size_t k = probs.size(); k-- > 0;)
        if (probs[k] > 0.0) return k;
    return probs.size() - 1;
}

std::vector<double> weights_of(const CompiledMdp::State& st) {
    std::vector<double> w;
    for (const auto& a : st.atoms) w.push_back(a.weight);
    return w;
}

struct Transition {
    int next = 0;
    double reward = 0.0;
    bool done = false;
};

Transition sample_transition(const CompiledMdp& model, const CompiledMdp::Atom& atom, std::mt19937_64& rng) {
    std::vector<double> probs;
    probs.reserve(atom.successors.size());
    for (const auto& s : atom.successors) probs.push_back(s.prob);
    const auto& succ = atom.successors[sample_index(probs, rng)];
    const auto& next = model.states[static_cast<std::size_t>(succ.state)];
    Transition t;
    t.next = succ.state;
    t.done = next.terminal;
    t.reward = atom.reward + (next.terminal ? next.terminal_value : 0.0);
    return t;
}

// Table used at a state: the soft one where it agrees with the plain one.
bool gate_uses_soft(const DualQTables& t, std::size_t s, double epsilon_gate) {
    return cosine_similarity(t.q_soft[s], t.q_plain[s]) > epsilon_gate;
}

const std::vector<double>& selected_row(const DualQTables& t, std::size_t s, Selection selection, double epsilon_gate) {
    switch (selection) {
        case Selection::greedy_soft: return t.q_soft[s];
        case Selection::greedy_plain: return t.q_plain[s];
        case Selection::gated: return gate_uses_soft(t, s, epsilon_gate) ? t.q_soft[s] : t.q_plain[s];
    }
    return t.q_soft[s];
}

Selection selection_for(LearnerMode mode) {
    switch (mode) {
        case LearnerMode::soft: return Selection::greedy_soft;
        case LearnerMode::plain: return Selection::greedy_plain;
        case LearnerMode::adaent: return Selection::gated;
    }
    return Selection::gated;
}

void check_tables(const CompiledMdp& model, const DualQTables& tables) {
    bool ok = tables.state_ids.size() == model.size();
    for (std::size_t s = 0; ok && s < model.size(); ++s)
        ok = tables.state_ids[s] == model.states[s].id &&
             (model.states[s].terminal || (tables.q_soft[s].size() == model.states[s].atoms.size() &&
                                           tables.q_plain[s].size() == model.states[s].atoms.size()));
    if (!ok) throw Error("table_mismatch", "Q tables are not aligned with the MDP");
}

}  // namespace

TrainingResult q_learning(const Mdp& mdp, const LearnerConfig& config, LearnerMode mode) {
    if (!(config.lr > 0.0 && config.lr <= 1.0)) throw std::invalid_argument("lr must lie in (0, 1]");
    if (config.episodes == 0) throw std::invalid_argument("episodes must be at least 1");
    if (!(config.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");

    const CompiledMdp model(mdp);
    std::vector<std::vector<double>> weights(model.size());
    for (std::size_t s = 0; s < model.size(); ++s) weights[s] = weights_of(model.states[s]);

    TrainingResult result;
    auto& t = result.tables;
    t = DualQTables::zeros(model);
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::size_t routed_soft = 0, updates = 0;
    for (std::size_t episode = 1; episode <= config.episodes; ++episode) {
        auto s = static_cast<std::size_t>(model.start);
        for (std::size_t step = 0; step < config.max_steps && !model.states[s].terminal; ++step) {
            const auto& st = model.states[s];
            const bool use_soft = mode == LearnerMode::soft ||
                                  (mode == LearnerMode::adaent && gate_uses_soft(t, s, config.epsilon_gate));
            const auto& row = use_soft ? t.q_soft[s] : t.q_plain[s];

            std::size_t k;
            if (config.behavior.kind == Behavior::Kind::boltzmann) {
                k = sample_index(boltzmann_policy(weights[s], row, config.alpha), rng);
            } else if (unit(rng) < config.behavior.epsilon) {
                k = std::uniform_int_distribution<std::size_t>(0, st.atoms.size() - 1)(rng);
            } else {
                k = greedy_index(row);
            }

            const auto tr = sample_transition(model, st.atoms[k], rng);
            const auto next = static_cast<std::size_t>(tr.next);
            double soft_target = tr.reward, plain_target = tr.reward;
            if (!tr.done) {
                soft_target += model.gamma * soft_state_value(weights[next], t.q_soft[next], config.alpha);
                plain_target += model.gamma * *std::max_element(t.q_plain[next].begin(), t.q_plain[next].end());
            }

            auto& visits = t.visits[s][k];
            const double lr = config.anneal_lr ? 1.0 / (1.0 + static_cast<double>(visits)) : config.lr;
            auto& qs = t.q_soft[s][k];
            auto& qp = t.q_plain[s][k];
            qs += lr * (soft_target - qs);
            qp += lr * (plain_target - qp);
            ++visits;
            if (!std::isfinite(qs) || !std::isfinite(qp))
                throw DivergenceError(fmt::format("non-finite Q at state '{}' atom {} in episode {}", st.id, k, episode));

            ++updates;
            if (use_soft) ++routed_soft;
            s = next;
        }

        const bool last = episode == config.episodes;
        if ((config.eval_every > 0 && episode % config.eval_every == 0) || last) {
            TrainingLogRow row;
            row.episode = episode;
            row.mode = mode;
            const auto eval = evaluate_rollouts(mdp, t, selection_for(mode), config.eval_episodes,
                                                config.seed ^ (0x9E3779B97F4A7C15ULL + episode), config.epsilon_gate,
                                                config.max_steps);
            row.eval_return = eval.mean_return;
            row.gate_soft_fraction = updates ? static_cast<double>(routed_soft) / static_cast<double>(updates) : 0.0;
            row.max_abs_q = t.max_abs();
            result.log.push_back(row);
            routed_soft = updates = 0;
        }
    }
    return result;
}

std::string training_log_csv(const std::vector<TrainingLogRow>& log) {
    std::string out = "episode,mode,eval_return,gate_soft_fraction,max_abs_q\n";
    for (const auto& r : log)
        out += fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", r.episode, to_string(r.mode), r.eval_return,
                           r.gate_soft_fraction, r.max_abs_q);
    return out;
}

double EvalResult::reach_rate(const std::string& terminal) const {
    auto it = terminal_counts.find(terminal);
    if (it == terminal_counts.end() || episodes == 0) return 0.0;
    return static_cast<double>(it->second) / static_cast<double>(episodes);
}

EvalResult evaluate_rollouts(const Mdp& mdp, const DualQTables& tables, Selection selection, std::size_t n_episodes,
                             std::uint64_t seed, double epsilon_gate, std::size_t max_steps) {
    const CompiledMdp model(mdp);
    check_tables(model, tables);
    std::mt19937_64 rng(seed);

    EvalResult out;
    out.episodes = n_episodes;
    std::vector<double> returns;
    returns.reserve(n_episodes);
    for (std::size_t e = 0; e < n_episodes; ++e) {
        auto s = static_cast<std::size_t>(model.start);
        double ret = 0.0, discount = 1.0;
        bool finished = model.states[s].terminal;
        for (std::size_t step = 0; step < max_steps && !finished; ++step) {
            const auto k = greedy_index(selected_row(tables, s, selection, epsilon_gate));
            const auto tr = sample_transition(model, model.states[s].atoms[k], rng);
            ret += discount * tr.reward;
            discount *= model.gamma;
            s = static_cast<std::size_t>(tr.next);
            finished = tr.done;
        }
        if (finished)
            ++out.terminal_counts[model.states[s].id];
        else
            ++out.truncated;
        returns.push_back(ret);
    }
    if (n_episodes == 0) return out;

    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(n_episodes);
    out.mean_return = mean;
    if (n_episodes > 1) {
        double ss = 0.0;
        for (double r : returns) ss += (r - mean) * (r - mean);
        out.stderr_return = std::sqrt(ss / static_cast<double>(n_episodes - 1)) / std::sqrt(static_cast<double>(n_episodes));
    }
    return out;
}

}  // namespace entropy_trap
