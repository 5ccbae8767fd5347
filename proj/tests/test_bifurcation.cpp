#include <cmath>
#include <random>

#include "doctest.h"
#include "entropy_trap/bifurcation.hpp"
#include "entropy_trap/environments.hpp"
#include "oracles.hpp"

using namespace entropy_trap;

namespace {

std::vector<double> weights_at(const Mdp& m, const std::string& id) {
    std::vector<double> w;
    for (const auto& a : m.states.at(id).atoms) w.push_back(a.weight);
    return w;
}

TargetPolicySpec random_target(const Mdp& m, std::mt19937_64& rng) {
    std::vector<std::string> live;
    for (const auto& [id, st] : m.states)
        if (!st.terminal) live.push_back(id);
    const auto& id = live[std::uniform_int_distribution<std::size_t>(0, live.size() - 1)(rng)];
    std::vector<double> masses;
    double total = 0.0;
    for (std::size_t k = 0; k < m.states.at(id).atoms.size(); ++k) {
        masses.push_back(std::exp(std::uniform_real_distribution<double>(-4.0, 0.0)(rng)));
        total += masses.back();
    }
    for (double& p : masses) p /= total;
    return {id, masses};
}

}  // namespace

TEST_CASE("backward_q examples") {
    {
        const std::vector<double> w{2.0};
        const auto q = backward_q(std::vector<double>{1.0}, 0.0, 1.0, w);
        CHECK(q[0] == doctest::Approx(std::log(0.5)).epsilon(1e-14));
        CHECK(std::abs(soft_state_value(w, q, 1.0)) < 1e-14);
    }
    {
        const std::vector<double> w{1.0};
        CHECK(backward_q(std::vector<double>{1.0}, 0.0, 1.0, w)[0] == 0.0);
    }
    {
        const std::vector<double> p{0.9, 0.1}, w{1.0, 1.0};
        const auto q = backward_q(p, 2.0, 0.5, w);
        CHECK(q[0] == doctest::Approx(2.0 + 0.5 * std::log(0.9)).epsilon(1e-14));
        CHECK(q[1] == doctest::Approx(2.0 + 0.5 * std::log(0.1)).epsilon(1e-14));
        CHECK(std::abs(soft_state_value(w, q, 0.5) - 2.0) < 1e-10);
        const auto back = boltzmann_policy(w, q, 0.5);
        CHECK(std::abs(back[0] - 0.9) < 1e-10);
    }
    const std::vector<double> zero{1.0, 0.0}, w2{1.0, 1.0};
    CHECK_THROWS_AS(backward_q(zero, 0.0, 1.0, w2), InfeasibleError);
}

TEST_CASE("forward_solve examples") {
    const auto f = forward_solve(0.0, -1.0, 1.0, 0.99, 1.0, 1.0, TerminalTiming::discounted);
    CHECK(std::abs(f.q2 - (-0.4586751453870819)) < 1e-12);
    CHECK(std::abs(f.r_trap - (-0.4633082276637191)) < 1e-12);
    // Plug back.
    CHECK(std::abs(std::log(std::exp(-1.0) + std::exp(f.q2))) < 1e-9);

    const auto g = forward_solve(0.0, -1.0, 1.0, 0.99, 1.0, 1.0, TerminalTiming::on_entry);
    CHECK(g.r_trap == g.q2);

    // Symmetric case: v built from two equal branches returns q2 = q1.
    const double q1 = 0.7, a = 1.3, w1 = 0.4, w2 = 1.6;
    const double v = a * std::log(w1 * std::exp(q1 / a) + w2 * std::exp(q1 / a));
    CHECK(std::abs(forward_solve(v, q1, a, 0.9, w1, w2, TerminalTiming::on_entry).q2 - q1) < 1e-12);

    // Infeasible boundary.
    const double bad_v = q1 + a * std::log(w1) - 0.1;
    CHECK_THROWS_AS(forward_solve(bad_v, q1, a, 0.9, w1, w2, TerminalTiming::on_entry), InfeasibleError);
}

TEST_CASE("forward_solve plug-back on a grid, no overflow") {
    for (double v : {-50.0, 0.0, 3.0, 800.0})
        for (double alpha : {0.01, 1.0, 10.0})
            for (double w2 : {1e-3, 1.0, 1e3}) {
                const double q1 = v - 2.0 * alpha;
                const auto f = forward_solve(v, q1, alpha, 0.9, 1.0, w2, TerminalTiming::on_entry);
                const std::vector<double> w{1.0, w2}, q{q1, f.q2};
                CHECK(std::abs(soft_state_value(w, q, alpha) - v) < 1e-9 * std::max(1.0, std::abs(v)));
            }
}

TEST_CASE("invariant: feasibility monotonicity in w2") {
    double prev = std::numeric_limits<double>::infinity();
    for (int i = -6; i <= 6; ++i) {
        const double w2 = std::pow(10.0, i);
        const double q2 = forward_solve(1.0, 0.0, 1.0, 0.9, 1.0, w2, TerminalTiming::on_entry).q2;
        CHECK(q2 < prev);
        prev = q2;
    }
}

TEST_CASE("toy extension steers s_0 to (0.01, 0.99)") {
    const auto toy = build_toy();
    const auto target = parse_target(toy, "s_0", "A_1:0.01,A_2:0.99");
    const auto ext = build_extension(toy, target);
    CHECK(validate(ext.mdp).ok());
    CHECK(ext.params.size() == 2);

    const auto soft = soft_value_iteration(ext.mdp);
    const auto& p = soft.policy.masses.at("s_0");
    CHECK(std::abs(p[0] - 0.01) < 1e-6);
    CHECK(std::abs(p[1] - 0.99) < 1e-6);
    const auto plain = plain_value_iteration(ext.mdp);
    CHECK(plain.greedy.at("s_0") == std::vector<std::size_t>{0});

    const auto report = verify_extension(toy, ext.mdp, target);
    CHECK(report.kl_at_target < 1e-6);
    CHECK(report.plain_q_residual < 1e-8);
    CHECK(report.soft_v_residual < 1e-8);
    REQUIRE(report.trap_avoidance_margin.has_value());
    CHECK(*report.trap_avoidance_margin >= 0.1 - 1e-9);
    CHECK(report.certifies());

    for (const auto& bp : ext.params) {
        CHECK(bp.w1 > 0.0);
        CHECK(bp.w2 >= 1.0);
        CHECK(std::exp(bp.v_target) > bp.w1 * std::exp(bp.q1));
        CHECK(std::abs(bp.q2 - std::log((std::exp(bp.v_target) - bp.w1 * std::exp(bp.q1)) / bp.w2)) < 1e-9);
        CHECK(ext.mdp.states.at(bp.mu_state).atoms.size() == 2);
        CHECK(ext.mdp.states.at(bp.trap_state).terminal);
        CHECK(ext.mdp.states.at(bp.trap_state).terminal_reward == bp.r_trap);
    }
    CHECK(ext.mdp.states.count("s_0::A_1::mu") == 1);
    CHECK(ext.mdp.states.count("s_0::A_2::muT") == 1);
}

TEST_CASE("target equal to the current optimum is a fixed point") {
    const auto toy = build_toy();
    const auto sol = soft_value_iteration(toy);
    const TargetPolicySpec target{"s_0", sol.policy.masses.at("s_0")};
    const auto ext = build_extension(toy, target);
    const auto r = verify_extension(toy, ext.mdp, target);
    CHECK(r.kl_at_target < 1e-8);
    CHECK(r.plain_q_residual < 1e-8);
    CHECK(r.soft_v_residual < 1e-8);
}

TEST_CASE("original vs original has zero residuals") {
    const auto toy = build_toy();
    const auto sol = soft_value_iteration(toy);
    const TargetPolicySpec target{"s_0", sol.policy.masses.at("s_0")};
    const auto r = verify_extension(toy, toy, target);
    CHECK(r.kl_at_target < 1e-15);
    CHECK(r.plain_q_residual == 0.0);
    CHECK(r.soft_v_residual == 0.0);
    CHECK_FALSE(r.trap_avoidance_margin.has_value());
}

TEST_CASE("perturbed trap reward is flagged") {
    const auto toy = build_toy();
    const auto target = parse_target(toy, "s_0", "A_1:0.01,A_2:0.99");
    auto ext = build_extension(toy, target);
    ext.mdp.states.at(ext.params[0].trap_state).terminal_reward += 1.0;
    const auto r = verify_extension(toy, ext.mdp, target);
    CHECK(r.kl_at_target > 1e-3);
    CHECK_FALSE(r.certifies());
}

TEST_CASE("random MDP extensions certify") {
    std::mt19937_64 rng(5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = oracle::random_mdp(seed, {5, 4, true});
        const auto target = random_target(m, rng);
        const auto ext = build_extension(m, target);
        const auto r = verify_extension(m, ext.mdp, target);
        CHECK_MESSAGE(r.certifies(), "seed " << seed << " kl " << r.kl_at_target << " res " << r.plain_q_residual);
        CHECK(r.soft_v_residual < 1e-8);
        CHECK(r.greedy_sets_preserved);
        REQUIRE(r.trap_avoidance_margin.has_value());
        CHECK(*r.trap_avoidance_margin >= 0.1 - 1e-9);
        // Trap geometry at every inserted state.
        const auto plain = plain_value_iteration(ext.mdp);
        for (const auto& bp : ext.params) {
            const auto& q = plain.Q.at(bp.mu_state);
            CHECK(q[0] - q[1] >= 0.1 - 1e-9);
        }
    }
}

TEST_CASE("extension errors") {
    const auto toy = build_toy();
    CHECK_THROWS_AS(parse_target(toy, "s_0", "A_1:0.5"), Error);
    CHECK_THROWS_AS(parse_target(toy, "s_0", "A_1=0.5,A_2=0.5"), ParseError);
    CHECK_THROWS_AS(parse_target(toy, "s_T+", "x:1"), Error);
    CHECK_THROWS_AS(make_target(toy, "s_0", {{"A_1", 0.0}, {"A_2", 1.0}}), Error);

    auto stochastic = toy;
    stochastic.states.at("s_0").atoms[0].next = {{"s_g", 0.5}, {"s_b", 0.5}};
    try {
        build_extension(stochastic, parse_target(toy, "s_0", "A_1:0.5,A_2:0.5"));
        FAIL("expected nondeterministic_atom");
    } catch (const Error& e) {
        CHECK(e.code() == "nondeterministic_atom");
    }

    auto renamed = toy;
    renamed.states.erase("s_b");
    const auto target = parse_target(toy, "s_0", "A_1:0.5,A_2:0.5");
    try {
        verify_extension(toy, renamed, target);
        FAIL("expected state_mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == "state_mismatch");
    }

    auto zero_gamma = toy;
    zero_gamma.gamma = 0.0;
    CHECK_THROWS_AS(build_extension(zero_gamma, target), InfeasibleError);
}

TEST_CASE("target serialization round-trips") {
    const auto toy = build_toy();
    const auto t = parse_target(toy, "s_0", "A_1:0.25,A_2:0.75");
    const auto back = target_from_json(toy, target_to_json(toy, t));
    CHECK(back.state_id == t.state_id);
    CHECK(back.masses == t.masses);
}

TEST_CASE("worst-case transform on the toy") {
    const auto toy = build_toy();
    const auto r = worst_case_transform(toy, 0.99);
    REQUIRE(r.report.j_plus.has_value());
    CHECK(std::abs(*r.report.j_plus - 0.99) < 1e-10);
    CHECK(std::abs(*r.report.j_minus - (-19.8)) < 1e-10);
    CHECK(r.report.certifies());
}

TEST_CASE("worst-case transform on a 3-chain against enumeration") {
    const auto chain = trap_chain_mdp(3, 1.0, -1.0, 0);
    const auto brute = oracle::enumerate_policies(chain);
    CHECK(brute.policies == 8);
    for (double eta : {0.9, 0.99}) {
        const auto r = worst_case_transform(chain, eta);
        CHECK(std::abs(*r.report.j_plus - brute.j_best) < 1e-10);
        CHECK(std::abs(*r.report.j_minus - brute.j_worst) < 1e-10);
        const double gap = (1.0 - eta) * (brute.j_best - brute.j_worst);
        CHECK(std::abs(*r.report.j_maxent - brute.j_worst) <= gap + 1e-6);
    }
    const auto near_one = worst_case_transform(chain, 1.0 - 1e-6);
    CHECK(std::abs(*near_one.report.j_maxent - brute.j_worst) < 1e-3);
    CHECK_THROWS(worst_case_transform(chain, 1.0));
}

TEST_CASE("report JSON has every field") {
    const auto toy = build_toy();
    const auto r = worst_case_transform(toy, 0.9);
    const auto doc = report_to_json(r.report);
    for (const char* key : {"kl_at_target", "plain_q_residual", "soft_v_residual", "trap_avoidance_margin",
                            "greedy_sets_preserved", "j_plus", "j_minus", "j_maxent", "params", "certified"})
        CHECK_MESSAGE(doc.find(std::string("\"") + key + "\"") != std::string::npos, key);
}
