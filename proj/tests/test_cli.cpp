#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "entropy_trap/cli.hpp"
#include "entropy_trap/environments.hpp"
#include "entropy_trap/landscape.hpp"
#include "json.hpp"

using namespace entropy_trap;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "entropy_trap_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        std::vector<std::string> cells;
        std::istringstream cs(line);
        std::string cell;
        while (std::getline(cs, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

int run(std::vector<std::string> args) { return run_command(args); }

}  // namespace

TEST_CASE("landscape export on the toy") {
    const auto toy = build_toy();
    const auto soft = soft_value_iteration(toy);
    const auto plain = plain_value_iteration(toy);
    CHECK(export_landscape(toy, soft, plain, std::string("s_0")).size() == 2);

    const auto rows = export_landscape(toy, soft, plain);
    CHECK(rows.size() == 6);
    for (const auto& r : rows) {
        CHECK((r.state_id == "s_0" || r.state_id == "s_g" || r.state_id == "s_b"));
        CHECK(r.policy_density == r.policy_mass / r.weight);
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const bool ordered = rows[i - 1].state_id < rows[i].state_id ||
                             (rows[i - 1].state_id == rows[i].state_id && rows[i - 1].lo < rows[i].lo);
        CHECK(ordered);
    }
    CHECK_THROWS_AS(export_landscape(toy, soft, plain, std::string("s_x")), LookupError);
    CHECK_THROWS_AS(export_landscape(toy, soft, plain, std::string("s_T+")), LookupError);

    const auto csv = landscape_csv(rows);
    CHECK(csv.rfind("state_id,atom_id,lo,hi,weight,q_soft,q_plain,policy_mass,policy_density\n", 0) == 0);
}

TEST_CASE("toy command writes the landscape") {
    const auto dir = scratch("toy");
    CHECK(run({"toy", "--alpha", "1", "--out", dir.string()}) == 0);
    const auto rows = csv_rows(slurp(dir / "landscape.csv"));
    int seen = 0;
    for (const auto& r : rows) {
        if (r[0] != "s_0") continue;
        const double qs = std::stod(r[5]), qp = std::stod(r[6]);
        if (r[1] == "A_1") {
            CHECK(std::abs(qs + 0.603) < 1e-3);
            CHECK(std::abs(qp - 0.99) < 1e-9);
        } else {
            CHECK(std::abs(qs + 0.304) < 1e-3);
            CHECK(std::abs(qp + 0.99) < 1e-9);
        }
        ++seen;
    }
    CHECK(seen == 2);
    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["version"] == kVersion);
    CHECK(manifest["command"] == "toy");
    CHECK(manifest["exit_code"] == 0);
    CHECK(manifest.contains("wall_time_seconds"));
    CHECK(manifest["config"]["argv"].size() == 5);
}

TEST_CASE("extend then verify, and a tampered extension fails") {
    const auto dir = scratch("extend");
    REQUIRE(run({"toy", "--out", (dir / "toy").string()}) == 0);
    const auto mdp = (dir / "toy" / "mdp.json").string();
    REQUIRE(run({"extend", "--mdp", mdp, "--state", "s_0", "--target", "A_1:0.01,A_2:0.99", "--out",
                 (dir / "ext").string()}) == 0);
    const auto report = json::parse(slurp(dir / "ext" / "report.json"));
    CHECK(report["kl_at_target"].get<double>() < 1e-6);
    CHECK(report["certified"] == true);

    const auto ext = (dir / "ext" / "extended.json").string();
    const auto target = (dir / "ext" / "target.json").string();
    CHECK(run({"verify", "--original", mdp, "--extended", ext, "--target", target, "--out",
               (dir / "ok").string()}) == 0);

    auto doc = json::parse(slurp(ext));
    doc["states"]["s_0::A_1::muT"]["terminal_reward"] = doc["states"]["s_0::A_1::muT"]["terminal_reward"].get<double>() + 1.0;
    {
        std::ofstream out(dir / "tampered.json");
        out << doc.dump();
    }
    CHECK(run({"verify", "--original", mdp, "--extended", (dir / "tampered.json").string(), "--target", target,
               "--out", (dir / "bad").string()}) == 2);
    const auto bad = json::parse(slurp(dir / "bad" / "report.json"));
    CHECK(bad["kl_at_target"].get<double>() > 1e-6);
    CHECK(json::parse(slurp(dir / "bad" / "manifest.json"))["error"]["code"] == "not_certified");
}

TEST_CASE("error exits") {
    const auto dir = scratch("errors");
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({}) == 2);
    CHECK(run({"validate", "--mdp", (dir / "missing.json").string(), "--out", dir.string()}) == 2);
    CHECK(json::parse(slurp(dir / "manifest.json"))["error"]["code"] == "unreadable_input");
    {
        std::ofstream out(dir / "broken.json");
        out << R"({"gamma": 0.9, "start": "a", "states": {"a": {"atoms": [{"id": "x", "lo": 0, "hi": 1, "next": {"s_x": 1}}]}}})";
    }
    CHECK(run({"validate", "--mdp", (dir / "broken.json").string(), "--out", dir.string()}) == 2);
    CHECK(json::parse(slurp(dir / "manifest.json"))["error"]["code"] == "validation_error");
    CHECK(run({"landscape", "--env", "toy", "--state", "nope", "--out", dir.string()}) == 2);
    CHECK(run({"train", "--env", "toy", "--lr", "0", "--out", dir.string()}) == 2);
}

TEST_CASE("invariant: CLI determinism") {
    const auto a = scratch("det_a"), b = scratch("det_b");
    for (const auto& dir : {a, b})
        REQUIRE(run({"train", "--env", "trap-chain-extended", "--length", "3", "--seeds", "0,1", "--episodes", "300",
                     "--mode", "adaent", "--out", dir.string()}) == 0);
    for (const char* f : {"training_log.csv", "log_seed0.csv", "log_seed1.csv", "tables_seed0.json", "tables_seed1.json"})
        CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
    const auto merged = csv_rows(slurp(a / "training_log.csv"));
    CHECK(merged[0][0] == "seed");
    CHECK(merged[1][0] == "0");
    CHECK(merged.back()[0] == "1");

    CHECK(run({"eval", "--env", "trap-chain-extended", "--length", "3", "--tables", (a / "tables_seed0.json").string(),
               "--mode", "adaent", "--out", (a / "eval").string()}) == 0);
    CHECK(json::parse(slurp(a / "eval" / "eval.json"))["selection"] == "gated");
}

TEST_CASE("manifest is sufficient to re-run") {
    const auto dir = scratch("rerun");
    REQUIRE(run({"worst-case", "--env", "trap-chain", "--length", "3", "--eta", "0.9", "--out", dir.string()}) == 0);
    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    const auto argv = manifest["config"]["argv"].get<std::vector<std::string>>();
    const auto first = slurp(dir / "report.json");
    REQUIRE(run(argv) == 0);
    CHECK(slurp(dir / "report.json") == first);
    const auto report = json::parse(first);
    CHECK(std::abs(report["j_plus"].get<double>() - 2.9701) < 1e-9);
}

TEST_CASE("ENTROPY_TRAP_OUT sets the default output root") {
    const auto dir = scratch("envroot");
    ::setenv("ENTROPY_TRAP_OUT", dir.string().c_str(), 1);
    CHECK(run({"gauss-toy", "--samples", "1000", "--seed", "3"}) == 0);
    ::unsetenv("ENTROPY_TRAP_OUT");
    CHECK(fs::exists(dir / "gauss-toy" / "gauss_toy.json"));
    CHECK(fs::exists(dir / "gauss-toy" / "manifest.json"));
}

TEST_CASE("landscape and validate commands") {
    const auto dir = scratch("landscape");
    CHECK(run({"landscape", "--env", "toy", "--state", "s_0", "--out", dir.string()}) == 0);
    CHECK(csv_rows(slurp(dir / "landscape.csv")).size() == 3);
    CHECK(run({"validate", "--env", "obstacle2d", "--out", (dir / "v").string()}) == 0);
    CHECK(json::parse(slurp(dir / "v" / "validation.json"))["ok"] == true);
}
