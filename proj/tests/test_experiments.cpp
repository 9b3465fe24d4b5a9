#include "oracles.hpp"

#include "rssl/config.hpp"
#include "rssl/errors.hpp"
#include "rssl/experiments.hpp"

#include <doctest.h>

#include <sstream>

using namespace rssl;

namespace {

nlohmann::json tiny_preset() {
    return nlohmann::json::parse(R"({
      "description": "tiny",
      "base": {
        "dataset": {"kind": "synthetic", "num_classes": 2, "samples_per_class": 30, "test_per_class": 10,
                    "height": 4, "width": 4, "channels": 1},
        "encoder": {"hidden": [8], "embed_dim": 3},
        "augment": {"mode": "crop", "crop_count": 2},
        "train": {"scheme": "empssl_free", "total_epochs": 6, "replays": 3, "batch_size": 5,
                  "attack": {"epsilon": "8/255", "steps": 2}, "loss": {"lambda": 0.3}},
        "probe": {"epochs": 3, "batch_size": 8, "attack": {"epsilon": "8/255", "steps": 2}},
        "eval": {"grid": ["4/255", "8/255"], "attack_steps": 3}
      },
      "members": [
        {"name": "free", "probes": [{"name": "standard"}, {"name": "rle", "robust": true}]},
        {"name": "pgd", "overrides": {"train": {"scheme": "empssl_pgd", "replays": 1}}}
      ],
      "claims": [
        {"kind": "clean_above_chance", "run": "free/standard", "points": 0},
        {"kind": "robust_within", "a": "free/rle", "b": "pgd/standard", "eps": "8/255", "points": 100},
        {"kind": "matched_updates", "a": "free/standard", "b": "pgd/standard"}
      ]
    })");
}

// comparison.csv with the wall_clock_seconds column blanked.
std::string without_wall_clock(const std::string& csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    std::size_t col = std::string::npos;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string x;
        while (std::getline(ss, x, ',')) {
            f.push_back(x);
        }
        if (col == std::string::npos) {
            col = static_cast<std::size_t>(std::find(f.begin(), f.end(), "wall_clock_seconds") - f.begin());
        }
        if (col < f.size()) {
            f[col].clear();
        }
        for (const auto& v : f) {
            out << v << ',';
        }
        out << '\n';
    }
    return out.str();
}

} // namespace

TEST_SUITE("experiments") {

TEST_CASE("preset lookup errors") {
    CHECK_THROWS_AS(load_preset("", PRESETS_DIR), ConfigError);
    CHECK_THROWS_AS(load_preset("no_such_preset", PRESETS_DIR), ConfigError);
    const auto dir = oracle::scratch_dir("suite-empty");
    CHECK_THROWS_AS(run_suite("", 0, PRESETS_DIR, dir), ConfigError);
    CHECK_THROWS_AS(run_suite("x", nlohmann::json::object(), 0, dir), ConfigError);
}

TEST_CASE("shipped presets are valid configs") {
    for (const char* name : kPresetNames) {
        CAPTURE(name);
        const nlohmann::json doc = load_preset(name, PRESETS_DIR);
        REQUIRE(doc.contains("members"));
        CHECK(!doc.at("claims").empty());
        for (const auto& m : doc["members"]) {
            nlohmann::json cfg = doc["base"];
            if (m.contains("overrides")) {
                cfg.merge_patch(m["overrides"]);
            }
            CHECK_NOTHROW(parse_run_config(cfg).train.validate());
        }
    }
}

TEST_CASE("bad member configs fail before any training") {
    nlohmann::json doc = tiny_preset();
    doc["members"][1]["overrides"]["train"]["total_epochs"] = "many";
    const auto dir = oracle::scratch_dir("suite-bad");
    CHECK_THROWS_AS(run_suite("tiny", doc, 0, dir), ConfigError);
    CHECK(std::filesystem::is_empty(dir));
}

TEST_CASE("a tiny suite runs, names both runs in every claim, and reproduces") {
    const auto dir = oracle::scratch_dir("suite-tiny");
    const ComparisonReport a = run_suite("tiny", tiny_preset(), 3, dir);
    CHECK(a.complete);
    CHECK(a.directory == dir / "tiny-s3");
    REQUIRE(a.rows.size() == 3);
    CHECK(a.row("free", "rle").robust_probe);
    CHECK(a.row("free", "standard").optimizer_steps == a.row("pgd", "standard").optimizer_steps);
    CHECK(a.row("free", "standard").run_id == a.row("free", "rle").run_id);
    CHECK(a.row("free", "standard").replays == 3);
    CHECK(a.claims.size() >= 3);
    for (const auto& c : a.claims) {
        CAPTURE(c.statement);
        CHECK(c.statement.find(c.run_a) != std::string::npos);
        if (c.run_b != "chance") {
            CHECK(c.statement.find(c.run_b) != std::string::npos);
        }
    }
    CHECK(a.claims_hold());
    for (const auto& r : a.rows) {
        CHECK(std::filesystem::exists(dir / "tiny-s3" / r.run_id / "manifest.json"));
        CHECK(std::filesystem::exists(dir / "tiny-s3" / r.run_id / "report.csv"));
        CHECK(r.robust_acc.size() == 2);
        CHECK(r.robust_acc[1] <= r.robust_acc[0]);
        CHECK(r.robust_acc[0] <= r.clean_acc);
    }
    CHECK(oracle::slurp(dir / "tiny-s3" / "summary.txt") == a.summary);

    const ComparisonReport b = run_suite("tiny", tiny_preset(), 3, dir);
    CHECK(b.directory == dir / "tiny-s3-r2");
    CHECK(without_wall_clock(oracle::slurp(a.directory / "comparison.csv")) ==
          without_wall_clock(oracle::slurp(b.directory / "comparison.csv")));
    for (const auto& r : a.rows) {
        CHECK(oracle::slurp(a.directory / r.run_id / "weights.rssl1") ==
              oracle::slurp(b.directory / r.run_id / "weights.rssl1"));
        CHECK(oracle::slurp(a.directory / r.run_id / "report.csv") ==
              oracle::slurp(b.directory / r.run_id / "report.csv"));
    }
}

TEST_CASE("a failing claim is reported, not thrown") {
    nlohmann::json doc = tiny_preset();
    doc["claims"] = nlohmann::json::array({{{"kind", "clean_above_chance"}, {"run", "pgd/standard"}, {"points", 60}}});
    const auto dir = oracle::scratch_dir("suite-claim");
    const ComparisonReport r = run_suite("tiny", doc, 0, dir);
    CHECK(r.complete);
    CHECK(!r.claims_hold());
    CHECK(r.summary.find("FAILS") != std::string::npos);
}

} // TEST_SUITE
