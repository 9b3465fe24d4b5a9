// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "rssl/attacks.hpp"
#include "rssl/config.hpp"
#include "rssl/errors.hpp"
#include "rssl/experiments.hpp"
#include "rssl/parallel.hpp"
#include "rssl/rng.hpp"
#include "rssl/selfcheck.hpp"
#include "rssl/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace rssl;

namespace {

int failures = 0;

void verdict(int id, const std::string& title, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << detail << std::endl;
    if (!ok) {
        ++failures;
    }
}

std::string num(double v, int precision = 3) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(precision);
    os << v;
    return os.str();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const SuiteResult& suite(const SelfCheckReport& r, const std::string& name) {
    for (const auto& s : r.suites) {
        if (s.name == name) {
            return s;
        }
    }
    throw std::runtime_error("selfcheck has no suite " + name);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Blanks the last CSV column (wall_clock_seconds) of every line.
std::string drop_last_column(const std::string& csv) {
    std::istringstream in(csv);
    std::string out;
    std::string line;
    while (std::getline(in, line)) {
        out += line.substr(0, line.rfind(',')) + '\n';
    }
    return out;
}

nlohmann::json member_config(const nlohmann::json& preset, const std::string& member) {
    for (const auto& m : preset.at("members")) {
        if (m.at("name") == member) {
            nlohmann::json cfg = preset.at("base");
            if (m.contains("overrides")) {
                cfg.merge_patch(m["overrides"]);
            }
            return cfg;
        }
    }
    throw ConfigError("no member " + member);
}

// Every step of training-style and evaluation-style attacks on an SSL
// objective, and a long run of free steps, stay in the eps ball.
double worst_ball_excess(std::uint64_t seed) {
    EncoderSpec spec;
    spec.input_dim = 48;
    spec.hidden = {16};
    spec.embed_dim = 6;
    const ParameterStore params = init_encoder(spec, seed);
    Rng rng(derive_seed(seed, {stream::data, 99}));
    double worst = -1.0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t b = 4;
        Matrix x(spec.input_dim, 2 * b);
        for (double& v : x.values()) {
            v = rng.uniform();
        }
        SslBatch batch;
        batch.batch = b;
        batch.views = 2;
        const PixelObjective obj = ssl_attack_objective(spec, params, batch, {});
        const double eps = (1.0 + trial) / 255.0;
        for (const AttackConfig& cfg : {AttackConfig::training(eps, 5), AttackConfig::evaluation(eps, 20)}) {
            pgd(obj, x, cfg, derive_seed(seed, {stream::attack, static_cast<std::uint64_t>(trial)}), nullptr,
                [&](int, const Matrix& d) { worst = std::max(worst, max_abs(d) - eps); });
        }
        PerturbationBuffer buf(b, 2, spec.input_dim);
        for (int k = 0; k < 30; ++k) {
            Matrix g(spec.input_dim, 2 * b);
            for (double& v : g.values()) {
                v = rng.uniform(-1.0, 1.0);
            }
            free_step(g, buf, eps);
            worst = std::max(worst, max_abs(buf.delta()) - eps);
        }
    }
    return worst;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rssl acceptance run"};
    fs::path presets = RSSL_PRESETS_DIR;
    fs::path out = fs::temp_directory_path() / "rssl-acceptance";
    std::uint64_t seed = 0;
    app.add_option("--presets", presets, "preset directory");
    app.add_option("--out", out, "scratch directory for runs (wiped first)");
    app.add_option("--seed", seed, "suite seed");
    CLI11_PARSE(app, argc, argv);

    fs::remove_all(out);
    fs::create_directories(out);

    try {
        // 1-4: exact oracles.
        auto t0 = std::chrono::steady_clock::now();
        const SelfCheckReport self = run_selfcheck(seed);
        const double self_s = seconds_since(t0);
        const auto& grad = suite(self, "gradient-check");
        verdict(1, "gradient correctness", grad.passed && self_s < 10.0, grad.detail);
        const auto& det = suite(self, "determinant-lemma");
        verdict(2, "TCR closed forms", det.passed, det.detail);
        const auto& pgd_s = suite(self, "pgd-closed-form");
        const double ball = worst_ball_excess(seed);
        verdict(3, "PGD optimality", pgd_s.passed && ball <= 0.0,
                pgd_s.detail + "; SSL/eval/free attacks max ball excess " + sci(std::max(0.0, ball)));
        const auto& acc = suite(self, "accounting");
        verdict(4, "free-training accounting", acc.passed, acc.detail);

        // 5: invariance-only collapses, full objective does not.
        {
            const nlohmann::json base = load_preset("vuln_baseline", presets).at("base");
            nlohmann::json doc = base;
            doc["train"]["scheme"] = "empssl_pgd";
            doc["train"]["attack"]["epsilon"] = 0;
            doc["train"]["total_epochs"] = 45;
            doc["train"]["optimizer"]["lr"] = 0.03;
            RunConfig cfg = parse_run_config(doc);
            cfg.set_seed(seed);
            const Dataset data = load_dataset(cfg.dataset);
            t0 = std::chrono::steady_clock::now();
            std::map<std::string, double> rank;
            for (auto terms : {ObjectiveTerms::invariance_only, ObjectiveTerms::full}) {
                TrainConfig tc = cfg.train;
                tc.terms = terms;
                const PretrainResult r = pretrain(data.train, tc, &data.test);
                rank[terms == ObjectiveTerms::full ? "full" : "inv"] = r.metrics.back().effective_rank;
            }
            const double secs = seconds_since(t0);
            const double half_d = static_cast<double>(cfg.train.encoder.embed_dim) / 2.0;
            verdict(5, "collapse dichotomy", rank["inv"] <= 1.5 && rank["full"] >= half_d && secs < 300.0,
                    "held-out effective rank invariance-only " + num(rank["inv"]) + " (<= 1.5), full " +
                        num(rank["full"]) + " (>= " + num(half_d, 1) + "), " + num(secs, 1) + " s");
        }

        // 6-9, 11: the preset suites.
        std::map<std::string, ComparisonReport> reports;
        std::map<std::string, double> suite_seconds;
        for (const char* name : {"vuln_baseline", "rle_ablation", "pgd_vs_free", "crop_vs_patch"}) {
            t0 = std::chrono::steady_clock::now();
            reports[name] = run_suite(name, seed, presets, out);
            suite_seconds[name] = seconds_since(t0);
            std::cout << "  suite " << name << " finished in " << num(suite_seconds[name], 1) << " s" << std::endl;
        }
        const Epsilon e8{8, 255};

        {
            const ComparisonReport& r = reports["vuln_baseline"];
            const double chance = 1.0 / static_cast<double>(r.num_classes);
            bool ok = suite_seconds["vuln_baseline"] < 600.0;
            std::string detail;
            for (const char* m : {"simclr_std", "empssl_std"}) {
                const ComparisonRow& row = r.row(m, "standard");
                const double rob = r.robust(row, e8);
                ok = ok && rob <= chance + 0.05 && row.clean_acc >= chance + 0.30;
                detail += std::string(m) + " clean " + num(100 * row.clean_acc, 1) + "%, robust@8/255 " +
                          num(100 * rob, 1) + "%; ";
            }
            verdict(6, "vulnerability mirror", ok,
                    detail + "chance " + num(100 * chance, 1) + "%, " + num(suite_seconds["vuln_baseline"], 1) + " s");
        }
        {
            const ComparisonReport& r = reports["rle_ablation"];
            const double adv = r.robust(r.row("empssl_adv", "rle"), e8);
            const ComparisonReport& v = reports["vuln_baseline"];
            const double std_rob = v.robust(v.row("empssl_std", "standard"), e8);
            verdict(7, "robustness recovery", adv - std_rob >= 0.15 && suite_seconds["rle_ablation"] < 900.0,
                    "empssl_adv r-LE robust@8/255 " + num(100 * adv, 1) + "% vs criterion-6 empssl_std " +
                        num(100 * std_rob, 1) + "% (gain " + num(100 * (adv - std_rob), 1) + " points, need 15), " +
                        num(suite_seconds["rle_ablation"], 1) + " s");
        }
        {
            const ComparisonReport& r = reports["rle_ablation"];
            bool ok = true;
            std::string detail;
            for (const char* m : {"simclr_adv", "empssl_adv"}) {
                const double rle = r.robust(r.row(m, "rle"), e8);
                const double st = r.robust(r.row(m, "standard"), e8);
                ok = ok && rle >= st;
                detail += std::string(m) + " r-LE " + num(100 * rle, 1) + "% vs standard " + num(100 * st, 1) + "%; ";
            }
            verdict(8, "r-LE ablation", ok, detail.substr(0, detail.size() - 2));
        }
        {
            const ComparisonReport& r = reports["pgd_vs_free"];
            const ComparisonRow& fr = r.row("free", "rle");
            const ComparisonRow& pg = r.row("pgd", "rle");
            const double ratio = fr.wall_clock_seconds / pg.wall_clock_seconds;
            const double gap = r.robust(fr, e8) - r.robust(pg, e8);
            const bool ok = fr.optimizer_steps == pg.optimizer_steps && ratio <= 0.6 && gap >= -0.05;
            verdict(9, "efficiency mirror", ok,
                    "optimizer steps " + std::to_string(fr.optimizer_steps) + " vs " +
                        std::to_string(pg.optimizer_steps) + ", wall clock " + num(fr.wall_clock_seconds, 1) +
                        " s vs " + num(pg.wall_clock_seconds, 1) + " s (ratio " + num(ratio) +
                        "), robust@8/255 " + num(100 * r.robust(fr, e8), 1) + "% vs " +
                        num(100 * r.robust(pg, e8), 1) + "%");
        }

        // 10: same (config, seed) under 1 and 4 threads, twice each.
        {
            nlohmann::json doc = member_config(load_preset("pgd_vs_free", presets), "free");
            doc["dataset"]["samples_per_class"] = 120;
            doc["dataset"]["test_per_class"] = 20;
            doc["train"]["total_epochs"] = 3;
            RunConfig cfg = parse_run_config(doc);
            cfg.set_seed(seed);
            const Dataset data = load_dataset(cfg.dataset);
            std::vector<std::pair<std::string, std::string>> outputs;
            std::string detail;
            for (std::size_t threads : {1, 1, 4, 4}) {
                set_thread_limit(threads);
                const RunManifest m = run_pretraining(data.train, cfg.train, to_json(cfg), out / "determinism",
                                                      &data.test);
                outputs.emplace_back(read_file(m.weights_path), drop_last_column(read_file(m.metrics_path)));
                detail += m.run_id + "@" + std::to_string(threads) + " ";
            }
            set_thread_limit(configured_threads());
            bool ok = !outputs[0].first.empty();
            for (const auto& o : outputs) {
                ok = ok && o == outputs[0];
            }
            verdict(10, "determinism", ok,
                    "runs " + detail + "weights " + std::to_string(outputs[0].first.size()) +
                        " bytes, metrics identical except wall_clock_seconds");
        }

        // 11: every evaluated model in every suite.
        {
            bool ok = true;
            std::size_t models = 0;
            std::string worst;
            for (const auto& [name, r] : reports) {
                for (const auto& row : r.rows) {
                    ++models;
                    double prev = row.clean_acc;
                    for (double a : row.robust_acc) {
                        if (a > prev) {
                            ok = false;
                            worst += name + "/" + row.member + "/" + row.probe + " ";
                        }
                        prev = a;
                    }
                }
            }
            verdict(11, "monotonicity", ok,
                    std::to_string(models) + " models over eps {0, 4/255, 8/255, 16/255}" +
                        (ok ? std::string(", all non-increasing") : ", violated by " + worst));
        }
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance run aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
    return failures == 0 ? 0 : 1;
}
