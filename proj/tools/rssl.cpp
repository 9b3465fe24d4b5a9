#include "rssl/config.hpp"
#include "rssl/errors.hpp"
#include "rssl/evaluation.hpp"
#include "rssl/experiments.hpp"
#include "rssl/parallel.hpp"
#include "rssl/selfcheck.hpp"
#include "rssl/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kBadConfig = 2;
constexpr int kNonFinite = 3;
constexpr int kBadWeights = 4;

struct PretrainArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

struct ProbeArgs {
    std::string weights;
    std::string config;
    std::string head;
    std::string head_out;
    std::string protocol;
    bool robust = false;
    std::vector<std::string> eps;
    std::string report;
    std::string run_id;
    std::optional<std::uint64_t> seed;
};

struct SuiteArgs {
    std::string preset;
    std::string presets_dir = "configs/presets";
    std::string out = "suites";
    std::uint64_t seed = 0;
};

rssl::RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    rssl::RunConfig cfg = rssl::load_run_config(path);
    if (seed) {
        cfg.set_seed(*seed);
    }
    return cfg;
}

void print_epoch(const rssl::EpochMetrics& m) {
    std::cout << "epoch " << std::setw(3) << m.epoch << "  loss " << std::setw(12) << m.loss_mean << "  rank "
              << std::setw(7) << m.effective_rank << "  " << m.wall_clock_seconds << "s" << std::endl;
}

int cmd_pretrain(const PretrainArgs& a) {
    rssl::RunConfig cfg;
    rssl::Dataset data;
    try {
        cfg = load_config(a.config, a.seed);
        data = rssl::load_dataset(cfg.dataset);
        cfg.train.encoder.input_dim = data.train.shape.pixels();
        cfg.train.validate();
    } catch (const rssl::Error& e) {
        std::cerr << "rssl pretrain: " << e.what() << '\n';
        return kBadConfig;
    }
    const std::filesystem::path root = a.out.empty() ? cfg.out : std::filesystem::path(a.out);
    try {
        const rssl::RunManifest m = rssl::run_pretraining(data.train, cfg.train, rssl::to_json(cfg), root, &data.test,
                                                          a.quiet ? rssl::EpochCallback{} : print_epoch);
        std::cout << "run " << m.run_id << " completed in " << m.stats.seconds << "s: "
                  << m.stats.optimizer_steps << " optimizer steps\n"
                  << "  " << (root / m.run_id).string() << '\n';
    } catch (const rssl::NonFiniteLoss& e) {
        std::cerr << "rssl pretrain: " << e.what() << '\n';
        return kNonFinite;
    } catch (const rssl::ConfigError& e) {
        std::cerr << "rssl pretrain: " << e.what() << '\n';
        return kBadConfig;
    }
    return kOk;
}

void print_table(const std::vector<rssl::AccuracyRow>& rows) {
    std::cout << "protocol  n   r-LE  eps      clean    robust\n";
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(10) << r.protocol << std::setw(4) << r.n << std::setw(6)
                  << (r.robust_probe ? "yes" : "no") << std::setw(9) << rssl::to_string(r.epsilon) << std::right
                  << std::fixed << std::setprecision(4) << r.clean_acc << "   " << r.robust_acc << '\n';
        std::cout.unsetf(std::ios::floatfield);
    }
}

// Shared by probe (trains a head) and eval (loads one).
int cmd_probe_or_eval(const ProbeArgs& a, bool train_head) {
    rssl::RunConfig cfg;
    rssl::Dataset data;
    try {
        cfg = load_config(a.config, a.seed);
        data = rssl::load_dataset(cfg.dataset);
        cfg.train.encoder.input_dim = data.train.shape.pixels();
        if (!a.protocol.empty()) {
            if (a.protocol == "central") {
                cfg.probe.protocol = rssl::ProbeProtocol::central;
                cfg.probe.n = 1;
            } else if (a.protocol.rfind("agg:", 0) == 0) {
                cfg.probe.protocol = rssl::ProbeProtocol::aggregate;
                cfg.probe.n = std::stoul(a.protocol.substr(4));
            } else {
                throw rssl::ConfigError("--protocol must be central or agg:<n>");
            }
        }
        if (a.robust) {
            cfg.probe.robust = true;
        }
        if (!a.eps.empty()) {
            cfg.eval.grid.clear();
            for (const auto& e : a.eps) {
                cfg.eval.grid.push_back(rssl::parse_epsilon(e));
            }
        }
        cfg.probe.validate();
    } catch (const rssl::Error& e) {
        std::cerr << "rssl: " << e.what() << '\n';
        return kBadConfig;
    } catch (const std::logic_error& e) {
        std::cerr << "rssl: bad --protocol value: " << e.what() << '\n';
        return kBadConfig;
    }

    rssl::ParameterStore encoder;
    rssl::ParameterStore head;
    try {
        encoder = rssl::init_encoder(cfg.train.encoder, 0);
        rssl::load_params(encoder, a.weights);
        if (!train_head) {
            head = rssl::init_classifier(cfg.train.encoder.embed_dim, data.num_classes);
            rssl::load_params(head, a.head);
        }
    } catch (const rssl::FormatError& e) {
        std::cerr << "rssl: " << e.what() << '\n';
        return kBadWeights;
    }

    if (train_head) {
        const rssl::ProbeResult probe =
            rssl::train_probe(cfg.train.encoder, encoder, data.train, data.num_classes, cfg.probe);
        head = probe.head;
        std::cout << "probe trained: " << cfg.probe.epochs << " epochs, final loss " << probe.epoch_loss.back()
                  << ", train accuracy " << probe.train_accuracy << '\n';
        if (!a.head_out.empty()) {
            rssl::save_params(head, a.head_out);
        }
    }

    rssl::EvalOptions opts = cfg.eval;
    const std::filesystem::path weights(a.weights);
    opts.run_id = a.run_id.empty() ? weights.parent_path().filename().string() : a.run_id;
    const std::vector<rssl::AccuracyRow> rows =
        rssl::evaluate(cfg.train.encoder, encoder, head, data.test, cfg.probe, opts);
    const std::filesystem::path report =
        a.report.empty() ? weights.parent_path() / "report.csv" : std::filesystem::path(a.report);
    rssl::append_report_csv(rows, report);
    print_table(rows);
    return kOk;
}

int cmd_selfcheck(const std::string& fault) {
    if (fault == "logdet-grad-sign") {
        rssl::ad::set_logdet_gradient_fault(true);
    } else if (!fault.empty()) {
        std::cerr << "rssl selfcheck: unknown fault '" << fault << "'\n";
        return kBadConfig;
    }
    const rssl::SelfCheckReport r = rssl::run_selfcheck();
    for (const auto& s : r.suites) {
        std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << '\n';
    }
    std::cout << "max gradient relative error: " << r.max_gradient_rel_error << '\n';
    if (!r.passed()) {
        for (const auto& s : r.suites) {
            if (!s.passed) {
                std::cerr << "selfcheck failed: " << s.name << '\n';
            }
        }
        return kFailed;
    }
    return kOk;
}

int cmd_suite(const SuiteArgs& a) {
    try {
        const rssl::ComparisonReport report = rssl::run_suite(a.preset, a.seed, a.presets_dir, a.out, &std::cout);
        std::cout << report.summary;
        return report.complete ? kOk : kFailed;
    } catch (const rssl::NonFiniteLoss& e) {
        std::cerr << "rssl suite: " << e.what() << '\n';
        return kNonFinite;
    } catch (const rssl::ConfigError& e) {
        std::cerr << "rssl suite: " << e.what() << '\n';
        return kBadConfig;
    }
}

} // namespace

int main(int argc, char** argv) {
    rssl::set_thread_limit(rssl::configured_threads());
    CLI::App app{"Adversarial self-supervised learning at desk scale"};
    app.require_subcommand(1);

    PretrainArgs pre;
    auto* pretrain = app.add_subcommand("pretrain", "Pretrain an encoder");
    pretrain->add_option("--config", pre.config, "RunConfig JSON")->required();
    pretrain->add_option("--out", pre.out, "Output root (default: config 'out')");
    pretrain->add_option("--seed", pre.seed, "Seed for every random stream");
    pretrain->add_flag("--quiet", pre.quiet, "No per-epoch output");

    ProbeArgs probe;
    auto* probe_cmd = app.add_subcommand("probe", "Train a linear probe on a frozen encoder and evaluate it");
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained probe under attack");
    for (auto* c : {probe_cmd, eval_cmd}) {
        c->add_option("--weights", probe.weights, "Encoder weights (RSSL1)")->required();
        c->add_option("--config", probe.config, "RunConfig JSON")->required();
        c->add_option("--protocol", probe.protocol, "central or agg:<n>");
        c->add_flag("--robust", probe.robust, "Robust linear evaluation (r-LE)");
        c->add_option("--eps", probe.eps, "Attack radii as a/b (repeatable)");
        c->add_option("--report", probe.report, "Report CSV to append to");
        c->add_option("--run-id", probe.run_id, "run_id column (default: weights directory)");
        c->add_option("--seed", probe.seed, "Seed for every random stream");
    }
    probe_cmd->add_option("--head-out", probe.head_out, "Write the trained head (RSSL1)");
    eval_cmd->add_option("--head", probe.head, "Probe head weights (RSSL1)")->required();

    std::string fault;
    auto* selfcheck = app.add_subcommand("selfcheck", "Run the numeric self-check suites");
    selfcheck->add_option("--inject-fault", fault)->group("");

    SuiteArgs suite;
    auto* suite_cmd = app.add_subcommand("suite", "Run an experiment preset");
    suite_cmd->add_option("--preset", suite.preset, "vuln_baseline | pgd_vs_free | crop_vs_patch | rle_ablation")
        ->required();
    suite_cmd->add_option("--presets-dir", suite.presets_dir, "Directory of preset JSON files");
    suite_cmd->add_option("--out", suite.out, "Output root");
    suite_cmd->add_option("--seed", suite.seed, "Suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kBadConfig;
    }

    try {
        if (*pretrain) {
            return cmd_pretrain(pre);
        }
        if (*probe_cmd) {
            return cmd_probe_or_eval(probe, true);
        }
        if (*eval_cmd) {
            return cmd_probe_or_eval(probe, false);
        }
        if (*selfcheck) {
            return cmd_selfcheck(fault);
        }
        if (*suite_cmd) {
            return cmd_suite(suite);
        }
    } catch (const rssl::Error& e) {
        std::cerr << "rssl: " << e.what() << '\n';
        return kFailed;
    }
    return kOk;
}
