#include "oracles.hpp"

#include "rssl/data.hpp"
#include "rssl/errors.hpp"
#include "rssl/evaluation.hpp"
#include "rssl/training.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace rssl;

namespace {

ImageBatch tiny_data(std::size_t per_class = 20) {
    ContentStyleSpec ds;
    ds.num_classes = 2;
    ds.samples_per_class = per_class;
    ds.shape = {4, 4, 1};
    ds.seed = 1;
    return generate(ds);
}

TrainConfig tiny_config(TrainScheme scheme) {
    TrainConfig cfg;
    cfg.scheme = scheme;
    cfg.total_epochs = 6;
    cfg.replays = is_free(scheme) ? 3 : 1;
    cfg.batch_size = 4;
    cfg.augment = AugmentSpec::crops(2);
    cfg.encoder.input_dim = 16;
    cfg.encoder.hidden = {6};
    cfg.encoder.embed_dim = 3;
    cfg.loss.lambda = 0.3;
    cfg.seed = 2;
    return cfg;
}

double step_sgd(double theta, double lr) {
    ParameterStore p;
    p.add("t", Matrix{{theta}});
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd_momentum;
    cfg.learning_rate = lr;
    cfg.momentum = 0.0;
    Optimizer opt(cfg, p);
    const std::vector<Matrix> g{Matrix{{theta}}};
    opt.step(p, g);
    return p.get("t")(0, 0);
}

} // namespace

TEST_SUITE("training") {

TEST_CASE("sgd on 1/2 theta^2") {
    CHECK(step_sgd(1.0, 0.1) == doctest::Approx(0.9).epsilon(1e-15));
    ParameterStore p;
    p.add("t", Matrix{{2.0, -1.0}});
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd_momentum;
    Optimizer opt(cfg, p);
    const std::vector<Matrix> zero{Matrix(1, 2, 0.0)};
    opt.step(p, zero);
    CHECK(p.get("t") == Matrix{{2.0, -1.0}});
    CHECK(p.update_count() == 1);
}

TEST_CASE("sgd momentum recurrence") {
    ParameterStore p;
    p.add("t", Matrix{{1.0}});
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd_momentum;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.9;
    Optimizer opt(cfg, p);
    double theta = 1.0;
    double v = 0.0;
    for (int t = 0; t < 5; ++t) {
        const std::vector<Matrix> g{Matrix{{p.get("t")(0, 0)}}};
        opt.step(p, g);
        v = 0.9 * v + theta;
        theta -= 0.1 * v;
        CHECK(p.get("t")(0, 0) == doctest::Approx(theta).epsilon(1e-15));
    }
}

TEST_CASE("adam on 1/2 theta^2, three steps") {
    ParameterStore p;
    p.add("t", Matrix{{1.0}});
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::adam;
    cfg.learning_rate = 0.1;
    Optimizer opt(cfg, p);
    // hand recurrence, numpy
    const double want[] = {0.900000001, 0.8004122297123382, 0.701586274504415};
    for (double w : want) {
        const std::vector<Matrix> g{Matrix{{p.get("t")(0, 0)}}};
        opt.step(p, g);
        CHECK(std::abs(p.get("t")(0, 0) - w) < 1e-12);
    }
    CHECK(opt.steps() == 3);
    CHECK(p.update_count() == 3);
    const std::vector<Matrix> bad{Matrix(2, 1)};
    CHECK_THROWS_AS(opt.step(p, bad), ShapeMismatch);
}

TEST_CASE("config invariants") {
    TrainConfig cfg = tiny_config(TrainScheme::empssl_free);
    CHECK_NOTHROW(cfg.validate());
    cfg.total_epochs = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config(TrainScheme::empssl_pgd);
    cfg.replays = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config(TrainScheme::simclr_pgd);
    cfg.augment = AugmentSpec::crops(3);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config(TrainScheme::empssl_free);
    cfg.replays = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(tiny_config(TrainScheme::empssl_free).outer_epochs() == 2);
    CHECK_THROWS_AS(train_scheme_from_string("bogus"), ConfigError);
    for (auto s : {TrainScheme::empssl_pgd, TrainScheme::simclr_pgd, TrainScheme::empssl_free, TrainScheme::simclr_free}) {
        CHECK(train_scheme_from_string(to_string(s)) == s);
    }
    CHECK(train_scheme_from_string("cf_amc_ssl") == TrainScheme::empssl_free);
}

TEST_CASE("free accounting: N_ep = 30, m = 3, 10 batches per epoch") {
    const ImageBatch data = tiny_data();
    TrainConfig cfg = tiny_config(TrainScheme::empssl_free);
    cfg.total_epochs = 30;
    const PretrainResult free = pretrain(data, cfg);
    CHECK(free.stats.batches_per_epoch == 10);
    CHECK(free.stats.outer_epochs == 10);
    CHECK(free.stats.optimizer_steps == 300);
    CHECK(free.stats.delta_updates == 300);
    CHECK(free.params.update_count() == 300);
    CHECK(free.metrics.size() == 10);
    cfg.replays = 1;
    const PretrainResult one = pretrain(data, cfg);
    CHECK(one.stats.optimizer_steps == 300);
    CHECK(one.stats.delta_updates == 300);
    cfg.scheme = TrainScheme::empssl_pgd;
    cfg.attack = AttackConfig::training(8.0 / 255.0, 2);
    cfg.total_epochs = 3;
    const PretrainResult pgd = pretrain(data, cfg);
    CHECK(pgd.stats.optimizer_steps == 30);
    CHECK(pgd.stats.delta_updates == 60);
}

TEST_CASE("accounting holds for every scheme") {
    const ImageBatch data = tiny_data(10); // 20 images, batch 4: 5 batches
    for (auto s : {TrainScheme::empssl_pgd, TrainScheme::simclr_pgd, TrainScheme::empssl_free, TrainScheme::simclr_free}) {
        CAPTURE(to_string(s));
        const PretrainResult r = pretrain(data, tiny_config(s));
        CHECK(r.stats.optimizer_steps == 6 * 5);
        CHECK(r.params.update_count() == 6 * 5);
        CHECK(r.metrics.size() == (is_free(s) ? 2 : 6));
        for (const auto& m : r.metrics) {
            CHECK(m.scheme == to_string(s));
            CHECK(std::isfinite(m.loss_mean));
            CHECK(m.effective_rank >= 1.0);
        }
    }
}

TEST_CASE("partial batches are dropped") {
    const ImageBatch data = tiny_data(11); // 22 images, batch 4
    const PretrainResult r = pretrain(data, tiny_config(TrainScheme::empssl_pgd));
    CHECK(r.stats.batches_per_epoch == 5);
}

TEST_CASE("same seed gives identical parameters and metrics") {
    const ImageBatch data = tiny_data(10);
    for (auto s : {TrainScheme::empssl_free, TrainScheme::simclr_pgd}) {
        const PretrainResult a = pretrain(data, tiny_config(s));
        const PretrainResult b = pretrain(data, tiny_config(s));
        CHECK(a.params == b.params);
        REQUIRE(a.metrics.size() == b.metrics.size());
        for (std::size_t i = 0; i < a.metrics.size(); ++i) {
            CHECK(a.metrics[i].loss_mean == b.metrics[i].loss_mean);
            CHECK(a.metrics[i].effective_rank == b.metrics[i].effective_rank);
        }
        TrainConfig other = tiny_config(s);
        other.seed = 3;
        CHECK(!(pretrain(data, other).params == a.params));
    }
}

TEST_CASE("zero-budget adversary leaves training unchanged across schemes of the same loss") {
    // With eps = 0, 1-replay free training and PGD training perform the same updates.
    const ImageBatch data = tiny_data(10);
    TrainConfig pgd = tiny_config(TrainScheme::empssl_pgd);
    pgd.attack = AttackConfig::training(0.0);
    TrainConfig free = pgd;
    free.scheme = TrainScheme::empssl_free;
    free.replays = 1;
    CHECK(pretrain(data, pgd).params == pretrain(data, free).params);
}

TEST_CASE("shape mismatches are config errors") {
    const ImageBatch data = tiny_data(10);
    TrainConfig cfg = tiny_config(TrainScheme::empssl_pgd);
    cfg.encoder.input_dim = 17;
    CHECK_THROWS_AS(pretrain(data, cfg), ConfigError);
    cfg = tiny_config(TrainScheme::empssl_pgd);
    cfg.batch_size = 64;
    CHECK_THROWS_AS(pretrain(data, cfg), ConfigError);
}

TEST_CASE("run directory, manifest and metrics") {
    const auto root = oracle::scratch_dir("runs");
    const ImageBatch data = tiny_data(10);
    const TrainConfig cfg = tiny_config(TrainScheme::empssl_free);
    const nlohmann::json snap = {{"note", "tiny"}};
    const RunManifest m = run_pretraining(data, cfg, snap, root);
    CHECK(m.status == "completed");
    CHECK(m.run_id == "empssl_free-s2-" + config_hash(snap).substr(0, 8));
    CHECK(config_hash(snap) == config_hash(nlohmann::json{{"note", "tiny"}}));
    CHECK(config_hash(snap).size() == 16);
    CHECK(std::filesystem::exists(m.weights_path));
    CHECK(std::filesystem::exists(m.metrics_path));

    const auto j = nlohmann::json::parse(oracle::slurp(root / m.run_id / "manifest.json"));
    const RunManifest back = RunManifest::from_json(j);
    CHECK(back.status == "completed");
    CHECK(back.stats.optimizer_steps == 30);
    CHECK(back.config == snap);

    std::istringstream csv(oracle::slurp(m.metrics_path));
    std::string line;
    std::getline(csv, line);
    CHECK(line == kMetricsHeader);
    int rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        CHECK(line.rfind(std::to_string(rows) + ",empssl_free,", 0) == 0);
    }
    CHECK(rows == 2);

    const RunManifest again = run_pretraining(data, cfg, snap, root);
    CHECK(again.run_id == m.run_id + "-r2");
    CHECK(oracle::slurp(again.weights_path) == oracle::slurp(m.weights_path));
}

TEST_CASE("divergence aborts the run and marks the manifest failed") {
    const auto root = oracle::scratch_dir("runs-nan");
    const ImageBatch data = tiny_data(10);
    TrainConfig cfg = tiny_config(TrainScheme::empssl_pgd);
    cfg.optimizer.kind = OptimizerKind::sgd_momentum;
    cfg.optimizer.learning_rate = 1e300;
    CHECK_THROWS_AS(run_pretraining(data, cfg, nlohmann::json::object(), root), NonFiniteLoss);
    const auto dirs = std::filesystem::directory_iterator(root);
    const auto dir = *std::filesystem::begin(dirs);
    const auto j = nlohmann::json::parse(oracle::slurp(dir.path() / "manifest.json"));
    CHECK(j.at("status") == "failed");
    CHECK(!std::filesystem::exists(dir.path() / "weights.rssl1"));
}

TEST_CASE("collapse dichotomy at toy scale") {
    // invariance alone collapses; the coding-rate term keeps the spread
    ContentStyleSpec ds;
    ds.num_classes = 4;
    ds.samples_per_class = 40;
    ds.shape = {8, 8, 1};
    ds.seed = 0;
    const ImageBatch data = generate(ds);
    TrainConfig cfg;
    cfg.scheme = TrainScheme::empssl_pgd;
    cfg.attack = AttackConfig::training(0.0);
    cfg.total_epochs = 40;
    cfg.batch_size = 32;
    cfg.augment = AugmentSpec::crops(4);
    cfg.encoder.input_dim = 64;
    cfg.encoder.hidden = {32};
    cfg.encoder.embed_dim = 8;
    cfg.loss.lambda = 0.3;
    cfg.optimizer.learning_rate = 3e-2;
    cfg.terms = ObjectiveTerms::invariance_only;
    const PretrainResult inv = pretrain(data, cfg);
    cfg.terms = ObjectiveTerms::full;
    const PretrainResult full = pretrain(data, cfg);
    MESSAGE("invariance only: ", inv.metrics.back().effective_rank, ", full: ", full.metrics.back().effective_rank);
    CHECK(inv.metrics.back().effective_rank <= 1.5);
    CHECK(inv.metrics.back().effective_rank < inv.metrics.front().effective_rank);
    CHECK(full.metrics.back().effective_rank >= 4.0);
}

} // TEST_SUITE
