#pragma once

#include "rssl/data.hpp"
#include "rssl/evaluation.hpp"
#include "rssl/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace rssl {

struct DatasetConfig {
    std::string kind = "synthetic"; ///< synthetic | idx
    ContentStyleSpec synthetic;
    std::size_t test_per_class = 200;
    std::filesystem::path train_images;
    std::filesystem::path train_labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;
};

struct Dataset {
    ImageBatch train;
    ImageBatch test;
    std::size_t num_classes = 0;
};

/// Everything one pretrain/probe/eval invocation needs.
struct RunConfig {
    DatasetConfig dataset;
    TrainConfig train;
    ProbeConfig probe;
    EvalOptions eval;
    std::filesystem::path out = "runs";
    std::uint64_t seed = 0;

    /// Routes one seed to every consumer (data, init, probe, attacks).
    void set_seed(std::uint64_t s);
};

/// Parses "a/b" (or a plain decimal such as "0.03"). Throws ConfigError.
Epsilon parse_epsilon(const std::string& text);
std::string to_string(const Epsilon& e);

/// Validates a RunConfig document: every key must be known and every value
/// well typed. Missing keys keep their defaults. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical, fully expanded form of a config (stable key order, defaults
/// filled in). parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& cfg);

/// Generates or loads the configured dataset. The encoder input size follows
/// the image shape.
Dataset load_dataset(const DatasetConfig& cfg);

} // namespace rssl
