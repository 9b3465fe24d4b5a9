#pragma once

#include "rssl/config.hpp"
#include "rssl/evaluation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace rssl {

/// One (member run, probe) pair of a suite.
struct ComparisonRow {
    std::string member;
    std::string probe;
    std::string run_id;
    std::string scheme;
    std::size_t crops = 0;
    std::size_t replays = 1;
    std::size_t epochs = 0;
    std::uint64_t optimizer_steps = 0;
    double wall_clock_seconds = 0.0;
    std::string protocol;
    std::size_t n = 1;
    bool robust_probe = false;
    double clean_acc = 0.0;
    std::vector<double> robust_acc; ///< one per grid entry
};

struct ClaimResult {
    std::string kind;
    std::string statement; ///< human-readable, names both run_ids
    std::string run_a;
    std::string run_b;
    bool holds = false;
};

struct ComparisonReport {
    std::string preset;
    std::uint64_t seed = 0;
    std::size_t num_classes = 0;
    std::vector<Epsilon> grid;
    std::vector<ComparisonRow> rows;
    std::vector<ClaimResult> claims;
    bool complete = false;
    std::string summary;
    std::filesystem::path directory;

    [[nodiscard]] const ComparisonRow& row(const std::string& member, const std::string& probe) const;
    /// Robust accuracy of a row at one grid radius.
    [[nodiscard]] double robust(const ComparisonRow& r, const Epsilon& eps) const;
    [[nodiscard]] bool claims_hold() const;
};

inline constexpr const char* kPresetNames[] = {"vuln_baseline", "pgd_vs_free", "crop_vs_patch", "rle_ablation"};

/// Reads `<presets_dir>/<name>.json`. Throws ConfigError for an empty or
/// unknown name.
nlohmann::json load_preset(const std::string& name, const std::filesystem::path& presets_dir);

/// Runs every member of a preset back to back under `seed`, probes and
/// evaluates each, checks the preset's directional claims and writes
/// comparison.csv and summary.txt to a fresh `<out_root>/<preset>-s<seed>`
/// directory. A failing member marks the report incomplete, is recorded in
/// the summary and is rethrown.
ComparisonReport run_suite(const std::string& preset, std::uint64_t seed, const std::filesystem::path& presets_dir,
                           const std::filesystem::path& out_root, std::ostream* log = nullptr);

/// Same, from an already loaded preset document.
ComparisonReport run_suite(const std::string& preset, const nlohmann::json& doc, std::uint64_t seed,
                           const std::filesystem::path& out_root, std::ostream* log = nullptr);

void write_comparison_csv(const ComparisonReport& report, const std::filesystem::path& path);

} // namespace rssl
