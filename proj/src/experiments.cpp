#include "rssl/experiments.hpp"

#include "rssl/errors.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rssl {

namespace {

using nlohmann::json;

struct ProbeSpec {
    std::string name;
    json patch; ///< merged into the member config's "probe" section
};

struct Member {
    std::string name;
    json config;
    std::vector<ProbeSpec> probes;
};

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * v;
    return os.str();
}

std::string fixed6(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

std::vector<Member> parse_members(const json& doc) {
    if (!doc.is_object() || !doc.contains("members") || !doc["members"].is_array() || doc["members"].empty()) {
        throw ConfigError("preset needs a non-empty 'members' array");
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.key() != "description" && it.key() != "base" && it.key() != "members" && it.key() != "claims") {
            throw ConfigError("unknown preset key '" + it.key() + "'");
        }
    }
    const json base = doc.value("base", json::object());
    std::vector<Member> members;
    for (const json& m : doc["members"]) {
        Member member;
        member.name = m.at("name").get<std::string>();
        member.config = base;
        if (m.contains("overrides")) {
            member.config.merge_patch(m["overrides"]);
        }
        if (m.contains("probes")) {
            for (const json& p : m["probes"]) {
                ProbeSpec spec;
                spec.name = p.at("name").get<std::string>();
                spec.patch = p;
                spec.patch.erase("name");
                member.probes.push_back(std::move(spec));
            }
        } else {
            member.probes.push_back({"standard", json::object()});
        }
        for (const auto& other : members) {
            if (other.name == member.name) {
                throw ConfigError("duplicate member '" + member.name + "'");
            }
        }
        members.push_back(std::move(member));
    }
    return members;
}

// "member/probe" reference into the report.
const ComparisonRow& lookup(const ComparisonReport& r, const std::string& ref) {
    const auto slash = ref.find('/');
    if (slash == std::string::npos) {
        throw ConfigError("claim reference '" + ref + "' must be member/probe");
    }
    return r.row(ref.substr(0, slash), ref.substr(slash + 1));
}

ClaimResult check_claim(const ComparisonReport& r, const json& c) {
    ClaimResult out;
    out.kind = c.at("kind").get<std::string>();
    const double chance = 1.0 / static_cast<double>(r.num_classes);
    const double points = c.value("points", 0.0) / 100.0;
    const Epsilon eps = parse_epsilon(c.value("eps", std::string("8/255")));
    const std::string eps_text = to_string(eps);
    std::ostringstream s;
    if (out.kind == "robust_near_chance" || out.kind == "clean_above_chance") {
        const ComparisonRow& a = lookup(r, c.at("run").get<std::string>());
        out.run_a = a.run_id;
        out.run_b = "chance";
        if (out.kind == "robust_near_chance") {
            const double v = r.robust(a, eps);
            out.holds = v <= chance + points;
            s << a.run_id << " (" << a.member << "/" << a.probe << ") robust@" << eps_text << " " << pct(v)
              << "% <= chance " << pct(chance) << "% + " << pct(points);
        } else {
            out.holds = a.clean_acc >= chance + points;
            s << a.run_id << " (" << a.member << "/" << a.probe << ") clean " << pct(a.clean_acc) << "% >= chance "
              << pct(chance) << "% + " << pct(points);
        }
    } else if (out.kind == "robust_gain" || out.kind == "robust_within") {
        const ComparisonRow& a = lookup(r, c.at("a").get<std::string>());
        const ComparisonRow& b = lookup(r, c.at("b").get<std::string>());
        out.run_a = a.run_id;
        out.run_b = b.run_id;
        const double va = r.robust(a, eps);
        const double vb = r.robust(b, eps);
        if (out.kind == "robust_gain") {
            out.holds = va >= vb + points;
            s << a.run_id << " (" << a.member << "/" << a.probe << ") robust@" << eps_text << " " << pct(va)
              << "% >= " << b.run_id << " (" << b.member << "/" << b.probe << ") " << pct(vb) << "% + " << pct(points);
        } else {
            out.holds = va >= vb - points;
            s << a.run_id << " (" << a.member << "/" << a.probe << ") robust@" << eps_text << " " << pct(va)
              << "% >= " << b.run_id << " (" << b.member << "/" << b.probe << ") " << pct(vb) << "% - " << pct(points);
        }
    } else if (out.kind == "wall_clock_ratio") {
        const ComparisonRow& a = lookup(r, c.at("a").get<std::string>());
        const ComparisonRow& b = lookup(r, c.at("b").get<std::string>());
        out.run_a = a.run_id;
        out.run_b = b.run_id;
        const double ratio = c.at("ratio").get<double>();
        out.holds = a.wall_clock_seconds <= ratio * b.wall_clock_seconds;
        s << a.run_id << " wall-clock " << std::fixed << std::setprecision(2) << a.wall_clock_seconds << "s <= "
          << ratio << " x " << b.run_id << " " << b.wall_clock_seconds << "s (ratio "
          << a.wall_clock_seconds / std::max(1e-12, b.wall_clock_seconds) << ")";
    } else if (out.kind == "matched_updates") {
        const ComparisonRow& a = lookup(r, c.at("a").get<std::string>());
        const ComparisonRow& b = lookup(r, c.at("b").get<std::string>());
        out.run_a = a.run_id;
        out.run_b = b.run_id;
        out.holds = a.optimizer_steps == b.optimizer_steps;
        s << a.run_id << " " << a.optimizer_steps << " optimizer steps == " << b.run_id << " " << b.optimizer_steps;
    } else {
        throw ConfigError("unknown claim kind '" + out.kind + "'");
    }
    out.statement = s.str();
    return out;
}

// Robust accuracy must not increase with the radius (clean counts as 0).
std::vector<ClaimResult> monotonicity_claims(const ComparisonReport& r) {
    std::vector<std::size_t> order(r.grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.grid[a].value() < r.grid[b].value(); });
    std::vector<ClaimResult> out;
    for (const auto& row : r.rows) {
        double prev = row.clean_acc;
        bool ok = true;
        for (std::size_t i : order) {
            ok = ok && row.robust_acc[i] <= prev;
            prev = row.robust_acc[i];
        }
        out.push_back({"monotone",
                       row.run_id + " (" + row.member + "/" + row.probe + ") robust accuracy non-increasing in eps",
                       row.run_id, row.run_id, ok});
    }
    return out;
}

std::string render_summary(const ComparisonReport& r, const std::string& description) {
    std::ostringstream s;
    s << "suite " << r.preset << " seed " << r.seed << (r.complete ? "" : " (INCOMPLETE)") << '\n';
    if (!description.empty()) {
        s << description << '\n';
    }
    s << '\n';
    s << std::left << std::setw(14) << "member" << std::setw(10) << "probe" << std::setw(14) << "scheme" << std::setw(4)
      << "C" << std::setw(4) << "m" << std::setw(5) << "ep" << std::setw(9) << "secs" << std::setw(8) << "clean";
    for (const auto& e : r.grid) {
        s << std::setw(9) << to_string(e);
    }
    s << '\n';
    for (const auto& row : r.rows) {
        std::ostringstream secs;
        secs << std::fixed << std::setprecision(1) << row.wall_clock_seconds;
        s << std::left << std::setw(14) << row.member << std::setw(10) << row.probe << std::setw(14) << row.scheme
          << std::setw(4) << row.crops << std::setw(4) << row.replays << std::setw(5) << row.epochs << std::setw(9)
          << secs.str() << std::setw(8) << pct(row.clean_acc);
        for (double v : row.robust_acc) {
            s << std::setw(9) << pct(v);
        }
        s << '\n';
    }
    s << '\n';
    for (const auto& c : r.claims) {
        s << (c.holds ? "HOLDS  " : "FAILS  ") << c.kind << ": " << c.statement << '\n';
    }
    return s.str();
}

std::filesystem::path fresh_directory(const std::filesystem::path& root, const std::string& base) {
    std::filesystem::path dir = root / base;
    for (int attempt = 2; std::filesystem::exists(dir); ++attempt) {
        dir = root / (base + "-r" + std::to_string(attempt));
    }
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

const ComparisonRow& ComparisonReport::row(const std::string& member, const std::string& probe) const {
    for (const auto& r : rows) {
        if (r.member == member && r.probe == probe) {
            return r;
        }
    }
    throw ConfigError("no result for " + member + "/" + probe);
}

double ComparisonReport::robust(const ComparisonRow& r, const Epsilon& eps) const {
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].num == eps.num && grid[i].den == eps.den) {
            return r.robust_acc[i];
        }
    }
    if (eps.num == 0) {
        return r.clean_acc;
    }
    throw ConfigError("epsilon " + to_string(eps) + " is not in the evaluation grid");
}

bool ComparisonReport::claims_hold() const {
    return std::all_of(claims.begin(), claims.end(), [](const ClaimResult& c) { return c.holds; });
}

json load_preset(const std::string& name, const std::filesystem::path& presets_dir) {
    if (name.empty()) {
        throw ConfigError("empty preset name");
    }
    const std::filesystem::path path = presets_dir / (name + ".json");
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("unknown preset '" + name + "' (no " + path.string() + ")");
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("preset " + path.string() + ": " + e.what());
    }
}

ComparisonReport run_suite(const std::string& preset, std::uint64_t seed, const std::filesystem::path& presets_dir,
                           const std::filesystem::path& out_root, std::ostream* log) {
    return run_suite(preset, load_preset(preset, presets_dir), seed, out_root, log);
}

ComparisonReport run_suite(const std::string& preset, const json& doc, std::uint64_t seed,
                           const std::filesystem::path& out_root, std::ostream* log) {
    if (preset.empty()) {
        throw ConfigError("empty preset name");
    }
    const std::vector<Member> members = parse_members(doc);
    // Validate every member up front so a typo fails before hours of training.
    std::vector<RunConfig> configs;
    for (const Member& m : members) {
        RunConfig cfg = parse_run_config(m.config);
        cfg.set_seed(seed);
        for (const ProbeSpec& p : m.probes) {
            json probe_doc = m.config;
            probe_doc["probe"].merge_patch(p.patch);
            (void)parse_run_config(probe_doc);
        }
        configs.push_back(std::move(cfg));
    }

    ComparisonReport report;
    report.preset = preset;
    report.seed = seed;
    report.grid = configs.front().eval.grid;
    report.directory = fresh_directory(out_root, preset + "-s" + std::to_string(seed));
    const std::string description = doc.value("description", "");

    const auto finish = [&] {
        report.summary = render_summary(report, description);
        write_comparison_csv(report, report.directory / "comparison.csv");
        std::ofstream(report.directory / "summary.txt") << report.summary;
    };

    try {
        for (std::size_t i = 0; i < members.size(); ++i) {
            const Member& m = members[i];
            RunConfig cfg = configs[i];
            const Dataset data = load_dataset(cfg.dataset);
            cfg.train.encoder.input_dim = data.train.shape.pixels();
            report.num_classes = data.num_classes;
            if (log) {
                *log << "[" << preset << "] pretraining " << m.name << " (" << to_string(cfg.train.scheme) << ")"
                     << std::endl;
            }
            const RunManifest manifest =
                run_pretraining(data.train, cfg.train, to_json(cfg), report.directory, &data.test);
            const ParameterStore encoder = read_params(manifest.weights_path);
            for (const ProbeSpec& p : m.probes) {
                json probe_doc = m.config;
                probe_doc["probe"].merge_patch(p.patch);
                RunConfig pcfg = parse_run_config(probe_doc);
                pcfg.set_seed(seed);
                pcfg.train.encoder.input_dim = cfg.train.encoder.input_dim;
                const ProbeResult probe =
                    train_probe(pcfg.train.encoder, encoder, data.train, data.num_classes, pcfg.probe);
                EvalOptions opts = pcfg.eval;
                opts.run_id = manifest.run_id;
                const std::vector<AccuracyRow> rows =
                    evaluate(pcfg.train.encoder, encoder, probe.head, data.test, pcfg.probe, opts);
                append_report_csv(rows, report.directory / manifest.run_id / "report.csv");

                ComparisonRow row;
                row.member = m.name;
                row.probe = p.name;
                row.run_id = manifest.run_id;
                row.scheme = to_string(cfg.train.scheme);
                row.crops = cfg.train.views();
                row.replays = cfg.train.replays;
                row.epochs = cfg.train.total_epochs;
                row.optimizer_steps = manifest.stats.optimizer_steps;
                row.wall_clock_seconds = manifest.stats.seconds;
                row.protocol = rows.front().protocol;
                row.n = rows.front().n;
                row.robust_probe = pcfg.probe.robust;
                row.clean_acc = rows.front().clean_acc;
                for (const auto& r : rows) {
                    row.robust_acc.push_back(r.robust_acc);
                }
                if (log) {
                    *log << "[" << preset << "]   " << m.name << "/" << p.name << ": clean " << pct(row.clean_acc)
                         << "%, robust";
                    for (std::size_t k = 0; k < rows.size(); ++k) {
                        *log << " " << to_string(report.grid[k]) << "=" << pct(row.robust_acc[k]) << "%";
                    }
                    *log << std::endl;
                }
                report.rows.push_back(std::move(row));
            }
        }
    } catch (...) {
        report.complete = false;
        finish();
        throw;
    }
    report.complete = true;
    if (doc.contains("claims")) {
        for (const json& c : doc["claims"]) {
            report.claims.push_back(check_claim(report, c));
        }
    }
    for (auto& c : monotonicity_claims(report)) {
        report.claims.push_back(std::move(c));
    }
    finish();
    return report;
}

void write_comparison_csv(const ComparisonReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << "suite,seed,member,probe,run_id,scheme,crops,replays,epochs,optimizer_steps,wall_clock_seconds,protocol,n,"
           "robust_probe,clean_acc";
    for (const auto& e : report.grid) {
        out << ",robust_acc_" << e.num << "_" << e.den;
    }
    out << '\n';
    for (const auto& r : report.rows) {
        out << report.preset << ',' << report.seed << ',' << r.member << ',' << r.probe << ',' << r.run_id << ','
            << r.scheme << ',' << r.crops << ',' << r.replays << ',' << r.epochs << ',' << r.optimizer_steps << ','
            << std::fixed << std::setprecision(3) << r.wall_clock_seconds << ',' << r.protocol << ',' << r.n << ','
            << (r.robust_probe ? 1 : 0) << ',' << fixed6(r.clean_acc);
        for (double v : r.robust_acc) {
            out << ',' << fixed6(v);
        }
        out << '\n';
        out.unsetf(std::ios::floatfield);
    }
}

} // namespace rssl
