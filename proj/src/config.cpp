#include "rssl/config.hpp"

#include "rssl/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace rssl {

namespace {

using nlohmann::json;

bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); }

// A JSON object whose keys must all be consumed before finish().
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(where() + " must be an object");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    Section child(const std::string& key) {
        static const json empty = json::object();
        if (!has(key)) {
            return Section(empty, path_ + "." + key);
        }
        seen_.insert(key);
        return Section(j_.at(key), path_ + "." + key);
    }

    void get(const std::string& key, std::size_t& out) {
        if (const json* v = take(key)) {
            if (!is_count(*v)) {
                throw ConfigError(name(key) + " must be a nonnegative integer");
            }
            out = v->get<std::size_t>();
        }
    }
    void get(const std::string& key, int& out) {
        if (const json* v = take(key)) {
            if (!v->is_number_integer()) {
                throw ConfigError(name(key) + " must be an integer");
            }
            out = v->get<int>();
        }
    }
    void get(const std::string& key, double& out) {
        if (const json* v = take(key)) {
            if (!v->is_number()) {
                throw ConfigError(name(key) + " must be a number");
            }
            out = v->get<double>();
        }
    }
    void get(const std::string& key, bool& out) {
        if (const json* v = take(key)) {
            if (!v->is_boolean()) {
                throw ConfigError(name(key) + " must be true or false");
            }
            out = v->get<bool>();
        }
    }
    void get(const std::string& key, std::string& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) {
                throw ConfigError(name(key) + " must be a string");
            }
            out = v->get<std::string>();
        }
    }
    void get(const std::string& key, std::filesystem::path& out) {
        std::string s = out.string();
        get(key, s);
        out = s;
    }
    void get(const std::string& key, Range& out) {
        if (const json* v = take(key)) {
            if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
                throw ConfigError(name(key) + " must be a [low, high] pair");
            }
            out = {(*v)[0].get<double>(), (*v)[1].get<double>()};
        }
    }
    void get(const std::string& key, std::vector<std::size_t>& out) {
        if (const json* v = take(key)) {
            if (!v->is_array()) {
                throw ConfigError(name(key) + " must be an array of widths");
            }
            out.clear();
            for (const json& e : *v) {
                if (!is_count(e)) {
                    throw ConfigError(name(key) + " entries must be nonnegative integers");
                }
                out.push_back(e.get<std::size_t>());
            }
        }
    }
    /// Epsilon given as "a/b" or a number.
    void get_epsilon(const std::string& key, double& out) {
        if (const json* v = take(key)) {
            if (v->is_number()) {
                out = v->get<double>();
            } else if (v->is_string()) {
                out = parse_epsilon(v->get<std::string>()).value();
            } else {
                throw ConfigError(name(key) + " must be a number or an \"a/b\" string");
            }
        }
    }
    template <typename E>
    void get_enum(const std::string& key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
        std::string s;
        get(key, s);
        if (s.empty()) {
            return;
        }
        for (const auto& [n, e] : names) {
            if (s == n) {
                out = e;
                return;
            }
        }
        std::string allowed;
        for (const auto& [n, e] : names) {
            allowed += allowed.empty() ? n : std::string("|") + n;
        }
        throw ConfigError(name(key) + " must be one of " + allowed + ", got '" + s + "'");
    }

    /// The value under `key`, marked as consumed, or null.
    const json* raw(const std::string& key) { return take(key); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.contains(it.key())) {
                throw ConfigError("unknown key " + name(it.key()));
            }
        }
    }

private:
    const json* take(const std::string& key) {
        if (!has(key)) {
            return nullptr;
        }
        seen_.insert(key);
        return &j_.at(key);
    }
    std::string name(const std::string& key) const { return path_ + "." + key; }
    std::string where() const { return path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_optimizer(Section s, OptimizerConfig& o) {
    s.get_enum("kind", o.kind, {{"adam", OptimizerKind::adam}, {"sgd_momentum", OptimizerKind::sgd_momentum}});
    s.get("lr", o.learning_rate);
    s.get("momentum", o.momentum);
    s.get("beta1", o.beta1);
    s.get("beta2", o.beta2);
    s.get("eps", o.adam_eps);
    s.finish();
}

void read_attack(Section s, AttackConfig& a) {
    s.get_epsilon("epsilon", a.epsilon);
    s.get("steps", a.steps);
    a.alpha = a.steps > 0 ? 2.5 * a.epsilon / a.steps : 0.0;
    s.get("alpha", a.alpha);
    s.finish();
}

json optimizer_json(const OptimizerConfig& o) {
    return {{"kind", o.kind == OptimizerKind::adam ? "adam" : "sgd_momentum"},
            {"lr", o.learning_rate},
            {"momentum", o.momentum},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.adam_eps}};
}

json attack_json(const AttackConfig& a) {
    return {{"epsilon", a.epsilon}, {"steps", a.steps}, {"alpha", a.alpha}};
}

const char* mode_name(AugmentMode m) {
    switch (m) {
    case AugmentMode::crop:
        return "crop";
    case AugmentMode::patch:
        return "patch";
    case AugmentMode::central:
        return "central";
    }
    return "crop";
}

const char* terms_name(ObjectiveTerms t) {
    switch (t) {
    case ObjectiveTerms::full:
        return "full";
    case ObjectiveTerms::invariance_only:
        return "invariance_only";
    case ObjectiveTerms::tcr_only:
        return "tcr_only";
    }
    return "full";
}

} // namespace

void RunConfig::set_seed(std::uint64_t s) {
    seed = s;
    dataset.synthetic.seed = s;
    train.seed = s;
    probe.seed = s;
    eval.seed = s;
}

Epsilon parse_epsilon(const std::string& text) {
    const auto slash = text.find('/');
    const auto parse_int = [&](std::string_view sv) {
        int v = 0;
        const auto [p, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
        if (ec != std::errc() || p != sv.data() + sv.size() || v < 0) {
            throw ConfigError("bad epsilon '" + text + "': expected a/b with nonnegative integers");
        }
        return v;
    };
    if (slash == std::string::npos) {
        double v = 0.0;
        const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || p != text.data() + text.size() || !(v >= 0.0)) {
            throw ConfigError("bad epsilon '" + text + "'");
        }
        // Reported on a 1/255 scale when it is a whole number of levels.
        const double levels = v * 255.0;
        if (std::abs(levels - std::round(levels)) < 1e-9) {
            return {static_cast<int>(std::round(levels)), 255};
        }
        return {static_cast<int>(std::round(v * 1e6)), 1000000};
    }
    const std::string_view sv(text);
    const int num = parse_int(sv.substr(0, slash));
    const int den = parse_int(sv.substr(slash + 1));
    if (den == 0) {
        throw ConfigError("bad epsilon '" + text + "': zero denominator");
    }
    return {num, den};
}

std::string to_string(const Epsilon& e) { return std::to_string(e.num) + "/" + std::to_string(e.den); }

RunConfig parse_run_config(const nlohmann::json& doc) {
    RunConfig cfg;
    Section root(doc, "config");
    std::size_t seed = 0;
    root.get("seed", seed);
    root.get("out", cfg.out);

    {
        Section d = root.child("dataset");
        DatasetConfig& ds = cfg.dataset;
        d.get("kind", ds.kind);
        if (ds.kind != "synthetic" && ds.kind != "idx") {
            throw ConfigError("config.dataset.kind must be synthetic or idx");
        }
        ContentStyleSpec& sp = ds.synthetic;
        d.get("num_classes", sp.num_classes);
        d.get("samples_per_class", sp.samples_per_class);
        d.get("height", sp.shape.height);
        d.get("width", sp.shape.width);
        d.get("channels", sp.shape.channels);
        d.get("content_amplitude", sp.content_amplitude);
        d.get("content_waves", sp.content_waves);
        d.get("content_shift", sp.content_shift);
        d.get("style_amplitude", sp.style_amplitude);
        d.get("noise_std", sp.noise_std);
        d.get("test_per_class", ds.test_per_class);
        d.get("train_images", ds.train_images);
        d.get("train_labels", ds.train_labels);
        d.get("test_images", ds.test_images);
        d.get("test_labels", ds.test_labels);
        d.finish();
        if (ds.kind == "synthetic") {
            try {
                sp.validate();
            } catch (const InvalidSpec& e) {
                throw ConfigError(e.what());
            }
            if (ds.test_per_class >= sp.samples_per_class) {
                throw ConfigError("config.dataset.test_per_class must leave training images");
            }
        } else if (ds.train_images.empty() || ds.train_labels.empty() || ds.test_images.empty() ||
                   ds.test_labels.empty()) {
            throw ConfigError("idx datasets need train_images, train_labels, test_images and test_labels");
        }
    }

    {
        Section e = root.child("encoder");
        EncoderSpec& enc = cfg.train.encoder;
        enc.input_dim = cfg.dataset.synthetic.shape.pixels();
        e.get("hidden", enc.hidden);
        e.get_enum("activation", enc.activation, {{"relu", Activation::relu}, {"tanh", Activation::tanh}});
        e.get("projector_hidden", enc.projector_hidden);
        e.get("embed_dim", enc.embed_dim);
        e.get("input_center", enc.input_center);
        e.finish();
    }

    {
        Section a = root.child("augment");
        AugmentMode mode = AugmentMode::crop;
        a.get_enum("mode", mode,
                   {{"crop", AugmentMode::crop}, {"patch", AugmentMode::patch}, {"central", AugmentMode::central}});
        AugmentSpec aug = mode == AugmentMode::patch     ? AugmentSpec::patches(16)
                          : mode == AugmentMode::central ? AugmentSpec::central()
                                                         : AugmentSpec::crops(16);
        a.get("scales", aug.scales);
        a.get("ratios", aug.ratios);
        a.get("crop_count", aug.crop_count);
        a.get("out_height", aug.out_height);
        a.get("out_width", aug.out_width);
        if (a.has("style_jitter")) {
            Section j = a.child("style_jitter");
            StyleJitterLaw law;
            j.get("scale", law.scale);
            j.get("shift", law.shift);
            j.finish();
            aug.style_jitter = law;
        }
        a.finish();
        cfg.train.augment = aug;
    }

    {
        Section t = root.child("train");
        TrainConfig& tc = cfg.train;
        std::string scheme = to_string(tc.scheme);
        t.get("scheme", scheme);
        tc.scheme = train_scheme_from_string(scheme);
        t.get("total_epochs", tc.total_epochs);
        t.get("replays", tc.replays);
        t.get("batch_size", tc.batch_size);
        t.get("shared_delta", tc.shared_delta);
        t.get("simclr_clean_pair", tc.simclr_clean_pair);
        t.get_enum("terms", tc.terms,
                   {{"full", ObjectiveTerms::full},
                    {"invariance_only", ObjectiveTerms::invariance_only},
                    {"tcr_only", ObjectiveTerms::tcr_only}});
        read_optimizer(t.child("optimizer"), tc.optimizer);
        read_attack(t.child("attack"), tc.attack);
        Section l = t.child("loss");
        l.get("eps_sq", tc.loss.eps_sq);
        l.get("lambda", tc.loss.lambda);
        l.get("tau", tc.loss.tau);
        l.finish();
        t.finish();
    }

    {
        Section p = root.child("probe");
        ProbeConfig& pc = cfg.probe;
        p.get_enum("protocol", pc.protocol, {{"central", ProbeProtocol::central}, {"agg", ProbeProtocol::aggregate}});
        p.get("n", pc.n);
        p.get("robust", pc.robust);
        p.get("epochs", pc.epochs);
        p.get("batch_size", pc.batch_size);
        p.get_enum("aggregate_attack", pc.aggregate_attack,
                   {{"end_to_end", AggregateAttack::end_to_end}, {"per_crop", AggregateAttack::per_crop}});
        read_optimizer(p.child("optimizer"), pc.optimizer);
        read_attack(p.child("attack"), pc.train_attack);
        pc.train_attack.objective = AttackObjective::cross_entropy;
        pc.train_attack.random_start = false;
        p.finish();
        pc.augment = cfg.train.augment;
    }

    {
        Section e = root.child("eval");
        EvalOptions& eo = cfg.eval;
        if (const json* g = e.raw("grid")) {
            if (!g->is_array()) {
                throw ConfigError("config.eval.grid must be an array of \"a/b\" strings");
            }
            eo.grid.clear();
            for (const json& v : *g) {
                if (!v.is_string()) {
                    throw ConfigError("config.eval.grid entries must be \"a/b\" strings");
                }
                eo.grid.push_back(parse_epsilon(v.get<std::string>()));
            }
        }
        e.get("attack_steps", eo.attack_steps);
        e.get("batch_size", eo.batch_size);
        e.finish();
    }
    root.finish();

    cfg.set_seed(seed);
    try {
        cfg.train.validate();
        cfg.probe.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (cfg.eval.attack_steps < 1 || cfg.eval.batch_size < 1) {
        throw ConfigError("config.eval.attack_steps and batch_size must be >= 1");
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(doc);
}

nlohmann::json to_json(const RunConfig& cfg) {
    const DatasetConfig& ds = cfg.dataset;
    const ContentStyleSpec& sp = ds.synthetic;
    json dataset = {{"kind", ds.kind}, {"test_per_class", ds.test_per_class}};
    if (ds.kind == "synthetic") {
        dataset.update({{"num_classes", sp.num_classes},
                        {"samples_per_class", sp.samples_per_class},
                        {"height", sp.shape.height},
                        {"width", sp.shape.width},
                        {"channels", sp.shape.channels},
                        {"content_amplitude", sp.content_amplitude},
                        {"content_waves", sp.content_waves},
                        {"content_shift", sp.content_shift},
                        {"style_amplitude", sp.style_amplitude},
                        {"noise_std", sp.noise_std}});
    } else {
        dataset.update({{"train_images", ds.train_images.string()},
                        {"train_labels", ds.train_labels.string()},
                        {"test_images", ds.test_images.string()},
                        {"test_labels", ds.test_labels.string()}});
    }
    const EncoderSpec& enc = cfg.train.encoder;
    const AugmentSpec& aug = cfg.train.augment;
    json augment = {{"mode", mode_name(aug.mode)},
                    {"scales", {aug.scales.low, aug.scales.high}},
                    {"ratios", {aug.ratios.low, aug.ratios.high}},
                    {"crop_count", aug.crop_count},
                    {"out_height", aug.out_height},
                    {"out_width", aug.out_width}};
    if (aug.style_jitter) {
        augment["style_jitter"] = {{"scale", {aug.style_jitter->scale.low, aug.style_jitter->scale.high}},
                                   {"shift", {aug.style_jitter->shift.low, aug.style_jitter->shift.high}}};
    }
    const TrainConfig& t = cfg.train;
    const ProbeConfig& p = cfg.probe;
    json grid = json::array();
    for (const Epsilon& e : cfg.eval.grid) {
        grid.push_back(to_string(e));
    }
    return {{"seed", cfg.seed},
            {"out", cfg.out.string()},
            {"dataset", dataset},
            {"encoder",
             {{"hidden", enc.hidden},
              {"activation", enc.activation == Activation::relu ? "relu" : "tanh"},
              {"projector_hidden", enc.projector_hidden},
              {"embed_dim", enc.embed_dim},
              {"input_center", enc.input_center}}},
            {"augment", augment},
            {"train",
             {{"scheme", to_string(t.scheme)},
              {"total_epochs", t.total_epochs},
              {"replays", t.replays},
              {"batch_size", t.batch_size},
              {"shared_delta", t.shared_delta},
              {"simclr_clean_pair", t.simclr_clean_pair},
              {"terms", terms_name(t.terms)},
              {"optimizer", optimizer_json(t.optimizer)},
              {"attack", attack_json(t.attack)},
              {"loss", {{"eps_sq", t.loss.eps_sq}, {"lambda", t.loss.lambda}, {"tau", t.loss.tau}}}}},
            {"probe",
             {{"protocol", p.protocol == ProbeProtocol::central ? "central" : "agg"},
              {"n", p.n},
              {"robust", p.robust},
              {"epochs", p.epochs},
              {"batch_size", p.batch_size},
              {"aggregate_attack", p.aggregate_attack == AggregateAttack::end_to_end ? "end_to_end" : "per_crop"},
              {"optimizer", optimizer_json(p.optimizer)},
              {"attack", attack_json(p.train_attack)}}},
            {"eval", {{"grid", grid}, {"attack_steps", cfg.eval.attack_steps}, {"batch_size", cfg.eval.batch_size}}}};
}

Dataset load_dataset(const DatasetConfig& cfg) {
    Dataset out;
    if (cfg.kind == "synthetic") {
        const ImageBatch all = generate(cfg.synthetic);
        TrainTestSplit split = split_train_test(all, cfg.test_per_class, cfg.synthetic.seed);
        out.train = std::move(split.train);
        out.test = std::move(split.test);
        out.num_classes = cfg.synthetic.num_classes;
        return out;
    }
    out.train = load_idx(cfg.train_images, cfg.train_labels);
    out.test = load_idx(cfg.test_images, cfg.test_labels);
    if (out.train.shape != out.test.shape) {
        throw FormatError("idx train and test images differ in size");
    }
    int top = 0;
    for (int l : out.train.labels) {
        top = std::max(top, l);
    }
    for (int l : out.test.labels) {
        top = std::max(top, l);
    }
    out.num_classes = static_cast<std::size_t>(top) + 1;
    return out;
}

} // namespace rssl
