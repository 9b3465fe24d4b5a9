#include "rssl/models.hpp"

#include "rssl/errors.hpp"
#include "rssl/rng.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace rssl {

namespace {

constexpr std::array<char, 5> kMagic{'R', 'S', 'S', 'L', '1'};

static_assert(std::endian::native == std::endian::little, "RSSL1 I/O assumes a little-endian host");

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw FormatError(std::string("truncated file reading ") + what);
    }
    return v;
}

std::vector<std::size_t> layer_widths(const EncoderSpec& spec) {
    std::vector<std::size_t> w{spec.input_dim};
    w.insert(w.end(), spec.hidden.begin(), spec.hidden.end());
    w.insert(w.end(), spec.projector_hidden.begin(), spec.projector_hidden.end());
    w.push_back(spec.embed_dim);
    return w;
}

ad::Var activate(Activation a, ad::Var x) { return a == Activation::relu ? ad::relu(x) : ad::tanh(x); }

} // namespace

void EncoderSpec::validate() const {
    if (input_dim < 1) {
        throw ConfigError("input_dim must be >= 1");
    }
    for (std::size_t w : hidden) {
        if (w < 1) {
            throw ConfigError("hidden widths must be >= 1");
        }
    }
    for (std::size_t w : projector_hidden) {
        if (w < 1) {
            throw ConfigError("projector widths must be >= 1");
        }
    }
    if (embed_dim < 2) {
        throw ConfigError("embed_dim must be >= 2");
    }
    if (!std::isfinite(input_center)) {
        throw ConfigError("input_center must be finite");
    }
}

void ParameterStore::add(std::string name, Matrix value) {
    for (const Entry& e : entries_) {
        if (e.name == name) {
            throw ConfigError("duplicate parameter name " + name);
        }
    }
    entries_.push_back({std::move(name), std::move(value)});
}

const Matrix& ParameterStore::get(const std::string& name) const {
    for (const Entry& e : entries_) {
        if (e.name == name) {
            return e.value;
        }
    }
    throw ConfigError("no parameter named " + name);
}

Matrix& ParameterStore::get(const std::string& name) {
    return const_cast<Matrix&>(std::as_const(*this).get(name));
}

std::size_t ParameterStore::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const Entry& e : entries_) {
        n += e.value.size();
    }
    return n;
}

ParameterStore init_encoder(const EncoderSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto widths = layer_widths(spec);
    ParameterStore store;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Rng rng(derive_seed(seed, {stream::init, l}));
        Matrix w(fan_out, fan_in);
        for (double& v : w.values()) {
            v = rng.uniform(-bound, bound);
        }
        const std::string prefix = "layer" + std::to_string(l);
        store.add(prefix + ".weight", std::move(w));
        store.add(prefix + ".bias", Matrix(fan_out, 1));
    }
    return store;
}

ParameterStore init_classifier(std::size_t dim, std::size_t classes) {
    ParameterStore store;
    store.add("probe.weight", Matrix(classes, dim));
    store.add("probe.bias", Matrix(classes, 1));
    return store;
}

std::vector<ad::Var> bind(ad::Graph& graph, const ParameterStore& store, bool trainable) {
    std::vector<ad::Var> vars;
    vars.reserve(store.size());
    for (const auto& e : store.entries()) {
        vars.push_back(trainable ? graph.leaf(e.value) : graph.constant(e.value));
    }
    return vars;
}

ad::Var forward_embed(const EncoderSpec& spec, std::span<const ad::Var> params, ad::Var pixels) {
    const auto widths = layer_widths(spec);
    const std::size_t layers = widths.size() - 1;
    if (params.size() != 2 * layers) {
        throw ShapeMismatch("forward_embed: expected " + std::to_string(2 * layers) + " parameter tensors");
    }
    if (pixels.rows() != spec.input_dim) {
        throw ShapeMismatch("forward_embed: input has " + std::to_string(pixels.rows()) + " rows, encoder expects " +
                            std::to_string(spec.input_dim));
    }
    ad::Var h = pixels;
    if (spec.input_center != 0.0) {
        h = ad::add_column_bias(h, pixels.graph->constant(Matrix(spec.input_dim, 1, -spec.input_center)));
    }
    for (std::size_t l = 0; l < layers; ++l) {
        h = ad::add_column_bias(ad::matmul(params[2 * l], h), params[2 * l + 1]);
        if (l + 1 < layers) {
            h = activate(spec.activation, h);
        }
    }
    return ad::normalize_columns(h);
}

Matrix forward_embed(const EncoderSpec& spec, const ParameterStore& params, const Matrix& pixels) {
    ad::Graph g;
    const auto vars = bind(g, params, false);
    return forward_embed(spec, vars, g.constant(pixels)).value();
}

ad::Var forward_classify(std::span<const ad::Var> head, ad::Var features) {
    if (head.size() != 2) {
        throw ShapeMismatch("forward_classify: head needs weight and bias");
    }
    if (head[0].cols() != features.rows()) {
        throw ShapeMismatch("forward_classify: feature dimension mismatch");
    }
    return ad::add_column_bias(ad::matmul(head[0], features), head[1]);
}

Matrix forward_classify(const ParameterStore& head, const Matrix& features) {
    ad::Graph g;
    const auto vars = bind(g, head, false);
    return forward_classify(vars, g.constant(features)).value();
}

std::vector<int> predict(const Matrix& logits) {
    std::vector<int> out(logits.cols(), 0);
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.rows(); ++k) {
            if (logits(k, j) > logits(best, j)) {
                best = k;
            }
        }
        out[j] = static_cast<int>(best);
    }
    return out;
}

void save_params(const ParameterStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(kMagic.data(), kMagic.size());
    for (const auto& e : store.entries()) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_le<std::uint32_t>(out, 2);
        write_le<std::uint64_t>(out, e.value.rows());
        write_le<std::uint64_t>(out, e.value.cols());
        out.write(reinterpret_cast<const char*>(e.value.data()),
                  static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    }
    if (!out) {
        throw FormatError("write failed for " + path.string());
    }
}

ParameterStore read_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::array<char, 5> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw FormatError("missing RSSL1 magic in " + path.string());
    }
    ParameterStore store;
    while (in.peek() != std::char_traits<char>::eof()) {
        const auto name_len = read_le<std::uint32_t>(in, "name length");
        if (name_len > (1U << 16)) {
            throw FormatError("implausible name length");
        }
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw FormatError("truncated tensor name");
        }
        const auto rank = read_le<std::uint32_t>(in, "rank");
        if (rank < 1 || rank > 2) {
            throw FormatError("unsupported rank " + std::to_string(rank) + " for " + name);
        }
        std::uint64_t rows = read_le<std::uint64_t>(in, "dims");
        std::uint64_t cols = rank == 2 ? read_le<std::uint64_t>(in, "dims") : 1;
        if (rows > (1ULL << 28) || cols > (1ULL << 28) || rows * cols > (1ULL << 28)) {
            throw FormatError("implausible tensor size for " + name);
        }
        Matrix m(rows, cols);
        if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
            throw FormatError("truncated payload for " + name);
        }
        store.add(std::move(name), std::move(m));
    }
    return store;
}

void load_params(ParameterStore& store, const std::filesystem::path& path) {
    ParameterStore loaded = read_params(path);
    if (loaded.size() != store.size()) {
        throw FormatError("tensor count " + std::to_string(loaded.size()) + " does not match " +
                          std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& dst = store.entries()[i];
        auto& src = loaded.entries()[i];
        if (dst.name != src.name || !dst.value.same_shape(src.value)) {
            throw FormatError("tensor " + src.name + " does not match " + dst.name);
        }
        dst.value = std::move(src.value);
    }
}

} // namespace rssl
