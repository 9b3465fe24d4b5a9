#pragma once

#include "rssl/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rssl {

enum class Activation { relu, tanh };

/// MLP encoder f followed by an MLP projector g; the projector output is
/// l2-normalized per sample.
struct EncoderSpec {
    std::size_t input_dim = 16 * 16 * 3;
    std::vector<std::size_t> hidden{128};
    Activation activation = Activation::relu;
    std::vector<std::size_t> projector_hidden{};
    std::size_t embed_dim = 32;
    double input_center = 0.5; ///< subtracted from every pixel before the first layer

    void validate() const;
};

/// Named tensors in insertion order plus the optimizer update counter.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Matrix value;
    };

    void add(std::string name, Matrix value);
    [[nodiscard]] const Matrix& get(const std::string& name) const;
    [[nodiscard]] Matrix& get(const std::string& name);
    [[nodiscard]] std::vector<Entry>& entries() noexcept { return entries_; }
    [[nodiscard]] const std::vector<Entry>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] std::size_t parameter_count() const noexcept;

    [[nodiscard]] std::uint64_t update_count() const noexcept { return updates_; }
    void record_update() noexcept { ++updates_; }

    friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.entries_ == b.entries_; }

private:
    std::vector<Entry> entries_;
    std::uint64_t updates_ = 0;
};

inline bool operator==(const ParameterStore::Entry& a, const ParameterStore::Entry& b) {
    return a.name == b.name && a.value == b.value;
}

/// He-uniform weights, zero biases.
ParameterStore init_encoder(const EncoderSpec& spec, std::uint64_t seed);
/// Zero-initialized linear head: "probe.weight" (classes x dim), "probe.bias".
ParameterStore init_classifier(std::size_t dim, std::size_t classes);

/// Parameters as graph nodes: leaves when trainable, constants when frozen.
std::vector<ad::Var> bind(ad::Graph& graph, const ParameterStore& store, bool trainable);

/// Normalized embeddings (embed_dim x n) of flattened pixel columns.
ad::Var forward_embed(const EncoderSpec& spec, std::span<const ad::Var> params, ad::Var pixels);
/// Gradient-free convenience wrapper.
Matrix forward_embed(const EncoderSpec& spec, const ParameterStore& params, const Matrix& pixels);

/// logits (classes x n) = W h + c for features h (dim x n).
ad::Var forward_classify(std::span<const ad::Var> head, ad::Var features);
Matrix forward_classify(const ParameterStore& head, const Matrix& features);

/// Argmax per column, ties to the lowest class index.
std::vector<int> predict(const Matrix& logits);

/// RSSL1 binary format: magic "RSSL1", then per tensor: u32 name length,
/// name bytes, u32 rank, u64 dims, little-endian f64 payload.
void save_params(const ParameterStore& store, const std::filesystem::path& path);
/// Reads every tensor of an RSSL1 file. Throws FormatError on bad magic or
/// truncation.
ParameterStore read_params(const std::filesystem::path& path);
/// Loads into an existing store; names and shapes must match exactly.
void load_params(ParameterStore& store, const std::filesystem::path& path);

} // namespace rssl
