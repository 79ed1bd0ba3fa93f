#pragma once

#include <filesystem>
#include <optional>

#include "maialab/neurons.hpp"

namespace maialab::cli {

/// Content-addressed activation store keyed by (neuron address, image content
/// hash). Writes are atomic (temp-then-rename); corrupt entries are discarded
/// with a warning and recomputed by the caller.
class ActivationCache {
public:
    explicit ActivationCache(std::filesystem::path dir);

    std::optional<neurons::ActivationResult> get(const neurons::NeuronAddress& address,
                                                 std::uint64_t content_hash) const;
    void put(const neurons::NeuronAddress& address, std::uint64_t content_hash,
             const neurons::ActivationResult& result) const;

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path entry_path(const neurons::NeuronAddress& address,
                                     std::uint64_t content_hash) const;
    std::filesystem::path dir_;
};

/// Probe-through wrapper: cache hits bypass the backend entirely.
class CachedSystem final : public neurons::System {
public:
    CachedSystem(neurons::SystemHandle inner, const ActivationCache* cache)
        : inner_(std::move(inner)), cache_(cache) {}

    neurons::NeuronAddress address() const override { return inner_->address(); }
    neurons::ActivationResult activate(const neurons::ImageHandle& image) const override;
    double activation_only(const neurons::ImageHandle& image) const override;

private:
    neurons::SystemHandle inner_;
    const ActivationCache* cache_;
};

}  // namespace maialab::cli
