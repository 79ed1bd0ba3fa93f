#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "maialab/neurons.hpp"

namespace maialab::neurons {

/// A trained vision model instrumented for per-unit activation maps. Forward
/// passes are serialized per instance by the adapter; implementations only
/// need to be internally consistent and deterministic.
class RealModel {
public:
    virtual ~RealModel() = default;
    virtual std::string name() const = 0;
    virtual bool has_unit(const std::string& layer_id, std::uint64_t unit_index) const = 0;
    virtual Grid activation_map(const std::string& layer_id, std::uint64_t unit_index,
                                const scene::Pixels& image) const = 0;
};

class RealModelRegistry {
public:
    using Factory = std::function<std::shared_ptr<RealModel>()>;

    void register_model(const std::string& name, Factory factory);
    bool has(const std::string& name) const;
    /// Instantiates on first use and shares the instance afterwards.
    std::shared_ptr<RealModel> get(const std::string& name) const;

    static RealModelRegistry& global();

private:
    mutable std::mutex mutex_;
    std::map<std::string, Factory> factories_;
    mutable std::map<std::string, std::shared_ptr<RealModel>> instances_;
};

/// Deterministic stand-in for a trained backbone: a bank of fixed convolution
/// kernels derived from (seed, layer, unit). Useful wherever the adapter
/// contract needs a real forward pass without shipping weights.
std::shared_ptr<RealModel> make_filter_bank_model(const std::string& name,
                                                  std::map<std::string, int> layer_units,
                                                  std::uint64_t seed);

/// Resolves an address against the registry and returns a probe-able handle.
/// The handle runs the forward pass, reduces the unit's map by spatial max,
/// and attaches a percentile-masked evidence image (q = 0.95). Reported
/// activations round to the nearest integer. Throws AddressError when the
/// model, layer, or unit is unknown.
SystemHandle register_real_model_adapter(const RealModelRegistry& registry,
                                         const std::string& model_name,
                                         const std::string& layer_id, std::uint64_t unit_index);

}  // namespace maialab::neurons
