#include "maialab/real_model.hpp"

#include <cmath>

namespace maialab::neurons {

void RealModelRegistry::register_model(const std::string& name, Factory factory) {
    std::lock_guard<std::mutex> lock(mutex_);
    factories_[name] = std::move(factory);
    instances_.erase(name);
}

bool RealModelRegistry::has(const std::string& name) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return factories_.count(name) > 0;
}

std::shared_ptr<RealModel> RealModelRegistry::get(const std::string& name) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = factories_.find(name);
    if (it == factories_.end()) fail("AddressError", "model '" + name + "' is not registered");
    auto& instance = instances_[name];
    if (!instance) instance = it->second();
    return instance;
}

RealModelRegistry& RealModelRegistry::global() {
    static RealModelRegistry registry;
    return registry;
}

// ---------------------------------------------------------------------------
// Filter-bank model
// ---------------------------------------------------------------------------

namespace {

constexpr int kKernel = 8;
constexpr int kStride = 8;

class FilterBankModel final : public RealModel {
public:
    FilterBankModel(std::string name, std::map<std::string, int> layer_units, std::uint64_t seed)
        : name_(std::move(name)), layer_units_(std::move(layer_units)), seed_(seed) {}

    std::string name() const override { return name_; }

    bool has_unit(const std::string& layer_id, std::uint64_t unit_index) const override {
        auto it = layer_units_.find(layer_id);
        return it != layer_units_.end() && unit_index < static_cast<std::uint64_t>(it->second);
    }

    Grid activation_map(const std::string& layer_id, std::uint64_t unit_index,
                        const scene::Pixels& image) const override {
        if (!has_unit(layer_id, unit_index))
            fail("AddressError", name_ + " has no unit " + layer_id + ":" + std::to_string(unit_index));
        const std::vector<double> kernel = unit_kernel(layer_id, unit_index);

        const int rows = std::max(1, (image.height - kKernel) / kStride + 1);
        const int cols = std::max(1, (image.width - kKernel) / kStride + 1);
        Grid grid;
        grid.rows = rows;
        grid.cols = cols;
        grid.values.resize(static_cast<size_t>(rows) * cols, 0.0);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                double acc = 0.0;
                for (int ky = 0; ky < kKernel; ++ky) {
                    const int y = std::min(image.height - 1, r * kStride + ky);
                    for (int kx = 0; kx < kKernel; ++kx) {
                        const int x = std::min(image.width - 1, c * kStride + kx);
                        const auto* px = image.rgb.data() + (static_cast<size_t>(y) * image.width + x) * 3;
                        const double gray = (px[0] + px[1] + px[2]) / (3.0 * 255.0);
                        acc += gray * kernel[static_cast<size_t>(ky) * kKernel + kx];
                    }
                }
                grid.values[static_cast<size_t>(r) * cols + c] = std::max(0.0, acc);  // ReLU
            }
        }
        return grid;
    }

private:
    std::vector<double> unit_kernel(const std::string& layer_id, std::uint64_t unit_index) const {
        std::vector<double> kernel(kKernel * kKernel);
        std::uint64_t h = hash_mix(hash_of(name_, layer_id), splitmix64(seed_ ^ unit_index));
        for (auto& w : kernel) {
            h = splitmix64(h);
            w = unit_real(h) * 2.0 - 1.0;  // uniform in [-1, 1)
        }
        return kernel;
    }

    std::string name_;
    std::map<std::string, int> layer_units_;
    std::uint64_t seed_;
};

class RealUnitSystem final : public System {
public:
    RealUnitSystem(std::shared_ptr<RealModel> model, NeuronAddress address)
        : model_(std::move(model)), address_(std::move(address)) {}

    NeuronAddress address() const override { return address_; }

    ActivationResult activate(const ImageHandle& image) const override {
        const scene::Pixels pixels = input_pixels(image);
        Grid grid;
        {
            // one forward pass at a time per model instance
            std::lock_guard<std::mutex> lock(forward_mutex_);
            grid = model_->activation_map(address_.layer_id, address_.unit_index, pixels);
        }
        ActivationResult result;
        result.activation = grid.max_value();
        result.reported_activation = std::round(result.activation);

        auto mask = std::make_shared<scene::Mask>(
            upscale_mask(percentile_mask(grid, 0.95), pixels.width, pixels.height));
        result.mask_coverage = mask->coverage();
        ImageHandle evidence;
        evidence.pixel_data = std::make_shared<const scene::Pixels>(pixels);
        evidence.evidence_mask = std::move(mask);
        evidence.reported_activation = result.reported_activation;
        evidence.title = image.title;
        result.masked_image = std::move(evidence);
        return result;
    }

private:
    static scene::Pixels input_pixels(const ImageHandle& image) {
        if (image.has_pixels()) return *image.pixel_data;
        if (image.has_scene()) return scene::render(*image.scene_data);
        fail("BackendError", "empty image handle");
    }

    std::shared_ptr<RealModel> model_;
    NeuronAddress address_;
    mutable std::mutex forward_mutex_;
};

}  // namespace

std::shared_ptr<RealModel> make_filter_bank_model(const std::string& name,
                                                  std::map<std::string, int> layer_units,
                                                  std::uint64_t seed) {
    return std::make_shared<FilterBankModel>(name, std::move(layer_units), seed);
}

SystemHandle register_real_model_adapter(const RealModelRegistry& registry,
                                         const std::string& model_name,
                                         const std::string& layer_id, std::uint64_t unit_index) {
    if (!registry.has(model_name))
        fail("AddressError", "model '" + model_name + "' is not registered");
    std::shared_ptr<RealModel> model = registry.get(model_name);
    if (!model->has_unit(layer_id, unit_index))
        fail("AddressError", model_name + " has no unit " + layer_id + ":" +
                                 std::to_string(unit_index));
    return std::make_shared<RealUnitSystem>(std::move(model),
                                            NeuronAddress{model_name, layer_id, unit_index});
}

}  // namespace maialab::neurons
