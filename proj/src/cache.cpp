#include "maialab/cache.hpp"

#include <iostream>

#include <nlohmann/json.hpp>

#include "maialab/io.hpp"

namespace maialab::cli {

using nlohmann::json;

ActivationCache::ActivationCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    io::ensure_dirs(dir_);
}

std::filesystem::path ActivationCache::entry_path(const neurons::NeuronAddress& address,
                                                  std::uint64_t content_hash) const {
    std::string name = address.to_string();
    for (char& c : name)
        if (c == ':') c = '_';
    return dir_ / name / (hex64(content_hash) + ".json");
}

std::optional<neurons::ActivationResult> ActivationCache::get(
    const neurons::NeuronAddress& address, std::uint64_t content_hash) const {
    const auto path = entry_path(address, content_hash);
    const auto text = io::read_file(path);
    if (!text) return std::nullopt;
    try {
        const json j = json::parse(*text);
        neurons::ActivationResult result;
        result.activation = j.at("activation").get<double>();
        result.reported_activation = j.at("reported_activation").get<double>();
        result.mask_coverage = j.at("mask_coverage").get<double>();
        neurons::ImageHandle image;
        if (j.contains("scene"))
            image = neurons::handle_from_scene(scene::scene_from_json(j.at("scene").dump()));
        if (j.contains("mask"))
            image.evidence_mask = std::make_shared<scene::Mask>(
                scene::mask_from_json(j.at("mask").dump()));
        image.reported_activation = result.reported_activation;
        result.masked_image = std::move(image);
        return result;
    } catch (const std::exception& e) {
        std::cerr << "warning: discarding corrupt cache entry " << path.string() << " ("
                  << e.what() << ")\n";
        std::error_code ec;
        std::filesystem::remove(path, ec);
        return std::nullopt;
    }
}

void ActivationCache::put(const neurons::NeuronAddress& address, std::uint64_t content_hash,
                          const neurons::ActivationResult& result) const {
    json j;
    j["activation"] = result.activation;
    j["reported_activation"] = result.reported_activation;
    j["mask_coverage"] = result.mask_coverage;
    if (result.masked_image.has_scene())
        j["scene"] = json::parse(scene::scene_to_json(*result.masked_image.scene_data));
    if (result.masked_image.evidence_mask)
        j["mask"] = json::parse(scene::mask_to_json(*result.masked_image.evidence_mask));
    io::atomic_write_file(entry_path(address, content_hash), j.dump());
}

neurons::ActivationResult CachedSystem::activate(const neurons::ImageHandle& image) const {
    const std::uint64_t content_hash = image.content_hash();
    if (auto hit = cache_->get(inner_->address(), content_hash)) return *hit;
    neurons::ActivationResult fresh = inner_->activate(image);
    cache_->put(inner_->address(), content_hash, fresh);
    return fresh;
}

double CachedSystem::activation_only(const neurons::ImageHandle& image) const {
    if (auto hit = cache_->get(inner_->address(), image.content_hash())) return hit->activation;
    return inner_->activation_only(image);
}

}  // namespace maialab::cli
