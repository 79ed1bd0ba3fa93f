#include <doctest.h>

#include <cmath>
#include <set>

#include "maialab/scene.hpp"

using namespace maialab;
using namespace maialab::scene;

namespace {

std::set<std::string> region_labels(const SceneImage& s) {
    std::set<std::string> labels;
    for (const auto& r : s.regions) labels.insert(r.label);
    return labels;
}

/// Independent overlap oracle: fraction of the box's pixel area left unmasked,
/// counted pixel by pixel with its own rounding.
double overlap_fraction_oracle(const Box& box, const Mask& mask) {
    const int x0 = static_cast<int>(std::lround(box.x0 * mask.width));
    const int x1 = static_cast<int>(std::lround(box.x1 * mask.width));
    const int y0 = static_cast<int>(std::lround(box.y0 * mask.height));
    const int y1 = static_cast<int>(std::lround(box.y1 * mask.height));
    long total = 0, open = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            ++total;
            open += mask.at(x, y);
        }
    return total == 0 ? 0.0 : static_cast<double>(open) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("vocabulary covers the roster concepts and normalizes synonyms") {
    const auto& vocab = default_vocabulary();
    for (const char* concept_token : {"stripes", "dog", "car window", "leash", "racecar", "skyline"})
        CHECK(vocab.contains(concept_token));
    CHECK(vocab.normalize("dogs") == "dog");
    CHECK(vocab.normalize("tails") == "tail");
    CHECK(vocab.normalize("arches") == "arch");
    CHECK(vocab.normalize("DOG") == "dog");
    CHECK(vocab.normalize("qzxv") == std::nullopt);
    // "hands" and "hand" stay distinct concepts
    CHECK(vocab.normalize("hands") == "hands");
    CHECK(vocab.normalize("hand") == "hand");

    // synonym map is idempotent: every target is canonical
    for (const auto& [from, to] : vocab.synonyms()) {
        CHECK(vocab.normalize(to) == to);
        CHECK_FALSE(vocab.canonical_tokens().count(from));
    }
}

TEST_CASE("generate_scene matches prompt concepts with jittered confidence") {
    const auto& vocab = default_vocabulary();
    const SceneImage s = generate_scene(vocab, "a dog standing on the grass", 7);

    CHECK(region_labels(s) == std::set<std::string>{"dog", "grass"});
    CHECK(s.provenance == Provenance::generated);
    CHECK(s.source_prompt == "a dog standing on the grass");
    for (const auto& r : s.regions) {
        CHECK(r.confidence >= 0.85);
        CHECK(r.confidence <= 0.95);
        CHECK(r.box.valid());
        // confidence is exactly 0.9 plus the hash-derived jitter
        const double jitter = unit_real(hash_of(s.image_id, r.label)) * 0.1 - 0.05;
        CHECK(r.confidence == doctest::Approx(0.9 + jitter).epsilon(1e-12));
    }
}

TEST_CASE("generate_scene rejects bad prompts and passes through unmatched ones") {
    const auto& vocab = default_vocabulary();
    CHECK_THROWS_WITH_AS(generate_scene(vocab, "", 3), doctest::Contains("InvalidPrompt"), Error);
    CHECK_THROWS_AS(generate_scene(vocab, std::string(600, 'x'), 0), Error);

    const SceneImage s = generate_scene(vocab, "qzxv flibber", 0);
    CHECK(s.regions.empty());

    // concept cap: a prompt mentioning many concepts stops at 8 regions
    const SceneImage big = generate_scene(
        vocab, "dog grass sky water tree fence snow road bridge building", 1);
    CHECK(big.regions.size() == 8);
}

TEST_CASE("generate_scene is deterministic and seed-sensitive") {
    const auto& vocab = default_vocabulary();
    const std::string prompt = "a horse near a fence under the sky";
    const SceneImage a = generate_scene(vocab, prompt, 42);
    const SceneImage b = generate_scene(vocab, prompt, 42);
    const SceneImage c = generate_scene(vocab, prompt, 43);
    CHECK(a == b);
    CHECK(a.image_id != c.image_id);
}

TEST_CASE("bigram concepts match before their component words") {
    const auto& vocab = default_vocabulary();
    const SceneImage s = generate_scene(vocab, "a car window on a car", 5);
    const auto labels = region_labels(s);
    CHECK(labels.count("car window"));
    CHECK(labels.count("car"));
}

TEST_CASE("edit_scene replace swaps exactly one label") {
    const auto& vocab = default_vocabulary();
    const SceneImage s = generate_scene(vocab, "a dog standing on the grass", 7);
    const SceneImage e = edit_scene(vocab, s, "replace the dog with a cat");

    CHECK(region_labels(e) == std::set<std::string>{"cat", "grass"});
    CHECK(e.provenance == Provenance::edited);
    CHECK(e.image_id == hex64(hash_of(s.image_id, "replace the dog with a cat")));
    // edit locality: box, confidence, and the other region are untouched
    REQUIRE(e.regions.size() == s.regions.size());
    for (size_t i = 0; i < s.regions.size(); ++i) {
        CHECK(e.regions[i].box == s.regions[i].box);
        CHECK(e.regions[i].confidence == s.regions[i].confidence);
        if (s.regions[i].label != "dog") CHECK(e.regions[i] == s.regions[i]);
    }
    // the original is unmodified
    CHECK(region_labels(s) == std::set<std::string>{"dog", "grass"});
    // "cat" is not canonical, so the swapped region is flagged unknown
    for (const auto& r : e.regions)
        if (r.label == "cat") CHECK(r.unknown);
}

TEST_CASE("edit_scene rejects removal phrasing and unknown grammar") {
    const auto& vocab = default_vocabulary();
    const SceneImage s = generate_scene(vocab, "a dog", 1);
    CHECK_THROWS_WITH_AS(edit_scene(vocab, s, "remove the dog"),
                         doctest::Contains("NegativeEditRejected"), Error);
    CHECK_THROWS_WITH_AS(edit_scene(vocab, s, "delete the dog"),
                         doctest::Contains("NegativeEditRejected"), Error);
    CHECK_THROWS_WITH_AS(edit_scene(vocab, s, "replace the cat with a dog"),
                         doctest::Contains("EditTargetMissing"), Error);
    CHECK_THROWS_WITH_AS(edit_scene(vocab, s, "rotate the dog"),
                         doctest::Contains("EditGrammarError"), Error);
}

TEST_CASE("edit_scene color change and add") {
    const auto& vocab = default_vocabulary();
    const SceneImage s = generate_scene(vocab, "a dog", 1);

    const SceneImage colored = edit_scene(vocab, s, "change the color of dog to red");
    REQUIRE(colored.regions.size() == 1);
    CHECK(colored.regions[0].label == "dog");
    CHECK(colored.regions[0].attributes.at("color") == "red");

    const SceneImage added = edit_scene(vocab, s, "add a leash");
    CHECK(region_labels(added) == std::set<std::string>{"dog", "leash"});
    CHECK(added.regions[1].confidence >= 0.85);
}

TEST_CASE("render is a pure function of resolution and regions") {
    const auto& vocab = default_vocabulary();
    const SceneImage s = generate_scene(vocab, "a dog on the grass", 9);
    CHECK(render(s) == render(s));

    SceneImage renamed = s;
    renamed.image_id = "something-else";
    renamed.provenance = Provenance::dataset;
    renamed.source_prompt = "different";
    CHECK(render(s) == render(renamed));

    SceneImage empty;
    const Pixels p = render(empty);
    for (size_t i = 3; i < p.rgb.size(); i += 3) {
        CHECK(p.rgb[i] == p.rgb[0]);
        CHECK(p.rgb[i + 1] == p.rgb[1]);
        CHECK(p.rgb[i + 2] == p.rgb[2]);
    }

    // color attribute changes pixels
    const SceneImage colored = edit_scene(vocab, s, "change the color of dog to red");
    SceneImage colored_same_id = colored;
    colored_same_id.image_id = s.image_id;
    CHECK_FALSE(render(s) == render(colored_same_id));
}

TEST_CASE("png encoding round-trips deterministically") {
    const auto& vocab = default_vocabulary();
    const SceneImage s = generate_scene(vocab, "a boat on the water", 2);
    const std::string png = encode_png(render(s));
    CHECK(png.substr(1, 3) == "PNG");
    CHECK(png == encode_png(render(s)));
}

TEST_CASE("caption_regions lists labels under the 50% overlap rule") {
    const auto& vocab = default_vocabulary();
    SceneImage s;
    s.image_id = "caption-test";
    ConceptRegion dog;
    dog.label = "dog";
    dog.box = {0.1, 0.1, 0.4, 0.4};
    dog.confidence = 0.9;
    ConceptRegion grass;
    grass.label = "grass";
    grass.box = {0.6, 0.6, 0.9, 0.9};
    grass.confidence = 0.9;
    s.regions = {dog, grass};

    CHECK(caption_regions(s) == "dog, grass");

    // mask covering only the dog box
    Mask dog_mask = rasterize_boxes({dog.box}, s.width, s.height, 0);
    CHECK(overlap_fraction_oracle(dog.box, dog_mask) == doctest::Approx(1.0));
    CHECK(overlap_fraction_oracle(grass.box, dog_mask) == doctest::Approx(0.0));
    CHECK(caption_regions(s, &dog_mask) == "dog");

    SceneImage empty;
    CHECK(caption_regions(empty) == "no recognizable concepts");

    Mask wrong(16, 16);
    CHECK_THROWS_WITH_AS(caption_regions(s, &wrong), doctest::Contains("MaskShapeError"), Error);

    (void)vocab;
}

TEST_CASE("caption soundness: every caption label meets the overlap rule") {
    const auto& vocab = default_vocabulary();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SceneImage s =
            generate_scene(vocab, "dog grass sky water fence snow", seed);
        // half-plane mask: left half unmasked
        Mask half(s.width, s.height, 0);
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width / 2; ++x) half.set(x, y, true);

        const auto labels = caption_label_set(s, &half);
        for (const auto& r : s.regions) {
            const double frac = overlap_fraction_oracle(r.box, half);
            CHECK(labels.count(r.label) == (frac >= 0.5 ? 1u : 0u));
        }
    }
}

TEST_CASE("summarize_common intersects caption sets") {
    const auto& vocab = default_vocabulary();
    const SceneImage a = generate_scene(vocab, "a dog on the grass", 1);
    const SceneImage b = generate_scene(vocab, "a dog in the snow", 2);
    CHECK(summarize_common({a, b}) == "dog");

    const SceneImage c = generate_scene(vocab, "a horse", 3);
    CHECK(summarize_common({generate_scene(vocab, "a dog", 4), c}) == "no shared concept");

    const SceneImage d1 = generate_scene(vocab, "a dog with a leash", 5);
    const SceneImage d2 = generate_scene(vocab, "a dog with a leash", 6);
    CHECK(summarize_common({d1, d2}) == "dog, leash");

    CHECK_THROWS_WITH_AS(summarize_common({a}), doctest::Contains("InsufficientInput"), Error);
}

TEST_CASE("scene sidecar JSON round-trips") {
    const auto& vocab = default_vocabulary();
    SceneImage s = generate_scene(vocab, "a red dog and a boat", 11);
    s = edit_scene(vocab, s, "change the color of dog to red");
    const SceneImage back = scene_from_json(scene_to_json(s));
    CHECK(back == s);
}
