#include <doctest.h>

#include <filesystem>

#include "maialab/toolkit.hpp"

using namespace maialab;
using namespace maialab::tools;

namespace {

ToolContext make_context() {
    static const ClientRegistry registry = ClientRegistry::with_defaults();
    ToolContext ctx;
    ctx.clients = registry.make_clients("scene", "scene", "scene", "scene");
    ctx.seed = 11;
    ctx.run_id = "test-run";
    return ctx;
}

std::shared_ptr<const std::vector<ImageHandle>> small_corpus(size_t n) {
    auto corpus = std::make_shared<std::vector<ImageHandle>>();
    const auto& vocab = scene::default_vocabulary();
    const std::vector<std::string> prompts = {"stripes on fabric", "a dog", "sky and grass",
                                              "a boat on the water", "stripes and a dog"};
    for (size_t i = 0; i < n; ++i)
        corpus->push_back(neurons::handle_from_scene(
            scene::generate_scene(vocab, prompts[i % prompts.size()], i)));
    return corpus;
}

neurons::SystemHandle stripes_system() {
    neurons::SyntheticNeuronSpec spec;
    spec.kind = neurons::NeuronKind::monosemantic;
    spec.concept_a = "stripes";
    return std::make_shared<neurons::SyntheticNeuronSystem>(
        neurons::NeuronAddress{"synthetic", "test", 0}, spec);
}

}  // namespace

TEST_CASE("text2image generates one image per prompt in order") {
    ToolContext ctx = make_context();
    const auto images = text2image(ctx, {"a dog standing on the grass", "a boat", "stripes"});
    REQUIRE(images.size() == 3);
    CHECK(scene::caption_regions(*images[0].scene_data) == "dog, grass");
    CHECK(scene::caption_regions(*images[1].scene_data) == "boat");
    CHECK(scene::caption_regions(*images[2].scene_data) == "stripes");
    CHECK(ctx.client_dispatches["generator"] == 1);

    std::vector<std::string> too_many(17, "a dog");
    CHECK_THROWS_WITH_AS(text2image(ctx, too_many), doctest::Contains("BatchTooLarge"), Error);
    CHECK_THROWS_WITH_AS(text2image(ctx, {}), doctest::Contains("InsufficientInput"), Error);

    // generation failure carries the prompt context and the tool stays usable
    CHECK_THROWS_WITH_AS(text2image(ctx, {""}), doctest::Contains("GenerationFailed"), Error);
}

TEST_CASE("edit_images interleaves originals and edits") {
    ToolContext ctx = make_context();
    const EditReply reply =
        edit_images(ctx, {"a dog standing on the grass"}, {"replace the dog with a lion"});
    REQUIRE(reply.all_images.size() == 2);
    REQUIRE(reply.all_titles.size() == 2);
    CHECK(scene::caption_regions(*reply.all_images[0].scene_data) == "dog, grass");
    const auto& edited = *reply.all_images[1].scene_data;
    CHECK(scene::caption_label_set(edited).count("grass"));
    CHECK_FALSE(scene::caption_label_set(edited).count("dog"));
    CHECK(reply.all_titles[0] == "a dog standing on the grass");
    CHECK(reply.all_titles[1] == "replace the dog with a lion");

    // interleaving invariant on a longer batch
    const EditReply batch = edit_images(ctx, {"a dog", "a boat"},
                                        {"replace the dog with a horse", "add water"});
    CHECK(batch.all_images.size() == 4);
    CHECK(batch.all_titles[0] == "a dog");
    CHECK(batch.all_titles[2] == "a boat");
}

TEST_CASE("edit_images lints negative phrasing before any dispatch") {
    ToolContext ctx = make_context();
    CHECK_THROWS_WITH_AS(edit_images(ctx, {"a dog"}, {"remove the dog"}),
                         doctest::Contains("NegativeEditRejected"), Error);
    // nothing was dispatched to either client
    CHECK(ctx.client_dispatches["generator"] == 0);
    CHECK(ctx.client_dispatches["editor"] == 0);

    CHECK_THROWS_WITH_AS(edit_images(ctx, {"a dog"}, {"e1", "e2"}), doctest::Contains("ArityError"),
                         Error);
}

TEST_CASE("describe_images emits title-description lines from fresh dispatches") {
    ToolContext ctx = make_context();
    const auto images = text2image(ctx, {"a dog standing on the grass", "a boat"});
    const std::string before = describe_images(ctx, {images[0]}, {"exp 1"});
    CHECK(before == "exp 1: dog, grass");

    const std::string two = describe_images(ctx, images, {"first", "second"});
    CHECK(two == "first: dog, grass\nsecond: boat");

    // history independence: the same call after unrelated activity is identical
    (void)text2image(ctx, {"sky", "water", "a horse"});
    (void)summarize_images(ctx, images);
    const std::string after = describe_images(ctx, {images[0]}, {"exp 1"});
    CHECK(after == before);

    CHECK_THROWS_WITH_AS(describe_images(ctx, images, {"only-one"}),
                         doctest::Contains("ArityError"), Error);
}

TEST_CASE("summarize_images reduces to the shared concept") {
    ToolContext ctx = make_context();
    const auto images = text2image(ctx, {"a dog on the grass", "a dog in the snow"});
    CHECK(summarize_images(ctx, images) == "dog");

    const auto disjoint = text2image(ctx, {"a dog", "a boat"});
    CHECK(summarize_images(ctx, disjoint) == "no shared concept");

    CHECK_THROWS_WITH_AS(summarize_images(ctx, {images[0]}),
                         doctest::Contains("InsufficientInput"), Error);
}

TEST_CASE("dataset_exemplars returns the top-15 and pins the threshold") {
    ToolContext ctx = make_context();
    ctx.dataset = small_corpus(120);
    const auto system = stripes_system();

    const ExemplarReply reply = dataset_exemplars(ctx, *system);
    REQUIRE(reply.activations.size() == 15);
    REQUIRE(reply.images.size() == 15);
    CHECK(ctx.activation_threshold.has_value());
    CHECK(*ctx.activation_threshold > 0.0);
    // stripe-bearing scenes only at the top
    for (const auto& image : reply.images)
        CHECK(scene::caption_label_set(*image.scene_data).count("stripes"));

    // idempotent: same output, threshold unchanged
    const double threshold = *ctx.activation_threshold;
    const ExemplarReply again = dataset_exemplars(ctx, *system);
    CHECK(again.activations == reply.activations);
    CHECK(*ctx.activation_threshold == threshold);
}

TEST_CASE("disabled tools never dispatch their clients") {
    ToolContext ctx = make_context();
    ctx.dataset = small_corpus(40);
    ctx.enabled_tools.erase("dataset_exemplars");
    CHECK_THROWS_WITH_AS(dataset_exemplars(ctx, *stripes_system()),
                         doctest::Contains("ToolDisabled"), Error);
    CHECK(ctx.client_dispatches["exemplars"] == 0);

    ToolContext no_gen = make_context();
    no_gen.enabled_tools.erase("text2image");
    CHECK_THROWS_WITH_AS(text2image(no_gen, {"a dog"}), doctest::Contains("ToolDisabled"), Error);
    CHECK(no_gen.client_dispatches["generator"] == 0);

    ToolContext no_dataset = make_context();
    CHECK_THROWS_WITH_AS(dataset_exemplars(no_dataset, *stripes_system()),
                         doctest::Contains("NoDatasetBound"), Error);
}

TEST_CASE("experiment log appends immutably and persists") {
    namespace fs = std::filesystem;
    const fs::path log_path = fs::temp_directory_path() / "maialab_toolkit_log_test.jsonl";
    fs::remove(log_path);

    ToolContext ctx = make_context();
    ctx.log_path = log_path;
    ctx.current_round = 2;
    ctx.current_program = "def run_experiment(system, tools):\n    pass\n";

    const auto images = text2image(ctx, {"a dog", "a boat", "stripes"});
    log_experiment(ctx, {0.9, 0.0, 0.85}, images, {"p1", "p2", "p3"}, "first note");
    REQUIRE(ctx.log.size() == 1);
    CHECK(ctx.log[0].round_index == 1);
    CHECK(ctx.log[0].session_round == 2);
    CHECK(ctx.log[0].records.size() == 3);
    CHECK(ctx.log[0].records[0].reported_activation == 0.9);

    log_experiment(ctx, {0.5}, {images[0]}, {"again"}, "second note");
    CHECK(ctx.log[1].round_index == 2);

    CHECK_THROWS_WITH_AS(log_experiment(ctx, {0.5}, images, {"x"}, ""),
                         doctest::Contains("ArityError"), Error);
    CHECK(ctx.log.size() == 2);  // failed call appended nothing

    // logged activations survive a reload
    const auto reloaded = load_log(log_path);
    REQUIRE(reloaded.size() == 2);
    CHECK(reloaded[0].round_index == 1);
    CHECK(reloaded[0].records[0].title == "p1");
    CHECK(reloaded[0].records[0].reported_activation == 0.9);
    CHECK(reloaded[0].records[0].image_ref == images[0].id());
    CHECK(reloaded[1].notes == "second note");
    fs::remove(log_path);
}

TEST_CASE("client registry reports determinism and rejects unknown keys") {
    const ClientRegistry registry = ClientRegistry::with_defaults();
    const std::string manifest = registry.manifest_json();
    CHECK(manifest.find("\"scene\"") != std::string::npos);
    CHECK(manifest.find("\"hosted\"") != std::string::npos);
    CHECK_THROWS_WITH_AS(registry.make_clients("nope", "scene", "scene", "scene"),
                         doctest::Contains("UnknownClient"), Error);

    // hosted stubs exist but refuse to run
    const ClientSet hosted = registry.make_clients("hosted", "hosted", "hosted", "hosted");
    CHECK_THROWS_WITH_AS(hosted.generator->generate({"x"}, 0),
                         doctest::Contains("ClientUnavailable"), Error);

    // generator variant differs from the default but stays deterministic
    const ClientSet v1 = registry.make_clients("scene", "scene", "scene", "scene");
    const ClientSet v2 = registry.make_clients("scene-v2", "scene", "scene", "scene");
    const auto a = v1.generator->generate({"a dog"}, 5);
    const auto b = v2.generator->generate({"a dog"}, 5);
    CHECK(a[0].scene_data->image_id != b[0].scene_data->image_id);
    const auto b2 = v2.generator->generate({"a dog"}, 5);
    CHECK(*b[0].scene_data == *b2[0].scene_data);
}
