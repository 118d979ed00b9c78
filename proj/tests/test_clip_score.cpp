#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "ttcap/clip_score.hpp"
#include "ttcap/errors.hpp"
#include "ttcap/io_util.hpp"
#include "ttcap/rng.hpp"

using namespace ttcap;

TEST_CASE("sentence_tokenize golden file") {
    const auto cases =
        nlohmann::json::parse(read_file(std::string(TTCAP_TEST_DATA_DIR) + "/sentence_cases.json"));
    REQUIRE(cases.size() == 30);
    for (const auto& c : cases) {
        const auto got = sentence_tokenize(c.at("input").get<std::string>());
        const auto want = c.at("expected").get<std::vector<std::string>>();
        CHECK_MESSAGE(got == want, "input: ", c.at("input").get<std::string>());
    }
}

TEST_CASE("sentence_tokenize rejects empty and whitespace captions") {
    CHECK_THROWS_AS(sentence_tokenize(""), EmptyCaptionError);
    CHECK_THROWS_AS(sentence_tokenize("   \t\n "), EmptyCaptionError);
}

TEST_CASE("sentence_tokenize preserves non-whitespace content") {
    const std::string inputs[] = {"A dog. A cat.", "Mr. Smith sits.", "one! two? three.",
                                  "weird..  spacing. here"};
    auto squash = [](const std::string& s) {
        std::string out;
        for (char c : s)
            if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
        return out;
    };
    for (const auto& in : inputs) {
        std::string joined;
        for (const auto& s : sentence_tokenize(in)) joined += s;
        CHECK(squash(joined) == squash(in));
    }
}

TEST_CASE("clip_score hand-computed cosines on the tiny world") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img0 = world->render_image("img0");  // scene {dog}
    const ImageInput img1 = world->render_image("img1");  // scene {dog, cat}

    SUBCASE("single word, identical construction") {
        const auto sc = clip_score(img0, "dog", *backend.encoder);
        CHECK(sc.score == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(sc.sentences.size() == 1);
    }
    SUBCASE("two sentences average to (1 + 0)/2") {
        const auto sc = clip_score(img0, "dog. cat.", *backend.encoder);
        CHECK(sc.per_sentence_cosine.size() == 2);
        CHECK(sc.per_sentence_cosine[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(sc.per_sentence_cosine[1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(sc.score == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(sc.display_score() == doctest::Approx(50.0).epsilon(1e-9));
    }
    SUBCASE("two-object scene vs single word gives 1/sqrt(2)") {
        const auto sc = clip_score(img1, "dog", *backend.encoder);
        CHECK(sc.score == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("clip_score matches a brute-force recomputation") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const EncoderBackend& enc = *backend.encoder;
    Rng rng(7);
    const std::vector<std::string> ids = {"img0", "img1", "img2"};
    const std::vector<std::string> pool = {"dog", "cat", "grass", "tree", "banana", "a", "on"};

    for (int trial = 0; trial < 100; ++trial) {
        const ImageInput img = world->render_image(ids[rng.uniform_index(ids.size())]);
        std::string caption;
        const int n_sent = 1 + int(rng.uniform_index(3));
        for (int s = 0; s < n_sent; ++s) {
            const int n_words = 1 + int(rng.uniform_index(4));
            for (int w = 0; w < n_words; ++w) {
                caption += pool[rng.uniform_index(pool.size())];
                caption += (w + 1 < n_words) ? " " : "";
            }
            caption += ". ";
        }
        const auto sc = clip_score(img, caption, enc);

        // independent path: tokenize, encode, average by hand
        Eigen::VectorXd v = enc.encode_image(img);
        v /= v.norm();
        double acc = 0.0;
        const auto sentences = sentence_tokenize(caption);
        for (const auto& s : sentences) {
            Eigen::VectorXd t = enc.encode_text(s);
            t /= t.norm();
            acc += v.dot(t);
        }
        CHECK(std::abs(sc.score - acc / double(sentences.size())) < 1e-9);
    }
}

TEST_CASE("rank_candidates argmax and tie-breaking") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img1 = world->render_image("img1");

    SUBCASE("singleton") {
        const auto set = rank_candidates(img1, {"dog"}, *backend.encoder);
        CHECK(set.best_index == 0);
    }
    SUBCASE("tie broken toward the lowest index") {
        // scores: banana -> 0, dog -> 1/sqrt2, cat -> 1/sqrt2 (exact tie)
        const auto set = rank_candidates(img1, {"banana", "dog", "cat"}, *backend.encoder);
        CHECK(set.candidates[1].score == doctest::Approx(set.candidates[2].score).epsilon(1e-15));
        CHECK(set.best_index == 1);
    }
    SUBCASE("empty candidate list") {
        CHECK_THROWS_AS(rank_candidates(img1, {}, *backend.encoder), EmptyCaptionError);
    }
}

TEST_CASE("argmax invariance under strictly increasing transforms") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img2 = world->render_image("img2");
    const std::vector<std::string> captions = {"dog banana.", "dog grass.", "tree.", "cat.",
                                               "dog grass tree."};
    const auto set = rank_candidates(img2, captions, *backend.encoder);

    auto argmax_after = [&](auto&& f) {
        int best = 0;
        for (size_t i = 1; i < set.candidates.size(); ++i)
            if (f(set.candidates[i].score) > f(set.candidates[size_t(best)].score)) best = int(i);
        return best;
    };
    CHECK(argmax_after([](double x) { return 2.0 * x + 1.0; }) == set.best_index);
    CHECK(argmax_after([](double x) { return x * x * x + x; }) == set.best_index);
    CHECK(argmax_after([](double x) { return std::exp(x); }) == set.best_index);
}

TEST_CASE("permutation equivariance of candidate ranking") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img2 = world->render_image("img2");
    const std::vector<std::string> captions = {"dog banana.", "dog grass.", "banana.", "cat.",
                                               "dog grass tree.", "grass tree."};
    const auto base = rank_candidates(img2, captions, *backend.encoder);

    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<size_t> perm(captions.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.uniform_index(k)]);

        std::vector<std::string> shuffled(captions.size());
        for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = captions[perm[i]];
        const auto got = rank_candidates(img2, shuffled, *backend.encoder);

        for (size_t i = 0; i < perm.size(); ++i)
            CHECK(got.candidates[i].score == doctest::Approx(base.candidates[perm[i]].score));
        // expected best: lowest permuted index among max-score candidates
        int expected = 0;
        for (size_t i = 1; i < got.candidates.size(); ++i)
            if (got.candidates[i].score > got.candidates[size_t(expected)].score) expected = int(i);
        CHECK(got.best_index == expected);
    }
}

TEST_CASE("sentence-averaged and full-caption argmax can disagree") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img1 = world->render_image("img1");  // scene {dog, cat}
    const std::vector<std::string> captions = {"dog. cat.", "dog cat banana."};

    const auto by_sentence =
        rank_candidates(img1, captions, *backend.encoder, ScoringMode::sentence_avg);
    const auto full = rank_candidates(img1, captions, *backend.encoder, ScoringMode::full_caption);

    // sentence averaging: 1/sqrt2 vs 2/sqrt6; full caption: 1.0 vs 2/sqrt6
    CHECK(by_sentence.best_index == 1);
    CHECK(full.best_index == 0);
    CHECK(full.candidates[0].score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("over-limit sentences are truncated and flagged") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img0 = world->render_image("img0");

    std::string longsent;
    for (int i = 0; i < 100; ++i) longsent += "dog ";
    longsent += "cat";  // word 101 would flip the score if not truncated at 77
    const auto sc = clip_score(img0, longsent, *backend.encoder);
    REQUIRE(sc.truncated_flags.size() == 1);
    CHECK(sc.truncated_flags[0]);
    CHECK(sc.score == doctest::Approx(1.0).epsilon(1e-12));

    const auto short_sc = clip_score(img0, "dog", *backend.encoder);
    CHECK_FALSE(short_sc.truncated_flags[0]);
}

TEST_CASE("zero-norm embeddings raise a numerical error") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img0 = world->render_image("img0");
    CHECK_THROWS_AS(clip_score(img0, "xyzzy quux", *backend.encoder), NumericalError);
}

TEST_CASE("scored captions serialize to JSONL") {
    auto world = testing::tiny_world();
    ToyBackend backend = make_toy_backend(world);
    const ImageInput img0 = world->render_image("img0");
    const auto sc = clip_score(img0, "dog. cat.", *backend.encoder);
    const auto j = nlohmann::json::parse(scored_caption_jsonl("img0", sc));
    CHECK(j.at("image_id") == "img0");
    CHECK(j.at("caption") == "dog. cat.");
    CHECK(j.at("sentences").size() == 2);
    CHECK(j.at("per_sentence_cosine").size() == 2);
    CHECK(j.at("score").get<double>() == doctest::Approx(0.5));
    CHECK(j.at("display_score").get<double>() == doctest::Approx(50.0));
    CHECK(j.at("truncated_flags").size() == 2);
}
