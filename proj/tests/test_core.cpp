#include <catch2/catch_amalgamated.hpp>

#include "semiicl/core.hpp"
#include "test_helpers.hpp"

using namespace semiicl;
using namespace testhelpers;

TEST_CASE("TaskSpec validation") {
    TaskSpec t = classification_task();
    REQUIRE_NOTHROW(t.validate());

    t.labels.clear();
    REQUIRE_THROWS_AS(t.validate(), ConfigError);

    t = classification_task({"a", "a"});
    REQUIRE_THROWS_AS(t.validate(), ConfigError);

    t = translation_task();
    t.target_lang.clear();
    REQUIRE_THROWS_AS(t.validate(), ConfigError);

    t = freeform_task();
    t.instruction.clear();
    REQUIRE_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("render_prompt: classification zero-shot") {
    TaskSpec t = classification_task();
    std::string prompt = render_prompt(t, DemoSet{}, "book a flight");
    REQUIRE(prompt.find("refund") != std::string::npos);
    REQUIRE(prompt.find("card_lost") != std::string::npos);
    REQUIRE(prompt.find("Input: book a flight") != std::string::npos);
    REQUIRE(prompt.find(kConfidenceLine) != std::string::npos);
    // No demonstration pairs in zero-shot mode.
    REQUIRE(prompt.find("Label: ") == std::string::npos);
}

TEST_CASE("render_prompt: translation demo order") {
    TaskSpec t = translation_task();
    DemoSet demos;
    demos.demos.push_back({"d1", "hello", "bonjour", std::nullopt,
                           DemoOrigin::ground_truth});
    demos.demos.push_back({"d2", "goodbye", "au revoir", std::nullopt,
                           DemoOrigin::ground_truth});
    std::string prompt = render_prompt(t, demos, "thank you");

    size_t p1 = prompt.find("English: hello\nFrench: bonjour");
    size_t p2 = prompt.find("English: goodbye\nFrench: au revoir");
    size_t pq = prompt.find("English: thank you");
    REQUIRE(p1 != std::string::npos);
    REQUIRE(p2 != std::string::npos);
    REQUIRE(pq != std::string::npos);
    REQUIRE(p1 < p2);
    REQUIRE(p2 < pq);
    REQUIRE(prompt.find(kConfidenceLine) != std::string::npos);
}

TEST_CASE("render_prompt: freeform template") {
    TaskSpec t = freeform_task();
    DemoSet demos;
    demos.demos.push_back({"d1", "what is 2+2?", "4", std::string("2 and 2 make 4"),
                           DemoOrigin::pseudo});
    std::string prompt = render_prompt(t, demos, "what is 3+3?");
    REQUIRE(prompt.find("Think step by step.") != std::string::npos);
    REQUIRE(prompt.find(kConfidenceLine) != std::string::npos);
    REQUIRE(prompt.find("Question: what is 2+2?") != std::string::npos);
    REQUIRE(prompt.find("2 and 2 make 4") != std::string::npos);
    REQUIRE(prompt.find("Answer: 4") != std::string::npos);
}

TEST_CASE("render_prompt determinism") {
    TaskSpec t = classification_task();
    DemoSet demos;
    demos.demos.push_back({"d1", "lost my card", "card_lost", std::nullopt,
                           DemoOrigin::ground_truth});
    std::string a = render_prompt(t, demos, "need my money back");
    std::string b = render_prompt(t, demos, "need my money back");
    REQUIRE(a == b);
}

TEST_CASE("render_prompt errors") {
    TaskSpec t = classification_task();
    REQUIRE_THROWS_AS(render_prompt(t, DemoSet{}, ""), ConfigError);
}

TEST_CASE("parse_response: classification with confidence") {
    TaskSpec t = classification_task();
    auto resp = parse_response(t, "Let me think.\nLabel: refund\n**Confidence**: 0.9");
    REQUIRE(resp.prediction == "refund");
    REQUIRE(resp.verbalized_confidence);
    REQUIRE(*resp.verbalized_confidence == Catch::Approx(0.9));
}

TEST_CASE("parse_response: out-of-range confidence dropped") {
    TaskSpec t = classification_task();
    auto resp = parse_response(t, "Label: refund\n**Confidence**: 1.7");
    REQUIRE(resp.prediction == "refund");
    REQUIRE_FALSE(resp.verbalized_confidence);
}

TEST_CASE("parse_response: last confidence occurrence wins") {
    TaskSpec t = classification_task();
    std::string raw =
        "**Confidence**: 0.3\nLabel: transfer\n**Confidence**: 0.8";

    // Independent oracle: walk the string collecting every parsable
    // confidence value and keep the final one.
    double expected = -1;
    size_t pos = 0;
    while ((pos = raw.find("**Confidence**:", pos)) != std::string::npos) {
        pos += 15;
        try {
            expected = std::stod(raw.substr(pos));
        } catch (...) {
        }
    }
    REQUIRE(expected == Catch::Approx(0.8));

    auto resp = parse_response(t, raw);
    REQUIRE(resp.verbalized_confidence);
    REQUIRE(*resp.verbalized_confidence == Catch::Approx(expected));
}

TEST_CASE("parse_response: translation and freeform") {
    TaskSpec t = translation_task();
    auto resp = parse_response(t, "French: bonjour le monde\n**Confidence**: 0.7");
    REQUIRE(resp.prediction == "bonjour le monde");

    TaskSpec f = freeform_task();
    auto r2 = parse_response(
        f, "First add the numbers.\nAnswer: 42\n**Confidence**: 0.5");
    REQUIRE(r2.prediction == "42");
    REQUIRE(r2.rationale);
    REQUIRE(r2.rationale->find("add the numbers") != std::string::npos);

    // No marker: last non-empty line wins.
    auto r3 = parse_response(f, "thinking\n\nthe result is 7\n**Confidence**: 0.4");
    REQUIRE(r3.prediction == "the result is 7");
}

TEST_CASE("parse_response: failures") {
    TaskSpec t = classification_task();
    REQUIRE_THROWS_AS(parse_response(t, "no label here at all"), ParseFailure);
    REQUIRE_THROWS_AS(parse_response(t, ""), ParseFailure);
}

TEST_CASE("normalize_answer") {
    TaskSpec t = classification_task({"Refund", "Card_Lost"});
    REQUIRE(normalize_answer(t, " Refund. ") == "Refund");  // canonical casing
    REQUIRE(normalize_answer(t, "") == "");
    TaskSpec e = freeform_task();
    REQUIRE(normalize_answer(e, "A  B") == "a b");
    REQUIRE(normalize_answer(e, " Refund. ") == "refund");
}

TEST_CASE("answers_equivalent custom registry") {
    TaskSpec t = freeform_task();
    t.equivalence = EquivalenceRule::custom_registry_key;
    t.equivalence_key = "numeric";
    REQUIRE_THROWS_AS(answers_equivalent(t, "1", "1.0"), ConfigError);
    equivalence_registry()["numeric"] = [](const std::string& a,
                                           const std::string& b) {
        return std::stod(a) == std::stod(b);
    };
    REQUIRE(answers_equivalent(t, "1", "1.0"));
    REQUIRE_FALSE(answers_equivalent(t, "1", "2"));
}

TEST_CASE("render/parse round trip preserves stored text") {
    // Demos built from parsed responses re-render without mutating the
    // stored prediction or rationale text.
    TaskSpec f = freeform_task();
    auto resp = parse_response(f, "step one\nAnswer: the final value\n"
                                  "**Confidence**: 0.6");
    PseudoDemonstration p;
    p.example_id = "x";
    p.input = "q";
    p.prediction = resp.prediction;
    p.rationale = resp.rationale;
    DemoSet ds;
    ds.append_pseudo(p);
    std::string prompt = render_prompt(f, ds, "another question");
    REQUIRE(prompt.find("Answer: the final value") != std::string::npos);
    REQUIRE(prompt.find("step one") != std::string::npos);
    REQUIRE(ds.demos[0].prediction == resp.prediction);
    REQUIRE(*ds.demos[0].rationale == *resp.rationale);
}

TEST_CASE("parsed verbalized confidence always in [0,1]") {
    TaskSpec t = classification_task();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        double v = u(rng);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "Label: refund\n**Confidence**: %.4f", v);
        auto resp = parse_response(t, buf);
        if (resp.verbalized_confidence) {
            REQUIRE(*resp.verbalized_confidence >= 0.0);
            REQUIRE(*resp.verbalized_confidence <= 1.0);
        } else {
            REQUIRE((v < -1e-4 || v > 1.0 + 1e-4));
        }
    }
}
