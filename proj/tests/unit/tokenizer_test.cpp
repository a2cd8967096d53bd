#include <gtest/gtest.h>

#include <filesystem>

#include "test_support.hpp"
#include "tracefind/error.hpp"
#include "tracefind/rng.hpp"
#include "tracefind/tokenizer.hpp"

using namespace tracefind;
using tracefind::testing::data_path;
using tracefind::testing::make_corpus;
using tracefind::testing::make_record;

TEST(Vocabulary, SpecialsFixed) {
    Vocabulary v;
    EXPECT_EQ(v.size(), 7u);
    EXPECT_EQ(v.token(special::kPad), "[PAD]");
    EXPECT_EQ(v.token(special::kMask), "[MASK]");
    EXPECT_EQ(*v.find("[CALL]"), special::kCall);
    EXPECT_EQ(*v.find("[EXIT]"), special::kExit);
}

TEST(BuildVocab, ThreeDistinctSignatures) {
    const Corpus c = make_corpus({make_record("a", "p", "f", {3, 1}), make_record("b", "p", "f", {1, 2, 3})});
    const Vocabulary v = build_vocab(c, Variant::Plain);
    EXPECT_EQ(v.size(), 7u + 3u);
    // First-occurrence order.
    EXPECT_EQ(v.token(7), "-> java.test.Api.m3(): void");
    EXPECT_EQ(v.token(8), "-> java.test.Api.m1(): void");
    EXPECT_EQ(v.token(9), "-> java.test.Api.m2(): void");
    EXPECT_THROW(build_vocab(Corpus{}, Variant::Plain), EmptyCorpusError);
}

TEST(BuildVocab, RepeatedSignatureGetsOneId) {
    const Corpus c = parse_corpus(data_path("three_records.jsonl"));
    const std::string trim = "-> java.lang.String.trim(): java.lang.String";
    Corpus many = c;
    for (int i = 0; i < 5; ++i) {
        auto r = c.records[1];
        r.record_id += "/" + std::to_string(i);
        many.records.push_back(r);
    }
    const Vocabulary v = build_vocab(many, Variant::Boundaries);
    int count = 0;
    for (const auto& t : v.signatures()) count += t == trim;
    EXPECT_EQ(count, 1);
    // Boundary markers never become signature ids.
    for (const auto& t : v.signatures()) {
        EXPECT_NE(t, "[CALL]");
        EXPECT_NE(t, "[EXIT]");
    }
    EXPECT_EQ(build_vocab(many, Variant::Boundaries), build_vocab(many, Variant::Plain));
}

TEST(Vocabulary, JsonRoundTrip) {
    const Vocabulary v = build_vocab(parse_corpus(data_path("three_records.jsonl")), Variant::Plain);
    const auto path = std::filesystem::temp_directory_path() / "tracefind_vocab_test.json";
    v.save(path);
    const Vocabulary back = Vocabulary::load(path);
    EXPECT_EQ(back, v);
    EXPECT_EQ(back.hash(), v.hash());
    std::filesystem::remove(path);
    EXPECT_THROW(Vocabulary::from_json(R"({"specials":{"[PAD]":1},"tokens":[]})"), ValidationError);
    EXPECT_THROW(Vocabulary::from_json(R"({"specials":{}, "tokens":[]})"), ValidationError);
}

TEST(Encode, EmptySequence) {
    const auto r = make_record("e", "p", "f", {});
    const auto enc = encode(r, Vocabulary{}, Variant::Plain, {8, Truncation::Head});
    EXPECT_EQ(enc.ids, (std::vector<TokenId>{special::kCls, special::kSep, 0, 0, 0, 0, 0, 0}));
    EXPECT_EQ(enc.attention_mask, (std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0, 0, 0}));
    EXPECT_EQ(enc.length(), 2u);
}

TEST(Encode, SingleKnownSignature) {
    const auto r = make_record("k", "p", "f", {4});
    const Vocabulary v = build_vocab(make_corpus({r}), Variant::Plain);
    const auto enc = encode(r, v, Variant::Plain, {6, Truncation::Head});
    EXPECT_EQ(enc.ids, (std::vector<TokenId>{special::kCls, 7, special::kSep, 0, 0, 0}));
}

TEST(Encode, BoundariesAndUnknowns) {
    const Corpus c = parse_corpus(data_path("three_records.jsonl"));
    const Vocabulary v = build_vocab(make_corpus({c.records[1]}), Variant::Boundaries);
    const auto enc = encode(c.records[0], v, Variant::Boundaries, {16, Truncation::Head});
    const std::vector<TokenId> expected = {special::kCls, special::kUnk, special::kCall, special::kUnk, special::kExit,
                                           special::kUnk, special::kUnk, special::kSep};
    EXPECT_EQ(std::vector<TokenId>(enc.ids.begin(), enc.ids.begin() + 8), expected);
    EXPECT_EQ(unk_stats({enc}).unknown, 4u);
    EXPECT_EQ(unk_stats({enc}).tokens, 6u);
}

TEST(Encode, TruncatesThousandEventsTo768) {
    std::vector<int> calls(1000);
    for (int i = 0; i < 1000; ++i) calls[i] = i;
    const auto r = make_record("long", "p", "f", calls);
    const Vocabulary v = build_vocab(make_corpus({r}), Variant::Plain);
    const auto head = encode(r, v, Variant::Plain, {768, Truncation::Head});
    // Oracle: 768 slots minus CLS and SEP.
    const std::size_t expected_events = 768 - 2;
    std::size_t events = 0;
    for (auto id : head.ids) events += id >= special::kCount;
    EXPECT_EQ(events, expected_events);
    EXPECT_EQ(head.ids.size(), 768u);
    EXPECT_EQ(head.ids[1], 7);            // first event kept
    EXPECT_EQ(head.ids[766], 7 + 765);    // event 765 is the last kept
    EXPECT_EQ(head.ids[767], special::kSep);

    const auto tail = encode(r, v, Variant::Plain, {768, Truncation::Tail});
    EXPECT_EQ(tail.ids[1], 7 + 1000 - 766);
    EXPECT_EQ(tail.ids[766], 7 + 999);
    EXPECT_THROW(encode(r, v, Variant::Plain, {1, Truncation::Head}), std::invalid_argument);
}

TEST(Encode, PropertiesOnRandomRecords) {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        auto r = make_record("r", "p", "com.acme.Widget.render(int): void", {});
        const auto n = rng.between(0, 40);
        for (int i = 0; i < n; ++i) {
            const auto kind = rng.below(4);
            if (kind == 0) {
                r.calls_with_boundaries.push_back(CallEvent::boundary_enter());
                r.calls_with_boundaries.push_back(CallEvent::call("java.util.List.size(): int"));
                r.calls.push_back(CallEvent::call("java.util.List.size(): int"));
                r.calls_with_boundaries.push_back(CallEvent::boundary_exit());
            } else {
                auto e = CallEvent::call("java.lang.Math.m" + std::to_string(rng.below(12)) + "(): int");
                r.calls.push_back(e);
                r.calls_with_boundaries.push_back(e);
            }
        }
        validate_record(r, "java.");
        const Vocabulary v = build_vocab(make_corpus({r}), Variant::Boundaries);
        const std::size_t max_len = static_cast<std::size_t>(rng.between(2, 200));
        for (auto variant : {Variant::Plain, Variant::Boundaries}) {
            const auto enc = encode(r, v, variant, {max_len, Truncation::Head});
            ASSERT_EQ(enc.ids.size(), max_len);
            ASSERT_EQ(enc.ids[0], special::kCls);
            const auto len = enc.length();
            ASSERT_EQ(enc.ids[len - 1], special::kSep);
            for (std::size_t i = 0; i < max_len; ++i) ASSERT_EQ(enc.attention_mask[i] == 1, enc.ids[i] != special::kPad);
            if (events_for(r, variant).size() + 2 <= max_len) {
                EXPECT_EQ(decode(enc, v), events_for(r, variant));
            }
            // Leakage: no token names the traced method.
            for (const auto& tok : decode_tokens(enc, v)) {
                EXPECT_EQ(tok.find("com.acme.Widget.render"), std::string::npos);
            }
        }
    }
}
