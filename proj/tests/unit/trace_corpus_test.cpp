#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "tracefind/error.hpp"
#include "tracefind/rng.hpp"
#include "tracefind/trace_corpus.hpp"

using namespace tracefind;
using tracefind::testing::data_path;
using tracefind::testing::make_corpus;
using tracefind::testing::make_record;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

const char* kValidLine =
    R"({"record_id":"r1","project":"p","test_case":"T.t","method_fqn":"a.B.c(): void",)"
    R"("calls":["-> java.lang.String.trim(): java.lang.String"],)"
    R"("calls_with_boundaries":["[CALL]","-> java.lang.String.trim(): java.lang.String","[EXIT]"],)"
    R"("source":"void c() {}","max_depth":1})";

}  // namespace

TEST(CallEvent, LineRoundTrip) {
    for (const char* line : {"-> java.lang.String.trim(): java.lang.String", "<- java.util.List.size(): int", "[CALL]", "[EXIT]"}) {
        EXPECT_EQ(CallEvent::from_line(line).to_line(), line);
    }
    EXPECT_TRUE(CallEvent::from_line("[CALL]").is_boundary);
    EXPECT_THROW(CallEvent::from_line("java.lang.String.trim()"), std::invalid_argument);
    EXPECT_THROW(CallEvent::from_line("-> "), std::invalid_argument);
}

TEST(ParseCorpus, SingleValidRecord) {
    std::istringstream in(std::string(kValidLine) + "\n");
    const Corpus c = parse_corpus(in);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.records[0].record_id, "r1");
    EXPECT_EQ(c.records[0].calls_with_boundaries.size(), 3u);
    EXPECT_EQ(c.records[0].max_depth, 1u);
}

TEST(ParseCorpus, ThreeRecordFixtureInOrder) {
    const Corpus c = parse_corpus(data_path("three_records.jsonl"));
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c.records[0].record_id, "commons-text/0001");
    EXPECT_EQ(c.records[1].record_id, "commons-text/0002");
    EXPECT_EQ(c.records[2].record_id, "guava/0107");
    // Depths match the fixture checker (tests/oracles/check_corpus_fixture.py).
    EXPECT_EQ(boundary_depth(c.records[0].calls_with_boundaries), 1);
    EXPECT_EQ(boundary_depth(c.records[1].calls_with_boundaries), 0);
    EXPECT_EQ(boundary_depth(c.records[2].calls_with_boundaries), 2);
}

TEST(ParseCorpus, CanonicalFixtureRoundTripsByteForByte) {
    const std::string path = data_path("three_records.jsonl");
    std::ostringstream out;
    write_corpus(out, parse_corpus(path));
    EXPECT_EQ(out.str(), read_file(path));
}

TEST(ParseCorpus, MismatchedVariantsFailValidation) {
    std::string line = kValidLine;
    line.replace(line.find(R"("calls":["-> java.lang.String.trim(): java.lang.String"])"),
                 std::string(R"("calls":["-> java.lang.String.trim(): java.lang.String"])").size(),
                 R"("calls":["-> java.lang.String.strip(): java.lang.String"])");
    std::istringstream in(line);
    try {
        parse_corpus(in);
        FAIL() << "expected RecordValidationError";
    } catch (const RecordValidationError& e) {
        EXPECT_EQ(e.record_id(), "r1");
    }
}

TEST(ParseCorpus, MalformedLineNamesLineAndField) {
    std::istringstream in(std::string(kValidLine) + "\n" + R"({"record_id":"r2","project":3})" + "\n");
    try {
        parse_corpus(in);
        FAIL() << "expected CorpusParseError";
    } catch (const CorpusParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_EQ(e.field(), "project");
    }
    std::istringstream broken("{not json\n");
    EXPECT_THROW(parse_corpus(broken), CorpusParseError);
}

TEST(ParseCorpus, RejectsBoundaryViolations) {
    auto r = make_record("r", "p", "f", {1, 2});
    r.calls_with_boundaries.insert(r.calls_with_boundaries.begin(), CallEvent::boundary_exit());
    r.calls_with_boundaries.push_back(CallEvent::boundary_enter());
    EXPECT_THROW(validate_record(r, "java."), RecordValidationError);

    auto unclosed = make_record("u", "p", "f", {1});
    unclosed.calls_with_boundaries.push_back(CallEvent::boundary_enter());
    EXPECT_THROW(validate_record(unclosed, "java."), RecordValidationError);

    auto foreign = make_record("x", "p", "f", {1});
    foreign.calls[0].signature = "org.acme.Foo.bar(): void";
    foreign.calls_with_boundaries = foreign.calls;
    EXPECT_THROW(validate_record(foreign, "java."), RecordValidationError);
    EXPECT_NO_THROW(validate_record(foreign, "org."));

    EXPECT_THROW(validate_corpus(make_corpus({make_record("d", "p", "f", {1}), make_record("d", "p", "g", {2})})),
                 RecordValidationError);
}

TEST(Dedup, KeepsFirstOfIdenticalSequences) {
    const Corpus c = make_corpus({make_record("a", "p", "f", {1, 2}), make_record("b", "p", "g", {1, 2})});
    const Corpus d = dedup(c);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d.records[0].record_id, "a");
}

TEST(Dedup, DistinctSequencesUnchanged) {
    const Corpus c = make_corpus({make_record("a", "p", "f", {1}), make_record("b", "p", "f", {2}), make_record("c", "p", "f", {1, 2})});
    EXPECT_EQ(dedup(c).records, c.records);
}

TEST(Dedup, BoundariesAreTheKey) {
    auto a = make_record("a", "p", "f", {1, 2});
    auto b = make_record("b", "p", "f", {1, 2});
    b.calls_with_boundaries.insert(b.calls_with_boundaries.begin() + 1, CallEvent::boundary_enter());
    b.calls_with_boundaries.push_back(CallEvent::boundary_exit());
    EXPECT_EQ(dedup(make_corpus({a, b})).size(), 2u);
}

TEST(Dedup, TenRecordFixtureAgainstPairwiseOracle) {
    // Three duplicate groups: {0,4}, {2,7}, {5,9}.
    const std::vector<std::vector<int>> seqs = {{1, 2, 3}, {4}, {5, 6}, {1, 2}, {1, 2, 3}, {7, 7}, {3, 2, 1}, {5, 6}, {8}, {7, 7}};
    std::vector<TraceRecord> records;
    for (std::size_t i = 0; i < seqs.size(); ++i) records.push_back(make_record("r" + std::to_string(i), "p", "f", seqs[i]));
    const Corpus c = make_corpus(records);

    // Oracle: record i survives iff no earlier j has an equal sequence.
    std::vector<std::string> expected;
    for (std::size_t i = 0; i < c.size(); ++i) {
        bool dup = false;
        for (std::size_t j = 0; j < i; ++j) dup = dup || c.records[j].calls_with_boundaries == c.records[i].calls_with_boundaries;
        if (!dup) expected.push_back(c.records[i].record_id);
    }
    ASSERT_EQ(expected.size(), 7u);

    std::vector<std::string> got;
    for (const auto& r : dedup(c).records) got.push_back(r.record_id);
    EXPECT_EQ(got, expected);
}

TEST(Dedup, IdempotentOnRandomCorpora) {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<TraceRecord> records;
        const auto n = rng.between(0, 30);
        for (int i = 0; i < n; ++i) {
            std::vector<int> seq;
            for (auto len = rng.between(0, 3); len > 0; --len) seq.push_back(static_cast<int>(rng.between(0, 2)));
            records.push_back(make_record("r" + std::to_string(i), "p", "f", seq));
        }
        const Corpus once = dedup(make_corpus(records));
        EXPECT_EQ(dedup(once).records, once.records);
        for (std::size_t i = 0; i < once.size(); ++i) {
            for (std::size_t j = i + 1; j < once.size(); ++j) {
                EXPECT_NE(once.records[i].calls_with_boundaries, once.records[j].calls_with_boundaries);
            }
        }
    }
}

TEST(CorpusStats, TwelveTracesOneMethod) {
    std::vector<TraceRecord> records;
    for (int i = 0; i < 12; ++i) records.push_back(make_record("r" + std::to_string(i), "p", "only.Fqn()", std::vector<int>(i + 1, 1)));
    const auto s = corpus_stats(make_corpus(records));
    EXPECT_EQ(s.records, 12u);
    EXPECT_EQ(s.distinct_fqns, 1u);
    EXPECT_DOUBLE_EQ(s.traces_per_fqn_mean, 12.0);
    EXPECT_EQ(s.max_sequence_length, 12u);
}

TEST(CorpusStats, SingleRecordAndEmpty) {
    EXPECT_DOUBLE_EQ(corpus_stats(make_corpus({make_record("a", "p", "f", {1})})).traces_per_fqn_mean, 1.0);
    EXPECT_THROW(corpus_stats(Corpus{}), EmptyCorpusError);
}
