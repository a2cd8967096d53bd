#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "tracefind/codebleu.hpp"
#include "tracefind/error.hpp"
#include "tracefind/java_syntax.hpp"

namespace tracefind {
namespace {

using java::ParseFailure;
using java::SyntaxTree;
using testing::data_path;

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TokenList split(const std::string& s) {
    TokenList out;
    std::istringstream in(s);
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

const SyntaxTree& tree_of(const java::ParseOutcome& o) {
    if (const auto* f = std::get_if<ParseFailure>(&o)) {
        ADD_FAILURE() << f->message();
        static const SyntaxTree empty{};
        return empty;
    }
    return std::get<SyntaxTree>(o);
}

// Span-nesting check written against the tree data only: every node is
// reached once, children lie inside the parent in order without overlap,
// and leaf texts agree with the token stream.
std::string check_spans(const SyntaxTree& t) {
    if (t.nodes.empty()) return "no nodes";
    std::vector<int> seen(t.nodes.size(), 0);
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        if (i >= t.nodes.size()) return "child index out of range";
        if (++seen[i] > 1) return "node reached twice: " + std::to_string(i);
        const auto& n = t.nodes[i];
        if (n.token_begin > n.token_end || n.token_end > t.tokens.size()) return "bad span at " + n.kind;
        std::size_t cursor = n.token_begin;
        for (std::size_t c : n.children) {
            const auto& ch = t.nodes[c];
            if (ch.token_begin < cursor) return "overlapping/out-of-order child " + ch.kind + " in " + n.kind;
            if (ch.token_end > n.token_end) return "child " + ch.kind + " escapes " + n.kind;
            cursor = ch.token_end;
            stack.push_back(c);
        }
        if (n.children.empty() && !n.text.empty()) {
            if (n.token_end != n.token_begin + 1 || t.tokens[n.token_begin].text != n.text) {
                return "leaf text mismatch at " + n.kind + " '" + n.text + "'";
            }
        }
    }
    if (std::count(seen.begin(), seen.end(), 0) != 0) return "unreachable node";
    if (t.nodes[0].token_begin != 0 || t.nodes[0].token_end != t.tokens.size()) return "root does not cover input";
    return {};
}

SyntaxTree parsed(std::string_view src) {
    auto outcome = java::parse_java_subset(src);
    if (const auto* f = std::get_if<ParseFailure>(&outcome)) {
        ADD_FAILURE() << f->message();
        return {};
    }
    return std::move(std::get<SyntaxTree>(outcome));
}

bool has_kind(const SyntaxTree& t, std::string_view kind) {
    return std::any_of(t.nodes.begin(), t.nodes.end(), [&](const auto& n) { return n.kind == kind; });
}

std::vector<std::filesystem::path> snippet_files() {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(data_path("java_snippets"))) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// ---- lexer ----

TEST(JavaLexer, ClassifiesTokens) {
    const auto toks = java::lex("int x = 0x1F + 2.5f; // c\n s = \"a\\\"b\" + 'c';");
    ASSERT_EQ(toks.size(), 13u);
    EXPECT_EQ(toks[0].kind, java::TokenKind::Keyword);
    EXPECT_EQ(toks[1].kind, java::TokenKind::Identifier);
    EXPECT_EQ(toks[3].kind, java::TokenKind::IntegerLiteral);
    EXPECT_EQ(toks[3].text, "0x1F");
    EXPECT_EQ(toks[5].kind, java::TokenKind::FloatLiteral);
    EXPECT_EQ(toks[9].kind, java::TokenKind::StringLiteral);
    EXPECT_EQ(toks[9].text, "\"a\\\"b\"");
    EXPECT_EQ(toks[11].kind, java::TokenKind::CharLiteral);
    EXPECT_EQ(toks[8].offset, 29u);
}

TEST(JavaLexer, MaximalMunchUnlessSplitting) {
    EXPECT_EQ(java::code_tokens("a >>>= b >> c"), (TokenList{"a", ">>>=", "b", ">>", "c"}));
    const auto split_toks = java::lex("List<List<T>>", {.split_angle_brackets = true});
    EXPECT_EQ(split_toks.back().text, ">");
    EXPECT_EQ(split_toks.size(), 7u);
}

TEST(JavaLexer, RejectsUnterminatedString) {
    try {
        java::lex("x = \"open");
        FAIL();
    } catch (const java::LexError& e) {
        EXPECT_EQ(e.offset, 4u);
    }
}

// ---- parser ----

TEST(JavaParser, LocalVariableDeclarationInsideMethod) {
    const auto outcome = java::parse_java_subset("void f() { int x = 1; }");
    const auto& t = tree_of(outcome);
    EXPECT_TRUE(has_kind(t, "MethodDeclaration"));
    EXPECT_TRUE(has_kind(t, "LocalVariableDeclaration"));
    EXPECT_EQ(check_spans(t), "");
}

TEST(JavaParser, MissingClosingBraceFailsAtEndOfInput) {
    const std::string src = "void f() {\n    int x = 1;\n";
    const auto outcome = java::parse_java_subset(src);
    const auto* f = std::get_if<ParseFailure>(&outcome);
    ASSERT_NE(f, nullptr);
    EXPECT_EQ(f->offset, src.size());
    EXPECT_EQ(f->expected, "'}'");
    EXPECT_TRUE(f->found.empty());
}

TEST(JavaParser, ExtraClosingBraceFailsAtThatBrace) {
    const std::string src = "void f() { }\n}";
    const auto outcome = java::parse_java_subset(src);
    const auto* f = std::get_if<ParseFailure>(&outcome);
    ASSERT_NE(f, nullptr);
    EXPECT_EQ(f->offset, src.rfind('}'));
    EXPECT_EQ(f->found, "}");
}

TEST(JavaParser, ReportsFailureInsideExpression) {
    const std::string src = "int f() { return a + ; }";
    const auto outcome = java::parse_java_subset(src);
    const auto* f = std::get_if<ParseFailure>(&outcome);
    ASSERT_NE(f, nullptr);
    EXPECT_EQ(f->offset, src.find(';'));
}

TEST(JavaParser, ReassemblesShiftOperatorsAfterSplitting) {
    const auto outcome = java::parse_java_subset("int f(int a) { a >>= 2; return a >>> 1 > 0 ? a >> 1 : a; }");
    const auto& t = tree_of(outcome);
    std::vector<std::string> ops;
    for (const auto& n : t.nodes) {
        if (n.kind == "BinaryExpression" || n.kind == "AssignmentExpression") ops.push_back(n.text);
    }
    std::sort(ops.begin(), ops.end());
    EXPECT_EQ(ops, (std::vector<std::string>{">", ">>", ">>=", ">>>"}));
}

TEST(JavaParser, NestedGenericsClose) {
    const auto outcome = java::parse_java_subset("Map<String, List<Integer>> m = new HashMap<>();");
    const auto& t = tree_of(outcome);
    EXPECT_TRUE(has_kind(t, "FieldDeclaration"));
    EXPECT_EQ(check_spans(t), "");
}

TEST(JavaParser, SnippetCorpusParsesWithProperNesting) {
    const auto files = snippet_files();
    ASSERT_EQ(files.size(), 20u);
    std::size_t ok = 0;
    for (const auto& f : files) {
        const auto outcome = java::parse_java_subset(read_file(f));
        if (const auto* fail = std::get_if<ParseFailure>(&outcome)) {
            ADD_FAILURE() << f.filename() << ": " << fail->message();
            continue;
        }
        const auto problem = check_spans(std::get<SyntaxTree>(outcome));
        EXPECT_EQ(problem, "") << f.filename();
        if (problem.empty()) ++ok;
    }
    RecordProperty("parsed", static_cast<int>(ok));
    EXPECT_GE(ok, 18u);
}

// ---- BLEU ----

TEST(NgramBleu, IdenticalAndDisjoint) {
    const TokenList a = split("for ( int i = 0 ; i < n ; i ++ )");
    EXPECT_DOUBLE_EQ(ngram_bleu(a, a), 1.0);
    EXPECT_DOUBLE_EQ(ngram_bleu(split("a b c"), split("x y z")), 0.0);
    EXPECT_DOUBLE_EQ(ngram_bleu({}, a), 0.0);
}

TEST(NgramBleu, MatchesHandComputation) {
    // Precisions 4/5, 3/4, 2/3, 1/2; product 1/5; no brevity penalty.
    // Value from tests/oracles/bleu_reference.py.
    EXPECT_NEAR(ngram_bleu(split("a b c d e"), split("a b c d f")), 0.668740305, 1e-9);
}

TEST(NgramBleu, BrevityPenaltyForShortCandidates) {
    // All precisions 1; only the brevity penalty applies.
    const double v = ngram_bleu(split("a b c d"), split("a b c d e f g h"));
    EXPECT_NEAR(v, std::exp(1.0 - 8.0 / 4.0), 1e-12);
}

TEST(NgramBleu, ClipsRepeatedTokens) {
    // Unigram precision 2/7 after clipping "the" to its reference count.
    const double v = ngram_bleu(split("the the the the the the the"), split("the cat the mat"), 1);
    EXPECT_NEAR(v, 2.0 / 7.0, 1e-12);
}

TEST(WeightedBleu, IdenticalIsOne) {
    const TokenList a = split("if ( x ) return y ;");
    EXPECT_DOUBLE_EQ(weighted_ngram_bleu(a, a), 1.0);
    EXPECT_DOUBLE_EQ(weighted_ngram_bleu({}, a), 0.0);
}

TEST(WeightedBleu, KeywordMismatchCostsMoreThanIdentifierMismatch) {
    const TokenList keyword_diff_cand = split("throw x + y ;");
    const TokenList keyword_diff_ref = split("return x + y ;");
    const TokenList ident_diff_cand = split("bar x + y ;");
    const TokenList ident_diff_ref = split("foo x + y ;");
    const double keyword_case = weighted_ngram_bleu(keyword_diff_cand, keyword_diff_ref);
    const double ident_case = weighted_ngram_bleu(ident_diff_cand, ident_diff_ref);
    EXPECT_LT(keyword_case, ident_case);
    // Plain BLEU cannot tell them apart.
    EXPECT_DOUBLE_EQ(ngram_bleu(keyword_diff_cand, keyword_diff_ref), ngram_bleu(ident_diff_cand, ident_diff_ref));
}

TEST(WeightedBleu, TwoLineFixtureMatchesReferenceScript) {
    const std::string cand = "if (x > 0) { return x; }\nreturn 0;";
    const std::string ref = "if (y > 0) { return y; }\nreturn -1;";
    const auto ct = java::code_tokens(cand);
    const auto rt = java::code_tokens(ref);
    // Same tokenization the script hard-codes.
    ASSERT_EQ(ct, split("if ( x > 0 ) { return x ; } return 0 ;"));
    ASSERT_EQ(rt, split("if ( y > 0 ) { return y ; } return - 1 ;"));
    EXPECT_NEAR(ngram_bleu(ct, rt), 0.372574231, 1e-9);
    EXPECT_NEAR(weighted_ngram_bleu(ct, rt), 0.355777530, 1e-9);
}

// ---- syntax match ----

TEST(SyntaxMatch, IdenticalTreesMatchFully) {
    const auto t = parsed("int f(int a) { return a * 2; }");
    EXPECT_DOUBLE_EQ(syntax_match(t, t), 1.0);
}

TEST(SyntaxMatch, HandEnumeratedPair) {
    // Reference subtrees: CompilationUnit, MethodDeclaration, Type,
    // PrimitiveType, Identifier, FormalParameters, Block, ReturnStatement,
    // Name. The candidate returns a binary expression instead of a name, so
    // only the five subtrees below ReturnStatement level survive:
    // PrimitiveType, Type, Identifier, FormalParameters, Name.
    const auto ref = parsed("int f() { return a; }");
    const auto cand = parsed("int f() { return a + b; }");
    ASSERT_EQ(ref.size(), 9u);
    EXPECT_DOUBLE_EQ(syntax_match(cand, ref), 5.0 / 9.0);
}

TEST(SyntaxMatch, DisjointKindsScoreZero) {
    java::SyntaxTree a;
    a.nodes = {{"A", {1}, 0, 0, {}}, {"B", {}, 0, 0, {}}};
    java::SyntaxTree b;
    b.nodes = {{"C", {1}, 0, 0, {}}, {"D", {}, 0, 0, {}}};
    EXPECT_DOUBLE_EQ(syntax_match(a, b), 0.0);
}

TEST(SyntaxMatch, IgnoresIdentifierText) {
    const auto a = parsed("int f(int a) { return a; }");
    const auto b = parsed("int g(int zz) { return zz; }");
    EXPECT_DOUBLE_EQ(syntax_match(a, b), 1.0);
}

// ---- dataflow ----

TEST(Dataflow, NormalizedDefUseEdges) {
    const auto t = parsed("int f(int a) { int b = a + 1; b += a; return b; }");
    EXPECT_EQ(dataflow_edges(t), (std::vector<std::string>{
                                     "v0 declared",
                                     "v0 comesFrom v0",
                                     "v1 computedFrom v0",
                                     "v0 comesFrom v0",
                                     "v1 computedFrom v0,v1",
                                     "v1 comesFrom v1",
                                 }));
}

TEST(Dataflow, RenamingMakesMatchNameInsensitive) {
    const auto a = parsed("int f(int a) { int b = a; return b; }");
    const auto b = parsed("int f(int p) { int q = p; return q; }");
    EXPECT_DOUBLE_EQ(dataflow_match(dataflow_edges(a), dataflow_edges(b)), 1.0);
}

TEST(Dataflow, MultisetMatchingConsumesEdges) {
    EXPECT_DOUBLE_EQ(dataflow_match({"v0 declared"}, {"v0 declared", "v0 declared"}), 0.5);
    EXPECT_LT(dataflow_match({"x"}, {}), 0.0);
}

// ---- composite ----

TEST(CodeBleuWeightsTest, Validation) {
    EXPECT_NO_THROW(CodeBleuWeights{}.validate());
    EXPECT_THROW((CodeBleuWeights{0.5, 0.5, 0.5, -0.5}.validate()), ValidationError);
    EXPECT_THROW((CodeBleuWeights{0.3, 0.3, 0.3, 0.3}.validate()), ValidationError);
    const auto w = CodeBleuWeights::parse("0.1,0.2,0.3,0.4");
    EXPECT_DOUBLE_EQ(w.gamma, 0.3);
    EXPECT_THROW(CodeBleuWeights::parse("0.5,0.5"), ValidationError);
    EXPECT_THROW(CodeBleuWeights::parse("a,b,c,d"), ValidationError);
}

TEST(CodeBleu, SelfSimilarityIsHundredOnSnippetCorpus) {
    for (const auto& f : snippet_files()) {
        const auto src = read_file(f);
        const auto r = codebleu(src, src);
        EXPECT_NEAR(r.score, 100.0, 1e-9) << f.filename();
        EXPECT_FALSE(r.fallback_used) << f.filename();
    }
}

TEST(CodeBleu, DisjointFixtureScoresBelowTen) {
    const auto r = codebleu(read_file(data_path("disjoint_candidate.java")), read_file(data_path("disjoint_reference.java")));
    RecordProperty("score", std::to_string(r.score));
    EXPECT_LT(r.score, 10.0);
    EXPECT_FALSE(r.fallback_used);
}

TEST(CodeBleu, AlphaOneIsPlainBleu) {
    const std::string cand = "int f(int a) { return a + 1; }";
    const std::string ref = "int g(int b) { int c = b; return c + 1; }";
    const double bleu = ngram_bleu(java::code_tokens(cand), java::code_tokens(ref));
    EXPECT_NEAR(codebleu(cand, ref, {1.0, 0.0, 0.0, 0.0}).score, 100.0 * bleu, 1e-9);
    // Approaches 100*BLEU as alpha -> 1.
    double prev_gap = 1e300;
    for (double alpha : {0.25, 0.5, 0.9, 0.99, 0.999999}) {
        const double rest = (1.0 - alpha) / 3.0;
        const double gap = std::abs(codebleu(cand, ref, {alpha, rest, rest, rest}).score - 100.0 * bleu);
        EXPECT_LE(gap, prev_gap + 1e-12);
        prev_gap = gap;
    }
    EXPECT_LT(prev_gap, 1e-3);
}

TEST(CodeBleu, ParseFailureRenormalizesOntoLexicalComponents) {
    const std::string broken = "int f( { return 1;";
    const std::string ref = "int f() { return 1; }";
    const auto r = codebleu(broken, ref, {0.1, 0.3, 0.3, 0.3});
    EXPECT_TRUE(r.fallback_used);
    EXPECT_DOUBLE_EQ(r.effective.alpha, 0.25);
    EXPECT_DOUBLE_EQ(r.effective.beta, 0.75);
    EXPECT_NEAR(r.score, 100.0 * (0.25 * r.ngram + 0.75 * r.weighted_ngram), 1e-9);
}

TEST(CodeBleu, ReferenceWithoutDataflowExcludesComponent) {
    const auto r = codebleu("void f() { g(); }", "void f() { h(); }");
    EXPECT_TRUE(r.dataflow_excluded);
    EXPECT_DOUBLE_EQ(r.effective.delta, 0.0);
    EXPECT_NEAR(r.effective.alpha + r.effective.beta + r.effective.gamma, 1.0, 1e-12);
    EXPECT_GE(r.score, 0.0);
    EXPECT_LE(r.score, 100.0);
}

TEST(CodeBleu, CachedAnalysisMatchesDirectCall) {
    const std::string a = read_file(snippet_files()[1]);
    const std::string b = read_file(snippet_files()[2]);
    const auto direct = codebleu(a, b);
    const auto cached = codebleu(analyze(a), analyze(b));
    EXPECT_DOUBLE_EQ(direct.score, cached.score);
}

}  // namespace
}  // namespace tracefind
