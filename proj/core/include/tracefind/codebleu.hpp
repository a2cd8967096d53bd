#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tracefind/java_syntax.hpp"

namespace tracefind {

using TokenList = std::vector<std::string>;

/// Sentence BLEU: geometric mean of clipped n-gram precisions for
/// n = 1..min(max_n, |candidate|) times the brevity penalty. No smoothing, so
/// any zero precision gives 0. Empty candidate gives 0.
double ngram_bleu(const TokenList& candidate, const TokenList& reference, std::size_t max_n = 4);

/// Like ngram_bleu, but each candidate n-gram carries `keyword_weight` when
/// it contains a token from the keyword predicate and 1 otherwise.
double weighted_ngram_bleu(const TokenList& candidate, const TokenList& reference,
                           const std::function<bool(std::string_view)>& is_keyword = java::is_keyword,
                           double keyword_weight = 5.0, std::size_t max_n = 4);

/// Structural hash of every subtree (node kinds only, text ignored), in node
/// order.
std::vector<std::uint64_t> subtree_hashes(const java::SyntaxTree& tree);

/// Fraction of reference subtrees whose structure occurs anywhere in the
/// candidate.
double syntax_match(const java::SyntaxTree& candidate, const java::SyntaxTree& reference);

/// Def-use edges with variables renamed by first appearance, one string per
/// edge: "v0 computedFrom v1,v2", "v1 comesFrom v1", "v3 declared".
std::vector<std::string> dataflow_edges(const java::SyntaxTree& tree);

/// Multiset overlap of normalized edges over the reference edge count.
/// Returns a negative value when the reference has no edges.
double dataflow_match(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

struct CodeBleuWeights {
    double alpha = 0.25;  // n-gram
    double beta = 0.25;   // keyword-weighted n-gram
    double gamma = 0.25;  // syntax
    double delta = 0.25;  // dataflow

    /// Throws ValidationError on a negative weight or a sum off 1 by > 1e-9.
    void validate() const;

    /// "a,b,g,d"
    static CodeBleuWeights parse(std::string_view text);
};

/// Everything codebleu needs from one snippet; computing it once lets a
/// harness score the same reference against many candidates cheaply.
struct CodeAnalysis {
    TokenList tokens;
    bool parsed = false;
    std::string parse_error;
    std::vector<std::uint64_t> subtrees;        // every node
    std::vector<std::uint64_t> subtree_set;     // sorted, unique
    std::vector<std::string> dataflow;
};

CodeAnalysis analyze(std::string_view source);

struct CodeBleuResult {
    double score = 0.0;  // 0..100
    double ngram = 0.0;
    double weighted_ngram = 0.0;
    double syntax = 0.0;
    double dataflow = 0.0;
    /// Either side failed to parse; syntax and dataflow mass moved onto the
    /// two n-gram components in proportion to their weights.
    bool fallback_used = false;
    /// Reference has no def-use edges; dataflow mass spread over the rest.
    bool dataflow_excluded = false;
    CodeBleuWeights effective;
};

CodeBleuResult codebleu(const CodeAnalysis& candidate, const CodeAnalysis& reference, const CodeBleuWeights& weights = {});
CodeBleuResult codebleu(std::string_view candidate, std::string_view reference, const CodeBleuWeights& weights = {});

}  // namespace tracefind
