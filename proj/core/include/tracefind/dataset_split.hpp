#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tracefind/trace_corpus.hpp"

namespace tracefind {

struct SplitSpec {
    std::set<std::string> candidate_projects;
    std::uint64_t seed = 0;
    std::size_t with_lib_sample = 500;
    std::size_t without_lib_sample = 500;
};

/// Candidates hold every record whose FQN occurs in at least one
/// candidate-project record; queries hold the rest. The two evaluation sets
/// are samples drawn without replacement from each side.
struct SplitResult {
    std::set<std::string> candidate_projects;
    Corpus candidates;
    Corpus queries;
    Corpus with_libraries;
    Corpus without_libraries;
    bool with_lib_truncated = false;     // requested sample exceeded the pool
    bool without_lib_truncated = false;
};

struct SplitViolation {
    std::string record_id;
    std::string rule;

    friend bool operator==(const SplitViolation&, const SplitViolation&) = default;
};

/// Throws ValidationError for an invalid spec and for an empty side.
SplitResult split(const Corpus& corpus, const SplitSpec& spec);

/// Empty iff all SplitResult invariants hold. Rule names:
///   candidate-fqn-not-in-candidate-project, query-fqn-in-candidates,
///   record-in-both-sides, with-lib-not-in-candidates,
///   without-lib-not-in-queries, sample-duplicate
std::vector<SplitViolation> verify_split(const SplitResult& result);

}  // namespace tracefind
