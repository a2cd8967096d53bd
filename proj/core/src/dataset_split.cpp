#include "tracefind/dataset_split.hpp"

#include <unordered_map>
#include <unordered_set>

#include "tracefind/error.hpp"
#include "tracefind/rng.hpp"

namespace tracefind {

namespace {

Corpus sample(const Corpus& pool, std::size_t count, Rng& rng, bool& truncated) {
    Corpus out;
    out.namespace_prefix = pool.namespace_prefix;
    truncated = count > pool.size();
    if (truncated) {
        out.records = pool.records;
        return out;
    }
    for (auto index : rng.sample_without_replacement(pool.size(), count)) out.records.push_back(pool.records[index]);
    return out;
}

}  // namespace

SplitResult split(const Corpus& corpus, const SplitSpec& spec) {
    if (spec.candidate_projects.empty()) throw ValidationError("split: no candidate projects given");
    if (spec.with_lib_sample < 1 || spec.without_lib_sample < 1) {
        throw ValidationError("split: sample counts must be at least 1");
    }
    std::unordered_set<std::string_view> projects;
    for (const auto& r : corpus.records) projects.insert(r.project);
    for (const auto& p : spec.candidate_projects) {
        if (!projects.contains(p)) throw ValidationError("split: candidate project '" + p + "' not in corpus");
    }

    std::unordered_set<std::string_view> candidate_fqns;
    for (const auto& r : corpus.records) {
        if (spec.candidate_projects.contains(r.project)) candidate_fqns.insert(r.method_fqn);
    }

    SplitResult result;
    result.candidate_projects = spec.candidate_projects;
    result.candidates.namespace_prefix = corpus.namespace_prefix;
    result.queries.namespace_prefix = corpus.namespace_prefix;
    for (const auto& r : corpus.records) {
        (candidate_fqns.contains(r.method_fqn) ? result.candidates : result.queries).records.push_back(r);
    }
    if (result.candidates.empty()) throw ValidationError("split: candidate pool is empty");
    if (result.queries.empty()) throw ValidationError("split: query pool is empty");

    // Separate streams so changing one sample size leaves the other untouched.
    Rng with_rng(derive_seed(spec.seed, "split/with-libraries"));
    Rng without_rng(derive_seed(spec.seed, "split/without-libraries"));
    result.with_libraries = sample(result.candidates, spec.with_lib_sample, with_rng, result.with_lib_truncated);
    result.without_libraries = sample(result.queries, spec.without_lib_sample, without_rng, result.without_lib_truncated);
    return result;
}

std::vector<SplitViolation> verify_split(const SplitResult& result) {
    std::vector<SplitViolation> violations;

    std::unordered_set<std::string_view> anchored_fqns;  // FQNs seen in candidate-project records
    std::unordered_set<std::string_view> candidate_fqns;
    std::unordered_set<std::string_view> candidate_ids;
    std::unordered_set<std::string_view> query_ids;
    for (const auto& r : result.candidates.records) {
        candidate_fqns.insert(r.method_fqn);
        candidate_ids.insert(r.record_id);
        if (result.candidate_projects.contains(r.project)) anchored_fqns.insert(r.method_fqn);
    }
    for (const auto& r : result.queries.records) query_ids.insert(r.record_id);

    for (const auto& r : result.candidates.records) {
        if (!anchored_fqns.contains(r.method_fqn)) {
            violations.push_back({r.record_id, "candidate-fqn-not-in-candidate-project"});
        }
    }
    for (const auto& r : result.queries.records) {
        if (candidate_fqns.contains(r.method_fqn) || result.candidate_projects.contains(r.project)) {
            violations.push_back({r.record_id, "query-fqn-in-candidates"});
        }
        if (candidate_ids.contains(r.record_id)) violations.push_back({r.record_id, "record-in-both-sides"});
    }

    auto check_sample = [&](const Corpus& sample, const std::unordered_set<std::string_view>& pool, const char* rule) {
        std::unordered_set<std::string_view> seen;
        for (const auto& r : sample.records) {
            if (!pool.contains(r.record_id)) violations.push_back({r.record_id, rule});
            if (!seen.insert(r.record_id).second) violations.push_back({r.record_id, "sample-duplicate"});
        }
    };
    check_sample(result.with_libraries, candidate_ids, "with-lib-not-in-candidates");
    check_sample(result.without_libraries, query_ids, "without-lib-not-in-queries");
    return violations;
}

}  // namespace tracefind
