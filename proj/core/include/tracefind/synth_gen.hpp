#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tracefind/trace_corpus.hpp"

namespace tracefind {

/// Parameters of a synthetic (source, trace) corpus.
struct GenPlan {
    std::size_t n_methods = 200;
    double traces_per_method_mean = 12.0;
    double mutation_rate = 0.2;    // chance a method is an edited copy of an earlier one
    double library_overlap = 0.5;  // chance a method is shared library code traced in several projects
    std::uint64_t seed = 0;
    std::size_t projects = 4;

    /// Throws ValidationError for rates outside [0, 1], zero methods or
    /// projects, or a mean below 1.
    void validate() const;
};

/// Inputs that drove one recorded trace.
struct TraceInputs {
    std::string record_id;
    std::size_t n = 0;      // counted-loop bound
    std::size_t items = 0;  // length of the `items` list
    std::vector<bool> flags;  // outcome of each `if`, in source order
};

struct GeneratedMethod {
    std::string fqn;
    std::string name;
    bool library = false;
    std::vector<std::string> projects;
    std::optional<std::string> mutant_of;  // fqn of the original
    std::vector<std::string> edits;
    std::string source;
    std::vector<TraceInputs> traces;
};

/// A mutant, its original, and an unrelated method used as a control.
struct MutationPair {
    std::string mutant;
    std::string original;
    std::string unrelated;
};

struct Manifest {
    GenPlan plan;
    std::vector<GeneratedMethod> methods;
    std::vector<MutationPair> pairs;
    std::vector<std::string> signatures;  // first-occurrence order
    std::uint64_t corpus_hash = 0;

    const GeneratedMethod* find(const std::string& fqn) const;
    std::string to_json() const;
};

struct Generated {
    Corpus corpus;
    Manifest manifest;
};

/// Deterministic in `plan`. Every trace sequence (with boundaries) is unique
/// across the corpus and every record passes validate_record.
Generated generate(const GenPlan& plan);

/// The statement-to-call table that defines trace emission, rendered as
/// Markdown. docs/emission.md embeds exactly this text.
std::string emission_table_markdown();

}  // namespace tracefind
