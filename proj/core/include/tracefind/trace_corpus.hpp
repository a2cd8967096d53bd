#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tracefind {

enum class Direction { Enter, Exit };

/// One event of an application trace. Core-library calls render as
/// `-> <signature>` (enter) or `<- <signature>` (exit); calls into code outside
/// the core namespace are boundary events and render as `[CALL]` / `[EXIT]`
/// with no identifier attached.
struct CallEvent {
    Direction direction = Direction::Enter;
    std::string signature;
    bool is_boundary = false;

    static CallEvent call(std::string signature) { return {Direction::Enter, std::move(signature), false}; }
    static CallEvent boundary_enter() { return {Direction::Enter, {}, true}; }
    static CallEvent boundary_exit() { return {Direction::Exit, {}, true}; }

    /// Parses one line of the JSONL `calls` / `calls_with_boundaries` arrays.
    /// Throws std::invalid_argument on unrecognized lines.
    static CallEvent from_line(std::string_view line);

    /// Exact inverse of from_line.
    std::string to_line() const;

    friend bool operator==(const CallEvent&, const CallEvent&) = default;
};

inline constexpr std::string_view kCallToken = "[CALL]";
inline constexpr std::string_view kExitToken = "[EXIT]";

struct TraceRecord {
    std::string record_id;
    std::string project;
    std::string test_case;
    std::string method_fqn;
    std::vector<CallEvent> calls;
    std::vector<CallEvent> calls_with_boundaries;
    std::string source;
    std::uint64_t max_depth = 0;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct Corpus {
    std::vector<TraceRecord> records;
    std::string namespace_prefix = "java.";

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
};

struct CorpusStats {
    std::size_t records = 0;
    std::size_t distinct_fqns = 0;
    double traces_per_fqn_mean = 0.0;
    std::size_t max_sequence_length = 0;
};

/// Checks every TraceRecord invariant for one record; throws
/// RecordValidationError naming the record on the first violation.
void validate_record(const TraceRecord& record, std::string_view namespace_prefix);

/// Validates every record plus corpus-wide record_id uniqueness.
void validate_corpus(const Corpus& corpus);

/// Reads a JSONL corpus. Malformed lines raise CorpusParseError (line and
/// field), invariant violations raise RecordValidationError.
Corpus parse_corpus(const std::filesystem::path& path, std::string namespace_prefix = "java.");
Corpus parse_corpus(std::istream& in, std::string namespace_prefix = "java.");

TraceRecord parse_record_line(std::string_view line, std::size_t line_number);

/// Canonical single-line JSON for a record; fields in schema order.
std::string serialize_record(const TraceRecord& record);
void write_corpus(std::ostream& out, const Corpus& corpus);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

/// Keeps the first record of each distinct calls_with_boundaries sequence,
/// in input order.
Corpus dedup(const Corpus& corpus);

/// Throws EmptyCorpusError on an empty corpus.
CorpusStats corpus_stats(const Corpus& corpus);

/// FNV-1a over the canonical serialization; used for provenance logging.
std::uint64_t corpus_hash(const Corpus& corpus);

/// Returns the deepest boundary nesting, or -1 if the boundaries are
/// unbalanced (an Exit without a matching Enter, or unclosed Enters).
long boundary_depth(const std::vector<CallEvent>& events);

}  // namespace tracefind
