#include "tracefind/trace_corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "tracefind/error.hpp"
#include "tracefind/hash.hpp"

namespace tracefind {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::string_view kEnterPrefix = "-> ";
constexpr std::string_view kExitPrefix = "<- ";

const ojson& require(const ojson& obj, const char* field, std::size_t line) {
    auto it = obj.find(field);
    if (it == obj.end()) throw CorpusParseError(line, field, "missing");
    return *it;
}

std::string require_string(const ojson& obj, const char* field, std::size_t line) {
    const auto& v = require(obj, field, line);
    if (!v.is_string()) throw CorpusParseError(line, field, "expected string");
    return v.get<std::string>();
}

std::vector<CallEvent> require_events(const ojson& obj, const char* field, std::size_t line) {
    const auto& v = require(obj, field, line);
    if (!v.is_array()) throw CorpusParseError(line, field, "expected array of strings");
    std::vector<CallEvent> events;
    events.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string()) {
            throw CorpusParseError(line, field, "element " + std::to_string(i) + " is not a string");
        }
        try {
            events.push_back(CallEvent::from_line(v[i].get_ref<const std::string&>()));
        } catch (const std::invalid_argument& e) {
            throw CorpusParseError(line, field, "element " + std::to_string(i) + ": " + e.what());
        }
    }
    return events;
}

ojson events_to_json(const std::vector<CallEvent>& events) {
    ojson arr = ojson::array();
    for (const auto& e : events) arr.push_back(e.to_line());
    return arr;
}

}  // namespace

CallEvent CallEvent::from_line(std::string_view line) {
    if (line == kCallToken) return boundary_enter();
    if (line == kExitToken) return boundary_exit();
    Direction dir;
    if (line.starts_with(kEnterPrefix)) {
        dir = Direction::Enter;
    } else if (line.starts_with(kExitPrefix)) {
        dir = Direction::Exit;
    } else {
        throw std::invalid_argument("unrecognized call line '" + std::string(line) + "'");
    }
    auto sig = line.substr(kEnterPrefix.size());
    if (sig.empty()) throw std::invalid_argument("empty signature");
    return {dir, std::string(sig), false};
}

std::string CallEvent::to_line() const {
    if (is_boundary) return std::string(direction == Direction::Enter ? kCallToken : kExitToken);
    std::string out(direction == Direction::Enter ? kEnterPrefix : kExitPrefix);
    out += signature;
    return out;
}

long boundary_depth(const std::vector<CallEvent>& events) {
    long depth = 0;
    long deepest = 0;
    for (const auto& e : events) {
        if (!e.is_boundary) continue;
        if (e.direction == Direction::Enter) {
            deepest = std::max(deepest, ++depth);
        } else if (--depth < 0) {
            return -1;
        }
    }
    return depth == 0 ? deepest : -1;
}

void validate_record(const TraceRecord& r, std::string_view namespace_prefix) {
    if (r.record_id.empty()) throw RecordValidationError(r.record_id, "empty record_id");
    auto check_event = [&](const CallEvent& e, const char* where) {
        if (e.is_boundary) {
            if (!e.signature.empty()) {
                throw RecordValidationError(r.record_id, std::string(where) + ": boundary event carries a signature");
            }
            return;
        }
        if (e.signature.empty()) {
            throw RecordValidationError(r.record_id, std::string(where) + ": call event without signature");
        }
        if (!e.signature.starts_with(namespace_prefix)) {
            throw RecordValidationError(r.record_id, std::string(where) + ": signature '" + e.signature +
                                                         "' outside namespace '" + std::string(namespace_prefix) + "'");
        }
    };
    for (const auto& e : r.calls) {
        if (e.is_boundary) throw RecordValidationError(r.record_id, "calls: contains a boundary event");
        check_event(e, "calls");
    }
    std::size_t plain_index = 0;
    for (const auto& e : r.calls_with_boundaries) {
        check_event(e, "calls_with_boundaries");
        if (e.is_boundary) continue;
        if (plain_index >= r.calls.size() || !(r.calls[plain_index] == e)) {
            throw RecordValidationError(r.record_id, "calls_with_boundaries without boundaries differs from calls at position " +
                                                         std::to_string(plain_index));
        }
        ++plain_index;
    }
    if (plain_index != r.calls.size()) {
        throw RecordValidationError(r.record_id, "calls_with_boundaries without boundaries is shorter than calls");
    }
    if (boundary_depth(r.calls_with_boundaries) < 0) {
        throw RecordValidationError(r.record_id, "unbalanced call boundaries");
    }
}

void validate_corpus(const Corpus& corpus) {
    std::unordered_set<std::string_view> ids;
    for (const auto& r : corpus.records) {
        validate_record(r, corpus.namespace_prefix);
        if (!ids.insert(r.record_id).second) throw RecordValidationError(r.record_id, "duplicate record_id");
    }
}

TraceRecord parse_record_line(std::string_view line, std::size_t line_number) {
    ojson obj;
    try {
        obj = ojson::parse(line);
    } catch (const ojson::parse_error& e) {
        throw CorpusParseError(line_number, "<line>", std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw CorpusParseError(line_number, "<line>", "expected a JSON object");

    TraceRecord r;
    r.record_id = require_string(obj, "record_id", line_number);
    r.project = require_string(obj, "project", line_number);
    r.test_case = require_string(obj, "test_case", line_number);
    r.method_fqn = require_string(obj, "method_fqn", line_number);
    r.calls = require_events(obj, "calls", line_number);
    r.calls_with_boundaries = require_events(obj, "calls_with_boundaries", line_number);
    r.source = require_string(obj, "source", line_number);
    const auto& depth = require(obj, "max_depth", line_number);
    if (!depth.is_number_unsigned() && !(depth.is_number_integer() && depth.get<long long>() >= 0)) {
        throw CorpusParseError(line_number, "max_depth", "expected nonnegative integer");
    }
    r.max_depth = depth.get<std::uint64_t>();
    return r;
}

Corpus parse_corpus(std::istream& in, std::string namespace_prefix) {
    Corpus corpus;
    corpus.namespace_prefix = std::move(namespace_prefix);
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        corpus.records.push_back(parse_record_line(line, line_number));
    }
    validate_corpus(corpus);
    return corpus;
}

Corpus parse_corpus(const std::filesystem::path& path, std::string namespace_prefix) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open corpus file " + path.string());
    return parse_corpus(in, std::move(namespace_prefix));
}

std::string serialize_record(const TraceRecord& r) {
    ojson obj;
    obj["record_id"] = r.record_id;
    obj["project"] = r.project;
    obj["test_case"] = r.test_case;
    obj["method_fqn"] = r.method_fqn;
    obj["calls"] = events_to_json(r.calls);
    obj["calls_with_boundaries"] = events_to_json(r.calls_with_boundaries);
    obj["source"] = r.source;
    obj["max_depth"] = r.max_depth;
    return obj.dump();
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
    for (const auto& r : corpus.records) out << serialize_record(r) << '\n';
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write corpus file " + path.string());
    write_corpus(out, corpus);
}

namespace {

struct SequenceHash {
    std::size_t operator()(const std::vector<CallEvent>* seq) const noexcept {
        std::uint64_t h = kFnvOffset;
        for (const auto& e : *seq) {
            h = fnv1a64(e.to_line(), h);
            h = fnv1a64("\n", h);
        }
        return h;
    }
};

struct SequenceEq {
    bool operator()(const std::vector<CallEvent>* a, const std::vector<CallEvent>* b) const noexcept { return *a == *b; }
};

}  // namespace

Corpus dedup(const Corpus& corpus) {
    Corpus out;
    out.namespace_prefix = corpus.namespace_prefix;
    std::unordered_set<const std::vector<CallEvent>*, SequenceHash, SequenceEq> seen;
    for (const auto& r : corpus.records) {
        if (seen.insert(&r.calls_with_boundaries).second) out.records.push_back(r);
    }
    return out;
}

CorpusStats corpus_stats(const Corpus& corpus) {
    if (corpus.empty()) throw EmptyCorpusError("corpus is empty");
    CorpusStats stats;
    std::unordered_set<std::string_view> fqns;
    for (const auto& r : corpus.records) {
        fqns.insert(r.method_fqn);
        stats.max_sequence_length = std::max(stats.max_sequence_length, r.calls_with_boundaries.size());
    }
    stats.records = corpus.size();
    stats.distinct_fqns = fqns.size();
    stats.traces_per_fqn_mean = static_cast<double>(stats.records) / static_cast<double>(stats.distinct_fqns);
    return stats;
}

std::uint64_t corpus_hash(const Corpus& corpus) {
    std::uint64_t h = kFnvOffset;
    for (const auto& r : corpus.records) {
        h = fnv1a64(serialize_record(r), h);
        h = fnv1a64("\n", h);
    }
    return h;
}

}  // namespace tracefind
