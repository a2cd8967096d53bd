#pragma once

#include <string>
#include <vector>

#include "tracefind/trace_corpus.hpp"

namespace tracefind::testing {

/// Record whose calls are `java.test.Api.m<i>(): void` for each i, with the
/// same events as the boundary variant (no boundaries).
inline TraceRecord make_record(std::string id, std::string project, std::string fqn, const std::vector<int>& calls) {
    TraceRecord r;
    r.record_id = std::move(id);
    r.project = std::move(project);
    r.test_case = "Test.case";
    r.method_fqn = std::move(fqn);
    for (int c : calls) r.calls.push_back(CallEvent::call("java.test.Api.m" + std::to_string(c) + "(): void"));
    r.calls_with_boundaries = r.calls;
    r.source = "void f() { }";
    return r;
}

inline Corpus make_corpus(std::vector<TraceRecord> records) {
    Corpus c;
    c.records = std::move(records);
    return c;
}

inline std::string data_path(const std::string& name) {
    return std::string(TRACEFIND_TEST_DATA_DIR) + "/" + name;
}

}  // namespace tracefind::testing
