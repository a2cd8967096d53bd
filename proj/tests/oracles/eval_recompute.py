#!/usr/bin/env python3
"""Recomputes every avg-max CodeBLEU@k of an evaluation report from its per-query hit log."""
import json
import sys


def main(path, expected_queries=None):
    with open(path, encoding="utf-8") as f:
        report = json.load(f)
    ks = report["config"]["k_values"]
    exclude_self = report["config"]["exclude_self"]
    problems = []
    for system in report["systems"]:
        queries = system["queries"]
        if len(queries) != report["query_count"]:
            problems.append("%s: %d query logs for %d queries" % (system["name"], len(queries), report["query_count"]))
        sums = [0.0] * len(ks)
        for q in queries:
            scores = [h["codebleu"] for h in q["hits"]]
            if len(scores) > ks[-1]:
                problems.append("%s/%s: %d hits beyond depth %d" % (system["name"], q["query_id"], len(scores), ks[-1]))
            if exclude_self and any(h["record_id"] == q["query_id"] for h in q["hits"]):
                problems.append("%s/%s: retrieved itself" % (system["name"], q["query_id"]))
            for i, k in enumerate(ks):
                best = max(scores[:k], default=0.0)
                if abs(best - q["max_at_k"][i]) > 1e-9:
                    problems.append("%s/%s@%d: logged %r, recomputed %r" % (system["name"], q["query_id"], k,
                                                                           q["max_at_k"][i], best))
                sums[i] += best
        for i, k in enumerate(ks):
            avg = sums[i] / len(queries)
            if abs(avg - system["avg_max"][i]) > 1e-9:
                problems.append("%s@%d: reported %r, recomputed %r" % (system["name"], k, system["avg_max"][i], avg))
            if i > 0 and system["avg_max"][i] < system["avg_max"][i - 1]:
                problems.append("%s: avg-max decreases from k=%d to k=%d" % (system["name"], ks[i - 1], k))
        print("%s: %s" % (system["name"], " ".join("top@%d=%.6f" % (k, s / len(queries)) for k, s in zip(ks, sums))))
    if expected_queries is not None and report["query_count"] != expected_queries:
        problems.append("expected %d queries, report has %d" % (expected_queries, report["query_count"]))
    for p in problems:
        print("FAIL", p)
    return 1 if problems else 0


if __name__ == "__main__":
    if len(sys.argv) not in (2, 3):
        print("usage: eval_recompute.py REPORT.json [EXPECTED_QUERY_COUNT]", file=sys.stderr)
        sys.exit(2)
    sys.exit(main(sys.argv[1], int(sys.argv[2]) if len(sys.argv) == 3 else None))
