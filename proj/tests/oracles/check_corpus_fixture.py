#!/usr/bin/env python3
"""Independent validator for hand-written JSONL corpus fixtures.

Checks the record schema, that stripping [CALL]/[EXIT] from
calls_with_boundaries yields calls, that boundaries balance, and prints the
record ids in file order plus the max boundary depth of each record.
"""
import json
import sys

FIELDS = ["record_id", "project", "test_case", "method_fqn", "calls",
          "calls_with_boundaries", "source", "max_depth"]


def check(path):
    ids = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            assert list(rec.keys()) == FIELDS, (lineno, list(rec.keys()))
            stripped = [c for c in rec["calls_with_boundaries"] if c not in ("[CALL]", "[EXIT]")]
            assert stripped == rec["calls"], (lineno, "plain/boundary mismatch")
            depth = deepest = 0
            for c in rec["calls_with_boundaries"]:
                if c == "[CALL]":
                    depth += 1
                    deepest = max(deepest, depth)
                elif c == "[EXIT]":
                    depth -= 1
                    assert depth >= 0, (lineno, "negative depth")
            assert depth == 0, (lineno, "unclosed boundary")
            ids.append(rec["record_id"])
            print(rec["record_id"], "depth", deepest)
    assert len(set(ids)) == len(ids)
    return ids


if __name__ == "__main__":
    for p in sys.argv[1:]:
        check(p)
