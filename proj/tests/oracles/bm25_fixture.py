#!/usr/bin/env python3
"""Hand computation of the 3-document BM25 fixture used in retrieval_test.

Okapi BM25, k1=1.2, b=0.75, idf = ln(1 + (N - df + 0.5) / (df + 0.5)),
query terms deduplicated.
"""
import math

K1, B = 1.2, 0.75
docs = {
    "d1": ["a", "b", "c", "a"],
    "d2": ["b", "d"],
    "d3": ["a", "e", "e", "f", "g"],
}
query = ["a", "e", "a"]

N = len(docs)
avgdl = sum(len(d) for d in docs.values()) / N


def idf(term):
    df = sum(1 for d in docs.values() if term in d)
    return math.log(1 + (N - df + 0.5) / (df + 0.5))


for name, doc in docs.items():
    score = 0.0
    for term in sorted(set(query)):
        tf = doc.count(term)
        if tf == 0:
            continue
        score += idf(term) * tf * (K1 + 1) / (tf + K1 * (1 - B + B * len(doc) / avgdl))
    print(f"{name} {score:.9f}")
