#!/usr/bin/env python3
"""Smoke test for the conform_py extension module.

Builds nothing itself: run `cargo build -p conform-py` (or --release)
first. The script locates the compiled cdylib, symlinks it under an
importable name, and exercises the main types end to end on the
three-pair transitivity instance.
"""

import json
import os
import sys
import tempfile


def locate_extension():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidates = [
        os.path.join(root, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libconform_py.so", "conform_py.so", "libconform_py.dylib")
    ]
    for path in candidates:
        if os.path.exists(path):
            return path
    sys.exit("conform_py cdylib not found; run `cargo build -p conform-py` first")


def import_extension():
    lib = locate_extension()
    tmp = tempfile.mkdtemp(prefix="conform_py_")
    link = os.path.join(tmp, "conform_py.so")
    os.symlink(lib, link)
    sys.path.insert(0, tmp)
    import conform_py

    return conform_py


def pair(locus):
    return {"task_instance": "doc0", "subproblem": "coref_pair", "locus": locus}


def transitivity_spec():
    """Three mention pairs under transitivity: coref weights 0.9/0.9/0.2."""
    pairs = [("m1-m2", 0.9), ("m2-m3", 0.9), ("m1-m3", 0.2)]
    return {
        "decisions": [{"id": pair(locus), "num_labels": 2} for locus, _ in pairs],
        "scores": [
            {"decision": pair(locus), "strategy": "tf", "scores": [w, round(1.0 - w, 3)]}
            for locus, w in pairs
        ],
        "constraints": [
            {
                "type": "transitivity",
                "pair_ab": pair("m1-m2"),
                "pair_bc": pair("m2-m3"),
                "pair_ac": pair("m1-m3"),
                "coref_label": 0,
            }
        ],
        "gold": None,
    }


def main():
    conform_py = import_extension()
    print(f"conform_py {conform_py.__version__} loaded")

    problem = conform_py.Problem.build(json.dumps(transitivity_spec()))
    assert problem.num_decisions == 3, problem
    assert problem.num_outcomes == 6, problem

    # Canonical order sorts loci lexicographically: m1-m2, m1-m3, m2-m3.
    keys = problem.decision_keys()
    assert keys == [
        "doc0/coref_pair/m1-m2",
        "doc0/coref_pair/m1-m3",
        "doc0/coref_pair/m2-m3",
    ], keys

    solved = problem.solve()
    assert solved.proven_optimal
    assert abs(solved.objective - 2.0) < 1e-9, solved
    assert solved.labels == [0, 0, 0], solved

    oracle = problem.brute_force()
    assert oracle.objective == solved.objective
    assert oracle.labels == solved.labels

    # The unconstrained argmax keeps the strong pairs and flips the weak
    # one, violating transitivity exactly once.
    baseline = problem.local_argmax()
    assert baseline.labels == [0, 1, 0], baseline
    assert problem.count_violations(baseline.labels, "transitivity") == 1
    assert problem.count_violations(solved.labels, "transitivity") == 0
    assert not problem.is_feasible(baseline.labels)
    assert problem.is_feasible(solved.labels)
    assert abs(problem.objective([0, 1, 0]) - 2.6) < 1e-9

    # JSON round trip.
    clone = conform_py.Problem.from_json(problem.to_json())
    assert clone.to_json() == problem.to_json()
    resolved = clone.solve()
    assert resolved.labels == solved.labels

    # LP export mentions the binary section.
    assert "Binaries" in problem.to_lp()

    # Calibrators and parsers.
    identity = conform_py.Calibrator.identity("tf", "coref_pair")
    assert identity.calibrate([0.7, 0.3]) == [0.7, 0.3]
    assert conform_py.parse_confidence("Confidence: 85%") == 85.0
    assert conform_py.parse_confidence("no idea") is None
    assert conform_py.match_label("Coreferent.", ["coreferent", "distinct"]) == 0

    print("smoke test passed:")
    print(f"  constrained solve: labels={solved.labels} objective={solved.objective:.3f}")
    print(f"  baseline argmax:   labels={baseline.labels} "
          f"transitivity violations={problem.count_violations(baseline.labels, 'transitivity')}")


if __name__ == "__main__":
    main()
