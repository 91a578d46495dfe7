from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

import qcmap.properties as properties
from qcmap.errors import InputError
from qcmap.properties import SUITES, run_suite, run_suites, trial_rank, trial_resolution


@pytest.mark.parametrize("name", ["rank", "exact_bc", "reconstruct", "similarity", "resolution"])
def test_suites_pass_on_a_few_trials(name):
    verdict = run_suite(name, seed=0, trials=4)
    assert verdict["passed"], verdict["failures"]
    assert verdict["max_error"] <= SUITES[name].tolerance


def test_adjoint_suite():
    verdict = run_suite("adjoint", seed=1, trials=2)
    assert verdict["passed"], verdict["failures"]


def test_broken_row_scaling_fails_exact_bc():
    verdict = run_suite("exact_bc", seed=0, trials=3, row_scaling="none")
    assert not verdict["passed"]
    assert verdict["failure_count"] == 3
    assert verdict["failures"][0]["seed"] == 0


def test_rank_trial_notices_order_dependent_solutions(monkeypatch):
    solve = properties.solve

    def drifting_solve(system, factorization=None, ordering=None):
        result = solve(system, factorization, ordering)
        return replace(result, U=result.U + 1e-6) if ordering is not None else result

    rng = np.random.default_rng(3)
    assert trial_rank(np.random.default_rng(3), "sqrt_area") == 0.0
    monkeypatch.setattr(properties, "solve", drifting_solve)
    assert trial_rank(rng, "sqrt_area") > 0.0


def _edges(f):
    return [frozenset(e) for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))]


def test_interior_faces_have_no_boundary_edge(jittered_disk):
    counts = Counter(e for f in jittered_disk.faces.tolist() for e in _edges(f))
    expected = [i for i, f in enumerate(jittered_disk.faces.tolist()) if all(counts[e] == 2 for e in _edges(f))]
    assert properties._interior_faces(jittered_disk).tolist() == expected


def test_resolution_trial_splits_interior_faces(monkeypatch):
    split = properties.split_face
    chosen = []

    def recording_split(mesh, face, alpha):
        chosen.append((face, set(properties._interior_faces(mesh).tolist())))
        return split(mesh, face, alpha)

    monkeypatch.setattr(properties, "split_face", recording_split)
    for trial in range(5):
        assert trial_resolution(np.random.default_rng([0, 4, trial]), "sqrt_area") <= SUITES["resolution"].tolerance
    assert all(face in interior for face, interior in chosen)


def test_verdicts_are_deterministic():
    assert run_suites(["similarity", "rank"], seed=5, trials=2) == run_suites(["similarity", "rank"], seed=5, trials=2)


def test_unknown_suite():
    with pytest.raises(InputError):
        run_suite("convexity")


@pytest.mark.slow
def test_all_suites_hundred_trials():
    verdict = run_suites(None, seed=0, trials=100)
    assert verdict["passed"], [v for v in verdict["suites"] if not v["passed"]]
