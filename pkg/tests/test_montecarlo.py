from __future__ import annotations

import functools

import numpy as np
import pytest

from ilaclab.lattice import BoxSpec, PotentialDistribution
from ilaclab.montecarlo import (
    MergeError,
    PartialResult,
    RealizationFailure,
    fsum_mean,
    merge_results,
    realize,
    run_tasks,
)
from ilaclab.spectral import dos_estimate, merge_measures

BOX = BoxSpec(1, 20)
DIST = PotentialDistribution.uniform(0, 1)


def _dos(index):
    return dos_estimate(realize(BOX, DIST, 5, index, vectors=False).plus, BOX)


def _square(x):
    return x * x


def test_realize_is_deterministic():
    a, b = realize(BOX, DIST, 1, 3), realize(BOX, DIST, 1, 3)
    assert a.plus.eigenvalues.tobytes() == b.plus.eigenvalues.tobytes()
    assert a.minus.eigenvectors.tobytes() == b.minus.eigenvectors.tobytes()


def test_realize_failure_carries_index(monkeypatch):
    from ilaclab import montecarlo
    from ilaclab.eigensolver import ConvergenceError

    def boom(*args, **kwargs):
        raise ConvergenceError(4, 50)

    monkeypatch.setattr(montecarlo, "eig_symmetric", boom)
    with pytest.raises(RealizationFailure) as info:
        realize(BOX, DIST, 0, 17)
    assert info.value.index == 17


def test_run_tasks_worker_independent():
    serial = run_tasks(_square, range(10), 1)
    parallel = run_tasks(_square, range(10), 3)
    assert serial == parallel == {i: i * i for i in range(10)}


def test_single_partial_is_identity():
    p = PartialResult("d", {2: "b", 0: "a"})
    merged = merge_results([p])
    assert merged.ordered() == ["a", "b"] and merged.config_digest == "d"


def test_partials_are_order_independent():
    results = {i: _dos(i) for i in range(6)}
    p1 = PartialResult("d", {i: results[i] for i in (0, 1, 2)})
    p2 = PartialResult("d", {i: results[i] for i in (3, 4, 5)})
    a = merge_measures(merge_results([p1, p2]).ordered())
    b = merge_measures(merge_results([p2, p1]).ordered())
    for lo, hi in [(-3, -1), (-1, 0.5), (0.5, 4)]:
        assert abs(a.mass(lo, hi) - b.mass(lo, hi)) <= 1e-12
    assert merge_results([p1, p2]).count == p1.count + p2.count


def test_merge_associativity():
    results = {i: _dos(i) for i in range(6)}
    parts = [PartialResult("d", {i: results[i]}) for i in range(6)]
    left = merge_results([merge_results(parts[:3]), merge_results(parts[3:])])
    flat = merge_results(parts[::-1])
    assert left.ordered() == flat.ordered()


def test_merge_errors():
    with pytest.raises(MergeError):
        merge_results([PartialResult("a", {0: 1}), PartialResult("b", {1: 1})])
    with pytest.raises(MergeError):
        merge_results([PartialResult("a", {0: 1}), PartialResult("a", {0: 2})])
    with pytest.raises(MergeError):
        merge_results([])


def test_fsum_mean_order_independent():
    rng = np.random.default_rng(0)
    values = [rng.normal(size=(2, 3)) * 10.0 ** rng.integers(-8, 8) for _ in range(50)]
    a = fsum_mean(values)
    b = fsum_mean(values[::-1])
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        fsum_mean([])


def test_partial_task_pickles_for_workers():
    task = functools.partial(_square)
    assert run_tasks(task, [3, 1], 2) == {3: 9, 1: 1}
