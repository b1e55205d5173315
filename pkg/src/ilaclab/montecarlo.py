"""Per-realization pipeline and the deterministic realization-level runner.

Each task is a pure function of the realization index.  Results are
collected into a dict keyed by index and reduced in index order with
``math.fsum``, so worker count and scheduling never show up in the numbers.
"""

from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .eigensolver import ConvergenceError, EigenDecomposition, eig_symmetric
from .lattice import (
    BoxSpec,
    DisorderRealization,
    PotentialDistribution,
    assemble_hamiltonians,
    build_laplacian,
    sample_potential,
)

log = logging.getLogger(__name__)


class RealizationFailure(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"realization {index} failed: {cause}")
        self.index = index
        self.cause = cause


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class Realization:
    index: int
    disorder: DisorderRealization = field(repr=False)
    plus: EigenDecomposition = field(repr=False)
    minus: EigenDecomposition = field(repr=False)


@functools.lru_cache(maxsize=8)
def cached_laplacian(box: BoxSpec) -> np.ndarray:
    lap = build_laplacian(box)
    lap.setflags(write=False)
    return lap


def realize(
    box: BoxSpec,
    dist: PotentialDistribution,
    master_seed: int,
    index: int,
    *,
    vectors: bool = True,
    minus: bool = True,
) -> Realization:
    """sample -> assemble -> diagonalize for one disorder realization."""
    disorder = sample_potential(dist, box, master_seed, index)
    pair = assemble_hamiltonians(cached_laplacian(box), disorder, box)
    try:
        plus = eig_symmetric(pair.h_plus, compute_vectors=vectors)
        neg = eig_symmetric(pair.h_minus, compute_vectors=vectors) if minus else plus
    except ConvergenceError as exc:
        raise RealizationFailure(index, exc) from exc
    return Realization(index, disorder, plus, neg)


def run_tasks(
    task: Callable[[int], Any], indices: Iterable[int], workers: int = 1
) -> dict[int, Any]:
    """Evaluate ``task`` on every index; the result dict is keyed by index.

    ``task`` must be picklable (a module-level function or a partial of one)
    when ``workers > 1``.
    """
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        return {i: task(i) for i in indices}
    chunk = max(1, len(indices) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(task, indices, chunksize=chunk))
    return dict(zip(indices, results))


@dataclass(frozen=True)
class PartialResult:
    """Per-realization results of one config over some set of indices."""

    config_digest: str
    results: Mapping[int, Any] = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.results)

    def ordered(self) -> list[Any]:
        return [self.results[i] for i in sorted(self.results)]


def merge_results(partials: Iterable[PartialResult]) -> PartialResult:
    partials = list(partials)
    if not partials:
        raise MergeError("nothing to merge")
    digests = {p.config_digest for p in partials}
    if len(digests) != 1:
        raise MergeError("partial results come from different configs")
    merged: dict[int, Any] = {}
    for p in partials:
        overlap = merged.keys() & p.results.keys()
        if overlap:
            raise MergeError(f"realization indices present twice: {sorted(overlap)[:5]}")
        merged.update(p.results)
    return PartialResult(digests.pop(), {i: merged[i] for i in sorted(merged)})


def fsum_mean(values: Iterable[np.ndarray]) -> np.ndarray:
    """Elementwise correctly rounded mean; independent of the input order."""
    stack = np.array([np.asarray(v, dtype=float) for v in values])
    if stack.size == 0:
        raise ValueError("no values to average")
    flat = stack.reshape(stack.shape[0], -1)
    out = np.array([math.fsum(flat[:, k]) for k in range(flat.shape[1])]) / stack.shape[0]
    return out.reshape(stack.shape[1:])
