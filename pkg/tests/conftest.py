"""Shared generators for randomized property tests."""

import numpy as np
import pytest

from relsyn import FirSystem, Plant, StateSpace, validate_c2


def rand_schur(rng, n, m, p, rho=0.6, d_scale=1.0):
    """Random discrete-time system with spectral radius exactly rho."""
    A = rng.normal(size=(n, n))
    radius = np.max(np.abs(np.linalg.eigvals(A)))
    A = A * (rho / radius)
    return StateSpace(
        A,
        rng.normal(size=(n, m)),
        rng.normal(size=(p, n)),
        d_scale * rng.normal(size=(p, m)),
    )


def rand_connected_c2(rng, n, extra_edges=0):
    """Sensing matrix of a random connected graph: a random spanning tree
    plus up to `extra_edges` distinct chords, random orientations."""
    edges = set()
    order = rng.permutation(n)
    for idx in range(1, n):
        a = int(order[idx])
        b = int(order[rng.integers(0, idx)])
        edges.add((min(a, b), max(a, b)))
    candidates = [
        (i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges
    ]
    rng.shuffle(candidates)
    for pair in candidates[:extra_edges]:
        edges.add(pair)
    rows = []
    for i, j in sorted(edges):
        r = np.zeros(n)
        if rng.random() < 0.5:
            r[i], r[j] = 1.0, -1.0
        else:
            r[i], r[j] = -1.0, 1.0
        rows.append(r)
    C2 = np.vstack(rows)
    rng.shuffle(C2)
    return C2


def rand_relative_fir(rng, ms, l, horizon):
    """Random FIR map whose every tap is relative on every component."""
    taps = rng.normal(size=(horizon + 1, l, ms.n_states))
    for comp in ms.components:
        cols = list(comp)
        taps[:, :, cols] -= taps[:, :, cols].mean(axis=2, keepdims=True)
    return FirSystem(taps)


def rand_relative_fir_exact(rng, ms, l, horizon, span=8):
    """Random relative FIR with *exactly* zero row sums in floating point.

    Entries are dyadic rationals (integers / span) and each component's
    last column is the negated integer sum of the others, which floats
    represent exactly; useful when a downstream map amplifies row-sum
    defects through unstable dynamics.
    """
    ints = rng.integers(-span, span + 1, size=(horizon + 1, l, ms.n_states))
    ints = ints.astype(float)
    for comp in ms.components:
        cols = list(comp)
        ints[:, :, cols[-1]] = -ints[:, :, cols[:-1]].sum(axis=2)
    return FirSystem(ints / span)


def upper_triangular_plant(n=4, diag=0.5, upper=0.1):
    from relsyn.bench import triangular_plant

    return triangular_plant(n, diag, upper)


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
