"""Exact least-squares solution of the structured model-matching program.

The objective ||T1 + T2 Q T3|| in the H2 norm is affine in the FIR
coefficients of the free parameter Q, so after eliminating the compiled
equality constraints (structural zeros and per-component zero row sums)
the program is a dense linear least-squares problem over the remaining
coefficients.  A circulant fast path handles the ring-consensus family by
reducing the matrix-valued problem to the first column of Q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:  # QR-with-column-pivoting driver; numpy's SVD path is the fallback
    from scipy.linalg import lstsq as _scipy_lstsq
except ImportError:  # pragma: no cover
    _scipy_lstsq = None

from .errors import DimensionError, DomainError, StructureViolationError
from .lti import (
    FirSystem,
    Plant,
    StateSpace,
    fir_compose,
    fir_lft,
    fir_sub,
    lft,
    markov,
)
from .measurement import (
    MeasurementStructure,
    chain_transform,
    recover_controller,
    validate_c2,
)
from .structure import (
    InfoStructure,
    compile_constraints,
    membership,
    qi_certificate,
    transfer_pattern,
)
from .youla import YoulaData, build_tilde_plant, laplacian_rnom, make_t_systems, r_from_q

DEFAULT_Q_HORIZON = 32

#: Relative tail energy targeted when extending the objective horizon.
_TAIL_TARGET = 1e-12

#: Entries this small may be snapped to exact zeros during cleanup.
_SNAP_TOL = 1e-9


# ---------------------------------------------------------------------------
# problem and result records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthesisProblem:
    """A structured model-matching instance.

    `horizon_q` is the FIR horizon of the free parameter; `horizon_obj`
    is the truncation horizon of the objective (resolved automatically
    from the decay rate of the stable T realizations when omitted).
    Construction is rejected unless the structure is quadratically
    invariant with respect to the control-to-state pattern, which is what
    lets the structure constraint transfer onto the free parameter.
    """

    yd: YoulaData
    structure: InfoStructure
    ms: MeasurementStructure
    horizon_q: int
    horizon_obj: int | None = None

    def __post_init__(self):
        yd = self.yd
        n = yd.plant.n_states
        l = yd.plant.n_ctrl
        if (self.structure.rows, self.structure.cols) != (l, n):
            raise DimensionError(
                f"structure is {self.structure.rows}x{self.structure.cols}, "
                f"free parameter is {l}x{n}"
            )
        if self.ms.n_states != n:
            raise DimensionError("measurement structure does not match the plant")
        if self.horizon_q < 0:
            raise DomainError("horizon_q must be nonnegative")
        pattern = transfer_pattern(yd.plant.pxu())
        cert = qi_certificate(self.structure, pattern)
        if cert is not None:
            raise StructureViolationError(
                "structure is not quadratically invariant with respect to the "
                f"control-to-state pattern; violating quadruple {cert}",
                certificate=cert,
            )
        n_stable = max(yd.t2_stable.n_states, yd.t3_projected.n_states)
        floor = self.horizon_q + 2 * n_stable
        if self.horizon_obj is None:
            object.__setattr__(
                self, "horizon_obj", _resolve_objective_horizon(yd, self.horizon_q)
            )
        elif self.horizon_obj < floor:
            raise DomainError(
                f"horizon_obj must be at least horizon_q + 2 * state dimension "
                f"({floor})"
            )


def _resolve_objective_horizon(yd: YoulaData, horizon_q: int) -> int:
    n_stable = max(
        yd.t1_stable.n_states, yd.t2_stable.n_states, yd.t3_projected.n_states
    )
    base = horizon_q + 4 * n_stable
    rho = max(
        yd.t1_stable.spectral_radius(),
        yd.t2_stable.spectral_radius(),
        yd.t3_projected.spectral_radius(),
    )
    if rho <= 1e-9:
        return base
    # geometric tail bound: keep taps until rho^(2 k) drops below target
    tail = int(math.ceil(math.log(_TAIL_TARGET) / (2.0 * math.log(rho))))
    return max(base, horizon_q + 2 * n_stable + min(tail, 20000))


@dataclass(frozen=True)
class SynthesisResult:
    """Solution bundle of one synthesis run.

    `objective` is the H2 value of the matched map, `residual_gradient`
    the optimality measure ||A'(Ax - b)|| of the solved least-squares
    system, and `constraint_violation` the largest indicator row sum over
    all taps of `q_opt`.  `k_opt` satisfies k_opt C2 = r_opt tap-wise.
    """

    q_opt: FirSystem
    objective: float
    residual_gradient: float
    constraint_violation: float
    r_opt: StateSpace
    k_opt: FirSystem
    rank_deficient: bool


@dataclass(frozen=True)
class LstsqResult:
    x: np.ndarray
    residual: float
    gradient_norm: float
    rank: int
    rank_deficient: bool


def least_squares(A, b) -> LstsqResult:
    """Minimize ||A x - b|| by QR with column pivoting.

    Returns the minimal-norm solution on rank deficiency (flagged), with
    the residual norm and the gradient norm ||A'(A x - b)|| for
    optimality certification.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise DimensionError(f"incompatible least-squares shapes {A.shape}, {b.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise DomainError("least-squares input contains non-finite entries")
    if A.shape[1] == 0:
        return LstsqResult(
            x=np.zeros(0),
            residual=float(np.linalg.norm(b)),
            gradient_norm=0.0,
            rank=0,
            rank_deficient=False,
        )
    if _scipy_lstsq is not None:
        x, _, rank, _ = _scipy_lstsq(A, b, lapack_driver="gelsy")
    else:  # pragma: no cover
        x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    resid_vec = A @ x - b
    return LstsqResult(
        x=x,
        residual=float(np.linalg.norm(resid_vec)),
        gradient_norm=float(np.linalg.norm(A.T @ resid_vec)),
        rank=int(rank),
        rank_deficient=int(rank) < A.shape[1],
    )


# ---------------------------------------------------------------------------
# constraint elimination
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _FreeBasis:
    """Reduced coefficient basis after substituting the equality rows.

    Each free variable is a (tap, row, col) triple paired with the
    dependent column of its zero-sum group; forced variables are pinned at
    zero and never enter the least-squares system.
    """

    free: tuple  # of ((k, i, j), dependent_j)
    groups: tuple  # of (k, i, tuple_of_js) with len >= 2


def _reduce_constraints(
    structure: InfoStructure, indicators: np.ndarray, horizon: int
) -> _FreeBasis:
    cs = compile_constraints(structure, indicators, horizon)
    forced = set()
    sum_groups = []
    for row in cs.constraints:
        if len(row) == 1:
            forced.add(cs.var_of(row[0][0]))
        else:
            sum_groups.append(tuple(cs.var_of(idx) for idx, _ in row))
    free = []
    groups = []
    for group in sum_groups:
        live = [v for v in group if v not in forced]
        if not live:
            continue
        if len(live) == 1:
            forced.add(live[0])
            continue
        k, i, _ = live[0]
        js = tuple(j for (_, _, j) in live)
        groups.append((k, i, js))
        for (_, _, j) in live[:-1]:
            free.append(((k, i, j), js[-1]))
    return _FreeBasis(free=tuple(free), groups=tuple(groups))


def _assemble_q(
    basis: _FreeBasis, x: np.ndarray, horizon: int, rows: int, cols: int
) -> FirSystem:
    taps = np.zeros((horizon + 1, rows, cols))
    dep_acc: dict = {}
    for ((k, i, j), dep_j), val in zip(basis.free, x):
        taps[k, i, j] = val
        key = (k, i, dep_j)
        dep_acc[key] = dep_acc.get(key, 0.0) - val
    for (k, i, j), val in dep_acc.items():
        taps[k, i, j] = val
    return FirSystem(taps)


# ---------------------------------------------------------------------------
# general dense path
# ---------------------------------------------------------------------------


def solve(prob: SynthesisProblem) -> SynthesisResult:
    """Minimize the H2 norm of T1 + T2 Q T3 over structured FIR Q.

    Each Markov parameter of the matched map is an affine function of the
    free coefficients that remain after constraint elimination; the sum of
    squared entries over the objective horizon is minimized by dense QR
    least squares, and the output-feedback controller is recovered from
    the optimal state-feedback map.
    """
    yd = prob.yd
    T_Q, T_J = prob.horizon_q, prob.horizon_obj
    nz = yd.plant.n_perf
    nw = yd.plant.n_dist
    l = yd.plant.n_ctrl
    n = yd.plant.n_states
    F1 = markov(yd.t1_stable, T_J).taps
    F2 = markov(yd.t2_stable, T_J).taps
    F3 = markov(yd.t3_projected, T_J).taps

    basis = _reduce_constraints(prob.structure, prob.ms.indicators, T_Q)
    pairs = sorted(
        {(i, j) for (_, i, j), dep in basis.free} | {(i, dep) for (_, i, _), dep in basis.free}
    )
    pair_conv = {ij: _pair_convolution(F2, F3, *ij) for ij in pairs}

    n_rows = (T_J + 1) * nz * nw
    A = np.zeros((n_rows, len(basis.free)))
    block = nz * nw
    for f, ((k, i, j), dep_j) in enumerate(basis.free):
        direction = pair_conv[(i, j)] - pair_conv[(i, dep_j)]
        A[k * block :, f] = direction[: T_J + 1 - k].reshape(-1)
    lsres = least_squares(A, -F1.reshape(-1))

    q_opt = _assemble_q(basis, lsres.x, T_Q, l, n)
    return _finalize(prob, q_opt, lsres, objective=lsres.residual)


def _pair_convolution(F2: np.ndarray, F3: np.ndarray, i: int, j: int) -> np.ndarray:
    """Taps of T2 e_i (e_j' T3), the objective response to a unit
    coefficient at entry (i, j) of a tap of Q."""
    T = F2.shape[0] - 1
    col = F2[:, :, i]
    row = F3[:, j, :]
    out = np.zeros((T + 1, col.shape[1], row.shape[1]))
    for a in range(T + 1):
        out[a:] += col[a][None, :, None] * row[: T + 1 - a][:, None, :]
    return out


# ---------------------------------------------------------------------------
# ring consensus family and the circulant fast path
# ---------------------------------------------------------------------------


def ring_adjacency(n: int) -> np.ndarray:
    """Cycle graph adjacency: nodes i and j adjacent iff |i-j| = 1 mod n."""
    A = np.zeros((n, n))
    for i in range(n):
        A[i, (i + 1) % n] = 1.0
        A[(i + 1) % n, i] = 1.0
    return A


def ring_measurement(n: int) -> MeasurementStructure:
    """Consecutive-difference sensing y_i = x_i - x_{i+1}, i = 0..n-2.

    These n-1 independent rows connect all nodes (one component) while
    satisfying the one-plus/one-minus and no-redundancy requirements; the
    full cycle of n difference sensors would repeat information.
    """
    C2 = np.zeros((n - 1, n))
    for i in range(n - 1):
        C2[i, i] = 1.0
        C2[i, i + 1] = -1.0
    return validate_c2(C2)


def ring_plant(n: int, gamma: float) -> Plant:
    """First-order consensus plant on a ring.

    Dynamics x[t+1] = x + u + w with performance output stacking the
    deviation-from-average (1 - gamma) (I - (1/n) 1 1') x over the control
    effort gamma u.
    """
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    if n < 2:
        raise DomainError("ring needs at least 2 nodes")
    deviation = np.eye(n) - np.ones((n, n)) / n
    C1 = np.vstack([(1.0 - gamma) * deviation, np.zeros((n, n))])
    D12 = np.vstack([np.zeros((n, n)), gamma * np.eye(n)])
    return Plant(
        A=np.eye(n),
        B1=np.eye(n),
        B2=np.eye(n),
        C1=C1,
        D12=D12,
        C2=ring_measurement(n).c2,
    )


def build_ring_problem(
    n: int,
    gamma: float,
    horizon_q: int = DEFAULT_Q_HORIZON,
    horizon_obj: int | None = None,
) -> SynthesisProblem:
    """Ring plant + Laplacian nominal + ring delay structure, ready to solve."""
    from .structure import ring_delay_structure

    plant = ring_plant(n, gamma)
    ms = validate_c2(plant.C2)
    yd = make_t_systems(
        build_tilde_plant(plant), laplacian_rnom(ring_adjacency(n)), ms
    )
    return SynthesisProblem(
        yd=yd,
        structure=ring_delay_structure(n),
        ms=ms,
        horizon_q=horizon_q,
        horizon_obj=horizon_obj,
    )


def eliminate_q0(n: int) -> FirSystem:
    """Column-lift map from the free circulant entries to the first column.

    The relative constraint ties the diagonal entry to the off-diagonal
    ones, so the first column of Q equals M q with q the n-1 free scalar
    FIRs: row 0 of M collects -z^(-l_j) over every parameter and row n-j
    holds +z^(-l_j) for parameter j, where l_j is the ring distance of
    circulant offset j.  Column sums vanish, so Q 1 = 0 holds by
    construction.
    """
    if n < 2:
        raise DomainError("ring needs at least 2 nodes")
    dist = [min(j, n - j) for j in range(n)]
    horizon = max(dist[1:])
    taps = np.zeros((horizon + 1, n, n - 1))
    for j in range(1, n):
        taps[dist[j], 0, j - 1] = -1.0
        taps[dist[j], n - j, j - 1] = 1.0
    return FirSystem(taps)


def _is_circulant(M: np.ndarray) -> bool:
    n = M.shape[0]
    if M.shape != (n, n):
        return False
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return bool(np.array_equal(M, M[:, 0][idx]))


@dataclass(frozen=True)
class CirculantReduction:
    """Single-column form of a circulant synthesis problem.

    The objective satisfies ||T1 + T2 Q T3||^2 = scale * ||target +
    basis . q||^2 where `target` is the first column of T1, `basis[j]`
    is the response column T2 T3 (M e_j), and q stacks the free scalar
    FIR parameters with per-parameter horizons `param_horizons`.
    """

    n: int
    scale: float
    target: FirSystem
    basis: tuple
    lift: FirSystem
    param_horizons: tuple


def circulant_reduce(prob: SynthesisProblem) -> CirculantReduction:
    """Rewrite a circulant problem over the first column of Q.

    Circulant transfer matrices commute and are determined by one column,
    so T2 Q T3 e1 = T2 T3 (Q e1) and only Q e1 enters the objective.
    Rejects non-circulant plants, nominal controllers or structures.
    """
    yd = prob.yd
    plant = yd.plant
    n = plant.n_states
    blocks = [plant.A, plant.B1, plant.B2]
    if plant.n_perf % n == 0:
        for r in range(plant.n_perf // n):
            blocks.append(plant.C1[r * n : (r + 1) * n])
            blocks.append(plant.D12[r * n : (r + 1) * n])
    else:
        raise StructureViolationError("performance blocks are not n x n stacks")
    if yd.r_nom.n_states != 0:
        raise StructureViolationError("circulant path needs a static nominal gain")
    blocks.append(yd.r_nom.D)
    if not all(_is_circulant(M) for M in blocks):
        raise StructureViolationError("plant or nominal controller is not circulant")
    if not _is_circulant(prob.structure.min_delay):
        raise StructureViolationError("structure is not circulant")

    T_Q, T_J = prob.horizon_q, prob.horizon_obj
    lift = eliminate_q0(n)
    F2 = markov(yd.t2_stable, T_J)
    F3 = markov(yd.t3_projected, T_J)
    target = FirSystem(markov(yd.t1_stable, T_J).taps[:, :, :1])
    basis = []
    horizons = []
    for j in range(1, n):
        col = FirSystem(lift.taps[:, :, j - 1 : j])
        w = fir_compose(F3, col, horizon=T_J)
        basis.append(fir_compose(F2, w, horizon=T_J))
        horizons.append(T_Q - min(j, n - j))
    return CirculantReduction(
        n=n,
        scale=float(n),
        target=target,
        basis=tuple(basis),
        lift=lift,
        param_horizons=tuple(horizons),
    )


def solve_ring_circulant(
    n: int,
    gamma: float,
    horizon_q: int = DEFAULT_Q_HORIZON,
    horizon_obj: int | None = None,
) -> SynthesisResult:
    """Solve the ring-consensus instance through the circulant reduction.

    Builds the ring problem, reduces the objective to the first column of
    the circulant parameter, solves the unconstrained least squares over
    the n-1 scalar FIR parameters, and expands the optimal column back to
    the full parameter before recovering the output-feedback controller.
    """
    prob = build_ring_problem(n, gamma, horizon_q, horizon_obj)
    red = circulant_reduce(prob)
    T_J = prob.horizon_obj
    nz = prob.yd.plant.n_perf

    cols = []
    index = []
    for j, (col_sys, hj) in enumerate(zip(red.basis, red.param_horizons)):
        flat = col_sys.taps.reshape(T_J + 1, nz)
        for b in range(hj + 1):
            shifted = np.zeros((T_J + 1, nz))
            shifted[b:] = flat[: T_J + 1 - b]
            cols.append(shifted.reshape(-1))
            index.append((j, b))
    A = np.column_stack(cols) if cols else np.zeros(((T_J + 1) * nz, 0))
    lsres = least_squares(A, -red.target.taps.reshape(-1))

    params = [np.zeros(h + 1) for h in red.param_horizons]
    for (j, b), val in zip(index, lsres.x):
        params[j][b] = val
    q_opt = _expand_circulant(red, params, horizon_q)
    objective = math.sqrt(red.scale) * lsres.residual
    return _finalize(prob, q_opt, lsres, objective=objective)


def _expand_circulant(
    red: CirculantReduction, params: list, horizon_q: int
) -> FirSystem:
    """First column via the lift map, then the full circulant parameter."""
    n = red.n
    column = np.zeros((horizon_q + 1, n))
    for j, pj in enumerate(params, start=1):
        lcol = red.lift.taps[:, :, j - 1]  # (lift_horizon+1, n)
        for d in range(lcol.shape[0]):
            support = np.flatnonzero(lcol[d])
            if support.size == 0:
                continue
            hi = min(len(pj), horizon_q + 1 - d)
            for i in support:
                column[d : d + hi, i] += lcol[d, i] * pj[:hi]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    taps = column[:, idx]
    return FirSystem(taps)


# ---------------------------------------------------------------------------
# shared finalization: cleanup, recovery, declared structures
# ---------------------------------------------------------------------------


def combined_r_structure(structure: InfoStructure, yd: YoulaData) -> InfoStructure:
    """Minimum-delay bound on the recovered state-feedback map.

    R = Rnom - F(F(Rnom, Pxu), Q) inherits the structure of Q wherever the
    nominal gain vanishes, and delay 0 on the nominal's support.
    """
    nominal = transfer_pattern(yd.r_nom, numerical=True)
    return InfoStructure(np.minimum(structure.min_delay, nominal.min_delay))


def recovered_structure(r_structure: InfoStructure, ms: MeasurementStructure) -> InfoStructure:
    """Minimum-delay bound induced on the recovered K by the chain recovery.

    Column j of the chain gains is a cumulative sum over an ordering
    prefix, and each measurement column of K combines the gains selected
    by the chain transform, so the bound is the min of the contributing
    entries' delays.
    """
    l = r_structure.rows
    out = np.full((l, ms.n_measurements), np.inf)
    for ci, comp in enumerate(ms.components):
        if len(comp) == 1:
            continue
        T, ordering = chain_transform(ms, comp)
        rows = list(ms.component_rows(ci))
        c = len(comp)
        gain_delay = np.empty((l, c - 1))
        for jj in range(c - 1):
            cols = [ordering[t] for t in range(jj + 1)]
            gain_delay[:, jj] = r_structure.min_delay[:, cols].min(axis=1)
        for pos, ell in enumerate(rows):
            contributing = np.flatnonzero(T[: c - 1, pos])
            if contributing.size:
                out[:, ell] = gain_delay[:, contributing].min(axis=1)
    return InfoStructure(out)


def _clean_r_fir(
    r_fir: FirSystem, bound: InfoStructure, ms: MeasurementStructure
) -> FirSystem:
    """Snap sub-tolerance entries to the structural zeros and project the
    per-component row sums to exact zeros, so that recovery is exact."""
    taps = np.array(r_fir.taps)
    ks = np.arange(taps.shape[0])[:, None, None]
    snap = (ks < bound.min_delay[None, :, :]) & (np.abs(taps) <= _SNAP_TOL)
    taps[snap] = 0.0
    for k in range(taps.shape[0]):
        for i in range(taps.shape[1]):
            for comp in ms.components:
                allowed = [
                    j
                    for j in comp
                    if k >= bound.min_delay[i, j] or taps[k, i, j] != 0.0
                ]
                if not allowed:
                    continue  # every entry snapped, the sum is exactly zero
                s = taps[k, i, list(comp)].sum()
                taps[k, i, allowed] -= s / len(allowed)
                # one correction pass kills the roundoff of the first
                s = taps[k, i, list(comp)].sum()
                taps[k, i, allowed[0]] -= s
    return FirSystem(taps)


def recovered_r_fir(yd: YoulaData, q: FirSystem, horizon: int) -> FirSystem:
    """Taps of R = Rnom - F(F(Rnom, Pxu), Q) through the tap recursion.

    The state-space realization of R may carry unstable hidden modes, so
    its Markov parameters are ill conditioned at long horizons; the tap
    recursion works on impulse responses only and stays accurate.
    """
    M = markov(lft(yd.r_nom, yd.plant.pxu()), horizon)
    rnom_fir = markov(yd.r_nom, horizon)
    return fir_sub(rnom_fir, fir_lft(M, q.padded(horizon), horizon))


def _finalize(
    prob: SynthesisProblem,
    q_opt: FirSystem,
    lsres: LstsqResult,
    objective: float,
) -> SynthesisResult:
    yd = prob.yd
    ms = prob.ms
    violation = _constraint_violation(q_opt, ms)
    if violation > 1e-10:
        raise DomainError(
            f"synthesized parameter violates the indicator constraints ({violation:.2e})"
        )
    if not membership(q_opt, prob.structure):
        raise DomainError("synthesized parameter violates its structure")
    r_opt = r_from_q(yd, q_opt)
    horizon_k = _controller_horizon(prob)
    r_fir = recovered_r_fir(yd, q_opt, horizon_k)
    r_fir = _clean_r_fir(r_fir, combined_r_structure(prob.structure, yd), ms)
    k_opt = recover_controller(r_fir, ms)
    return SynthesisResult(
        q_opt=q_opt,
        objective=float(objective),
        residual_gradient=lsres.gradient_norm,
        constraint_violation=violation,
        r_opt=r_opt,
        k_opt=k_opt,
        rank_deficient=lsres.rank_deficient,
    )


def _controller_horizon(prob: SynthesisProblem) -> int:
    # The optimal R may be an unstable transfer function (only the closed
    # loop is guaranteed stable), so its long-horizon taps grow; the
    # recovered FIR controller keeps a short structural window on which
    # the tap match k_opt C2 = r_opt is well conditioned.
    return prob.horizon_q + 2 * prob.yd.plant.n_states


def _constraint_violation(q: FirSystem, ms: MeasurementStructure) -> float:
    worst = 0.0
    for comp in ms.components:
        sums = q.taps[:, :, list(comp)].sum(axis=2)
        worst = max(worst, float(np.abs(sums).max()))
    return worst
