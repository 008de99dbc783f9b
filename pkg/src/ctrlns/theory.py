"""Audits of the structural conditions behind latent recovery guarantees.

Everything here works on *functions* (transition maps, their partial
derivatives) or on explicit support matrices, so the same checks run
against generated ground truth, fitted models, or hand-built examples.

Conventions: a support matrix entry (i, j) means source ``z_{t-1,i}``
influences target ``z_{t,j}``; supports are established by sampling
derivative magnitudes over evaluation points with an absolute threshold
(default 1e-6, 100 points). Checks that search for witness points report
three-way outcomes: a failed search within budget is ``inconclusive``,
not ``fail``; ``fail`` requires the quantity under test to stay far from
the target everywhere sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

DEFAULT_THRESHOLD = 1e-6


# ---------------------------------------------------------------------------
# supports and complexity
# ---------------------------------------------------------------------------

def jacobian_support(jac_fn, points: np.ndarray,
                     threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """0/1 support of a Jacobian over evaluation points.

    ``jac_fn`` maps (B, n) points to (B, n, n) Jacobians, or a single
    point to (n, n); entry (i, j) holds d(target j)/d(source i).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    B, n = points.shape
    try:
        J = np.asarray(jac_fn(points), dtype=np.float64)
        if J.shape != (B, n, n):
            raise ValueError
    except Exception:  # single-point callable
        J = np.stack([np.asarray(jac_fn(p), dtype=np.float64) for p in points])
    return (np.abs(J).max(axis=0) > threshold).astype(np.int8)


def complexity(mask: np.ndarray) -> int:
    """Support complexity: the number of active edges."""
    return int((np.asarray(mask) != 0).sum())


def binary_or(*masks: np.ndarray) -> np.ndarray:
    """Elementwise OR of any number of support matrices."""
    if not masks:
        raise ValueError("binary_or needs at least one mask")
    out = (np.asarray(masks[0]) != 0)
    for m in masks[1:]:
        out = out | (np.asarray(m) != 0)
    return out.astype(np.int8)


def higher_order_support(partial_fn, points: np.ndarray, order: int,
                         threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Support of k-th order partials d^k(target j)/d(source i)^k.

    ``partial_fn(z, i, j, order)`` returns the scalar partial at ``z``.
    Edges whose lower-order influence is purely polynomial drop out of
    high orders, which is what makes same-support regimes separable.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[1]
    sup = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(n):
            for z in points:
                if abs(partial_fn(z, i, j, order)) > threshold:
                    sup[i, j] = 1
                    break
    return sup


# ---------------------------------------------------------------------------
# regime distinguishability through derivative structure
# ---------------------------------------------------------------------------

@dataclass
class VariabilityReport:
    """Which derivative order first separates each pair of regimes."""

    distinguishing_order: dict      # (u, v) -> k, or None if never separated
    all_distinguished: bool
    supports: np.ndarray            # (U, k_max, n, n) stacked per-order supports
    k_max: int


def mechanism_variability_check(partial_fns, points: np.ndarray, k_max: int = 3,
                                threshold: float = DEFAULT_THRESHOLD) -> VariabilityReport:
    """Probe orders 1..k_max for support differences between regime pairs.

    ``partial_fns[u]`` must behave like ``fn(z, i, j, order)`` for regime
    ``u``. Two regimes with identical first-order supports may still part
    ways at a higher order when an edge is polynomial in one regime only.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    U = len(partial_fns)
    n = points.shape[1]
    sup = np.zeros((U, k_max, n, n), dtype=np.int8)
    for u, fn in enumerate(partial_fns):
        for k in range(1, k_max + 1):
            sup[u, k - 1] = higher_order_support(fn, points, k, threshold)
    orders: dict = {}
    for u in range(U):
        for v in range(u + 1, U):
            orders[(u, v)] = next(
                (k for k in range(1, k_max + 1)
                 if not np.array_equal(sup[u, k - 1], sup[v, k - 1])),
                None,
            )
    return VariabilityReport(
        distinguishing_order=orders,
        all_distinguished=all(k is not None for k in orders.values()),
        supports=sup,
        k_max=k_max,
    )


# ---------------------------------------------------------------------------
# weakly diverse lossy transitions
# ---------------------------------------------------------------------------

@dataclass
class LossySourceReport:
    source: int
    status: str                      # "pass" | "fail" | "inconclusive"
    children: np.ndarray
    common_point: np.ndarray | None = None
    child_points: dict = field(default_factory=dict)
    best_common_residual: float = np.inf   # smallest max-child |partial| seen
    best_child_residual: dict = field(default_factory=dict)
    reason: str = ""


@dataclass
class LossyReport:
    status: str
    sources: list


def _ball(rng: np.random.Generator, center: np.ndarray, radius: float,
          count: int) -> np.ndarray:
    d = rng.normal(size=(count, center.size))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / center.size)
    return center[None] + d * r


def weakly_diverse_lossy_check(partial_fn, mask: np.ndarray,
                               box: tuple = (-3.0, 3.0),
                               n_base: int = 40, n_grid: int = 41,
                               refine: int = 24,
                               ball_radius: float = 0.02, ball_samples: int = 12,
                               threshold: float = DEFAULT_THRESHOLD,
                               fail_margin: float = 1e-3,
                               rng: np.random.Generator | None = None) -> LossyReport:
    """Search for the per-source saturation structure lossiness requires.

    For every source with children the check hunts for (a) a point where
    all child edges' partials vanish at once and (b), per child, a point
    where only that child's edge vanishes while a sibling stays alive.
    Both kinds of witness must survive perturbation within a small ball,
    approximating the open-set requirement. Candidates come from sweeping
    the source coordinate over random base points; wherever a child's
    dead/alive state flips between neighboring sweep ticks the cell is
    subdivided, so saturation bands narrower than the grid step are still
    found. A source whose partials never drop below ``fail_margin``
    anywhere sampled is a ``fail``; a source with near misses only is
    ``inconclusive``. A source with exactly one child fails structurally:
    its lone-edge band cannot escape the shared band.
    """
    rng = rng or np.random.default_rng(0)
    mask = np.asarray(mask)
    n = mask.shape[0]
    partial = lambda z, i, j: float(partial_fn(z, i, j))
    alive = 10.0 * threshold
    reports = []

    def eval_block(cand, i, children):
        P = np.empty((cand.shape[0], children.size))
        for c, z in enumerate(cand):
            for a, j in enumerate(children):
                P[c, a] = abs(partial(z, int(i), int(j)))
        return P

    for i in range(n):
        children = np.nonzero(mask[i])[0]
        if children.size == 0:
            reports.append(LossySourceReport(i, "pass", children,
                                             reason="no children, nothing to lose"))
            continue
        if children.size == 1:
            reports.append(LossySourceReport(
                i, "fail", children,
                reason="single child: its saturation band equals the shared band"))
            continue

        # candidates: random bases with the source coordinate swept over the box
        bases = rng.uniform(box[0], box[1], size=(n_base, n))
        sweep = np.linspace(box[0], box[1], n_grid)
        cand = np.repeat(bases, n_grid, axis=0)
        cand[:, i] = np.tile(sweep, n_base)
        P = eval_block(cand, i, children)

        # subdivide sweep cells where any child's dead state flips
        dead = P < threshold
        extra = []
        step = (box[1] - box[0]) / (n_grid - 1)
        for b in range(n_base):
            rows = slice(b * n_grid, (b + 1) * n_grid)
            flips = np.nonzero((dead[rows][1:] != dead[rows][:-1]).any(axis=1))[0]
            for f in flips:
                left = box[0] + f * step
                fine = left + step * (np.arange(1, refine + 1) / (refine + 1))
                block = np.repeat(bases[b][None], refine, axis=0)
                block[:, i] = fine
                extra.append(block)
        if extra:
            extra = np.vstack(extra)
            cand = np.vstack([cand, extra])
            P = np.vstack([P, eval_block(extra, i, children)])

        rep = LossySourceReport(i, "inconclusive", children)
        worst = P.max(axis=1)
        rep.best_common_residual = float(worst.min())

        # (a) shared vanishing point, ball-verified
        for c in np.argsort(worst)[:12]:
            if worst[c] >= threshold:
                break
            ok = True
            for zb in _ball(rng, cand[c], ball_radius, ball_samples):
                if any(abs(partial(zb, int(i), int(j))) >= threshold for j in children):
                    ok = False
                    break
            if ok:
                rep.common_point = cand[c].copy()
                break

        # (b) per-child exclusive vanishing points
        for a, j in enumerate(children):
            rep.best_child_residual[int(j)] = float(P[:, a].min())
            others = np.delete(np.arange(children.size), a)
            exclusive = (P[:, a] < threshold) & (P[:, others].max(axis=1) > alive)
            for c in np.nonzero(exclusive)[0][:12]:
                ok = True
                for zb in _ball(rng, cand[c], ball_radius, ball_samples):
                    if abs(partial(zb, int(i), int(j))) >= threshold:
                        ok = False
                        break
                if ok:
                    rep.child_points[int(j)] = cand[c].copy()
                    break

        have_all = rep.common_point is not None and len(rep.child_points) == children.size
        if have_all:
            rep.status = "pass"
        elif rep.best_common_residual > fail_margin or any(
            v > fail_margin for v in rep.best_child_residual.values()
        ):
            rep.status = "fail"
            rep.reason = "partials stay bounded away from zero over the search box"
        else:
            rep.status = "inconclusive"
            rep.reason = "near misses only; enlarge the budget or the box to decide"
        reports.append(rep)

    if any(r.status == "fail" for r in reports):
        overall = "fail"
    elif any(r.status == "inconclusive" for r in reports):
        overall = "inconclusive"
    else:
        overall = "pass"
    return LossyReport(status=overall, sources=reports)


# ---------------------------------------------------------------------------
# regime recovery oracle (desk-scale exhaustive minimization)
# ---------------------------------------------------------------------------

def _pack_support(mask: np.ndarray) -> np.uint64:
    flat = (np.asarray(mask).ravel() != 0)
    if flat.size > 64:
        raise ValueError("packed supports handle at most 64 edges (n <= 8)")
    bits = np.uint64(0)
    for idx in np.nonzero(flat)[0]:
        bits |= np.uint64(1) << np.uint64(idx)
    return bits


def _decode(code: int, L: int, C: int) -> np.ndarray:
    labels = np.empty(C, dtype=np.int64)
    for c in range(C):
        labels[c] = code % L
        code //= L
    return labels


def _canonical_partition(labels: np.ndarray, packed: list) -> frozenset:
    """Cells grouped by label, then groups with identical OR-support merged.

    Splitting a regime across labels costs nothing when the pieces carry
    the same support, so cost minimization can only pin the partition
    down to this canonical form.
    """
    union: dict = {}
    for c, l in enumerate(labels):
        union[l] = union.get(l, np.uint64(0)) | packed[c]
    groups: dict = {}
    for c, l in enumerate(labels):
        groups.setdefault(int(union[l]), []).append(c)
    return frozenset(frozenset(g) for g in groups.values())


@dataclass
class Theorem1Report:
    identifiable: bool
    support_separable: bool          # regime supports pairwise distinct
    minimizers_match_truth: bool     # every minimizer induces the true partition
    min_expected_complexity: float
    true_expected_complexity: float
    n_minimizers: int
    n_assignments: int
    example_spurious: np.ndarray | None


def theorem1_oracle(supports: np.ndarray, probs: np.ndarray,
                    true_labels: np.ndarray, n_labels: int | None = None,
                    tol: float = 1e-9) -> Theorem1Report:
    """Exhaustively check that sparsity minimization recovers the regimes.

    ``supports`` holds one (n, n) matrix per cell (a cell is any unit the
    estimator could label: a regime, or a finer split of one), ``probs``
    the cell weights, ``true_labels`` the generating regime of each cell.
    Every assignment of cells to ``n_labels`` labels is scored by expected
    merged-support complexity; recovery holds when supports are pairwise
    distinct across regimes and *all* minimizers induce the true grouping.
    """
    supports = np.asarray(supports)
    probs = np.asarray(probs, dtype=np.float64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    C = supports.shape[0]
    if probs.shape != (C,) or true_labels.shape != (C,):
        raise ValueError("supports, probs and true_labels must align")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("cell probabilities must sum to 1")
    L = n_labels or int(np.unique(true_labels).size)

    packed = [_pack_support(supports[c]) for c in range(C)]
    costs = _kernels.scan_assignments(np.array(packed, dtype=np.uint64), probs, L)
    min_cost = float(costs.min())
    minimizer_codes = np.nonzero(costs <= min_cost + tol)[0]

    # per-regime supports, ORed over the regime's cells
    regime_sup: dict = {}
    for c, l in enumerate(true_labels):
        regime_sup[int(l)] = regime_sup.get(int(l), np.uint64(0)) | packed[c]
    regimes = sorted(regime_sup)
    support_separable = all(
        regime_sup[a] != regime_sup[b]
        for idx, a in enumerate(regimes) for b in regimes[idx + 1:]
    )

    true_cost = float(sum(
        probs[c] * bin(int(regime_sup[int(true_labels[c])])).count("1")
        for c in range(C)
    ))

    truth = _canonical_partition(true_labels, packed)
    example = None
    match = True
    for code in minimizer_codes:
        labels = _decode(int(code), L, C)
        if _canonical_partition(labels, packed) != truth:
            match = False
            example = labels
            break

    return Theorem1Report(
        identifiable=bool(support_separable and match),
        support_separable=bool(support_separable),
        minimizers_match_truth=bool(match),
        min_expected_complexity=min_cost,
        true_expected_complexity=true_cost,
        n_minimizers=int(minimizer_codes.size),
        n_assignments=int(costs.size),
        example_spurious=example,
    )


# ---------------------------------------------------------------------------
# sufficient variability rank audit (additive-noise conditionals)
# ---------------------------------------------------------------------------

@dataclass
class SufficientVariabilityReport:
    passes: bool
    rank: int
    required: int                    # 2n
    singular_values: np.ndarray
    matrix: np.ndarray               # (2n, nU + U - 1) stacked score vectors


def gaussian_noise_scores():
    """Log-density derivatives ``psi, psi', psi''`` of a standard normal.

    ``psi(t) = d/dt log q(t) = -t``; the vanishing second derivative is
    what caps the rank test below for Gaussian innovations: half of each
    cross block dies identically.
    """
    return (lambda t: -t,
            lambda t: -np.ones_like(np.asarray(t, dtype=np.float64)),
            lambda t: np.zeros_like(np.asarray(t, dtype=np.float64)))


def student_t_noise_scores(df: float):
    """Log-density derivatives of a (non-standardized) Student-t.

    The curvature of ``psi`` is the point: unlike the Gaussian case the
    third-order cross blocks are nonzero, so the rank test can reach 2n.
    """
    if df <= 0:
        raise ValueError("df must be positive")

    def psi(t):
        t = np.asarray(t, dtype=np.float64)
        return -(df + 1.0) * t / (df + t * t)

    def dpsi(t):
        t = np.asarray(t, dtype=np.float64)
        return -(df + 1.0) * (df - t * t) / (df + t * t) ** 2

    def d2psi(t):
        t = np.asarray(t, dtype=np.float64)
        return (df + 1.0) * 2.0 * t * (3.0 * df - t * t) / (df + t * t) ** 3

    return psi, dpsi, d2psi


def sufficient_variability_check(mean_fn, jac_fn, sigma, z_prev: np.ndarray,
                                 z_t: np.ndarray, n_regimes: int,
                                 rank_tol: float = 1e-8,
                                 noise_scores=None) -> SufficientVariabilityReport:
    """Rank test of the stacked conditional-score derivative vectors.

    The conditional is additive noise around a regime mean map:
    ``z_t = f_u(z_prev) + sigma * eps`` with log-density derivatives of
    eps given by ``noise_scores = (psi, psi', psi'')`` (standard normal
    when omitted). For each component k two vectors are formed: one
    stacks the second-order cross derivatives of the log density in
    (z_k, z_prev) across regimes plus consecutive differences of its
    second derivative in z_k; the partner stacks the third-order cross
    blocks plus consecutive differences of the first derivative.
    Recovery needs all 2n vectors independent. Gaussian innovations zero
    the second stack's cross blocks (``psi'' = 0``), leaving it only the
    (U - 1)-wide tail, so the total rank is capped at n + (U - 1)
    regardless of the maps; noise families with curved scores lift the
    cap.

    ``mean_fn(u, z_prev) -> (n,)``, ``jac_fn(u, z_prev) -> (n, n)`` with
    entry (i, j) = d f_j / d z_prev_i, ``sigma`` scalar or (U, n).
    """
    z_prev = np.asarray(z_prev, dtype=np.float64)
    z_t = np.asarray(z_t, dtype=np.float64)
    n = z_prev.size
    U = int(n_regimes)
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (U, n)).copy()
    if np.any(sig <= 0):
        raise ValueError("sigma must be positive")
    psi, dpsi, d2psi = noise_scores or gaussian_noise_scores()

    means = np.stack([np.asarray(mean_fn(u, z_prev), dtype=np.float64) for u in range(U)])
    jacs = np.stack([np.asarray(jac_fn(u, z_prev), dtype=np.float64) for u in range(U)])
    resid = (z_t[None, :] - means) / sig                 # (U, n) standardized

    width = n * U + (U - 1)
    rows = np.zeros((2 * n, width))
    for k in range(n):
        s = rows[k]
        s_ring = rows[n + k]
        for u in range(U):
            # d^2 eta / dz_k dz_prev = -psi'(r) grad f_k / sigma^2
            s[u * n:(u + 1) * n] = (-dpsi(resid[u, k]) * jacs[u][:, k]
                                    / sig[u, k] ** 2)
            # d^3 eta / dz_k^2 dz_prev = -psi''(r) grad f_k / sigma^3
            s_ring[u * n:(u + 1) * n] = (-d2psi(resid[u, k]) * jacs[u][:, k]
                                         / sig[u, k] ** 3)
        d2 = dpsi(resid[:, k]) / sig[:, k] ** 2          # d^2 eta / dz_k^2 per regime
        d1 = psi(resid[:, k]) / sig[:, k]                # d eta / dz_k per regime
        s[n * U:] = np.diff(d2)
        s_ring[n * U:] = np.diff(d1)

    sv = np.linalg.svd(rows, compute_uv=False)
    if sv.size and sv[0] > 0:
        rank = int((sv > rank_tol * sv[0]).sum())
    else:
        rank = 0
    return SufficientVariabilityReport(
        passes=rank == 2 * n,
        rank=rank,
        required=2 * n,
        singular_values=sv,
        matrix=rows,
    )
