"""Synthetic nonstationary sequences with fully known ground truth.

Latent states ``z_t`` in R^n evolve through one of U regime-specific
transition maps chosen by a hidden label sequence; an invertible mixing
stack turns each state into an observation ``x_t``. Regimes differ in
which sources feed which targets (the sparsity masks) and in the map
weights themselves. Every structural fact the audit tooling needs
(masks, saturation bounds, subnet weights, mixing matrices, label-chain
matrices) is kept on the returned objects and written into the dataset
container.

Transition maps are one-hidden-layer tanh subnets, one per (regime,
target) pair. Each source enters a target's subnet through a hard clamp
with per-edge bounds, so outside the bounds the edge's partial
derivative is exactly zero. Bounds are arranged so that, per source, the
edge-wise saturation bands never collapse into the shared band: every
child edge can be switched off alone. A config toggle removes the clamps
to produce systems that violate this on purpose.

Innovations are additive but deliberately not Gaussian: unit-variance
Student-t draws with log-spaced per-dimension scales. Isotropic Gaussian
innovations would make every orthogonal rotation of the latent space an
equally good solution, leaving per-component recovery to tie-breakers;
heavy tails and unequal scales pin the component axes (and give the
conditional scores the curvature the rank audit in ``theory`` measures).

Array orientation: masks use (source i, target j) indexing; weight and
bound tensors are target-major ``[regime, target, source, ...]`` because
the rollout kernels iterate targets in the outer loop.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, serialize


class GenerationError(RuntimeError):
    """Sampling could not satisfy a structural constraint within budget."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


@dataclass
class GenConfig:
    U: int = 3
    latent_dim: int = 4
    obs_dim: int = 4
    seq_len: int = 15
    n_sequences: int = 250
    batch_per_domain_seq: int = 32
    seed: int = 0
    noise_scale: float = 0.1
    # injected noise is unit-variance Student-t: heavy tails plus unequal
    # per-dimension scales make the conditional law direction-dependent, so
    # no latent rotation can reproduce it and component recovery is decided
    # by the data rather than by tie-breaking penalties
    noise_df: float = 6.0
    noise_spread: float = 1.6
    mixing_depth: int = 2
    leaky_slope: float = 0.2
    hidden_width: int = 16
    lossy_clamp: bool = True
    variability_mode: str = "distinct_masks"
    # share of label sequences drawn from (sticky chain, cyclic chain, iid uniform)
    chain_proportions: tuple = (1 / 3, 1 / 3, 1 / 3)
    cond_bound: float = 100.0


def validate_config(cfg: GenConfig) -> None:
    if cfg.U < 1:
        raise ConfigError("U must be at least 1")
    if cfg.latent_dim < 2:
        raise ConfigError("latent_dim must be at least 2 (sources need >=2 targets)")
    if cfg.obs_dim < cfg.latent_dim:
        raise ConfigError("obs_dim must be >= latent_dim for injective mixing")
    if cfg.seq_len < 2:
        raise ConfigError("seq_len must be at least 2 to form transition pairs")
    if cfg.n_sequences < 1 or cfg.batch_per_domain_seq < 1:
        raise ConfigError("n_sequences and batch_per_domain_seq must be positive")
    if cfg.mixing_depth < 0:
        raise ConfigError("mixing_depth must be non-negative")
    if not 0.0 < cfg.leaky_slope < 1.0:
        raise ConfigError("leaky_slope must lie in (0, 1)")
    if cfg.noise_scale <= 0:
        raise ConfigError("noise_scale must be positive")
    if cfg.noise_df <= 4:
        raise ConfigError("noise_df must exceed 4 (finite kurtosis)")
    if cfg.noise_spread < 1:
        raise ConfigError("noise_spread must be at least 1")
    if cfg.variability_mode not in ("distinct_masks", "identical_masks"):
        raise ConfigError(f"unknown variability_mode {cfg.variability_mode!r}")
    if len(cfg.chain_proportions) != 3 or min(cfg.chain_proportions) < 0:
        raise ConfigError("chain_proportions must be three non-negative weights")
    if sum(cfg.chain_proportions) <= 0:
        raise ConfigError("chain_proportions must not all be zero")
    if cfg.hidden_width < 1:
        raise ConfigError("hidden_width must be positive")
    if cfg.cond_bound <= 1:
        raise ConfigError("cond_bound must exceed 1")


@dataclass
class GroundTruth:
    """Generating system: transition subnets, clamps, and mixing stack."""

    masks: np.ndarray      # (U, n, n) int8, entry (i, j) = source i feeds target j
    W1: np.ndarray         # (U, n, n, H) target-major [u, j, i, h]
    b1: np.ndarray         # (U, n, H)
    W2: np.ndarray         # (U, n, H)
    b2: np.ndarray         # (U, n)
    lo: np.ndarray         # (U, n, n) target-major [u, j, i], -inf disables the clamp
    hi: np.ndarray         # (U, n, n) target-major, +inf disables the clamp
    mixing: np.ndarray     # (depth, obs_dim, obs_dim)
    noise_scales: np.ndarray  # (n,) per-dimension multipliers on noise_scale
    config: GenConfig


@dataclass
class Dataset:
    x: np.ndarray          # (B, T, obs_dim)
    z: np.ndarray          # (B, T, latent_dim), ground-truth latents
    domains: np.ndarray    # (B, T) int64 regime labels
    gt: GroundTruth
    chains: np.ndarray     # (2, U, U) label-process transition matrices
    config: GenConfig
    fingerprint: str = ""


# ---------------------------------------------------------------------------
# label process
# ---------------------------------------------------------------------------

def _row_stochastic(m: np.ndarray) -> np.ndarray:
    m = np.clip(m, 1e-12, None)
    return m / m.sum(axis=1, keepdims=True)


def _sample_chain(rng: np.random.Generator, P: np.ndarray, T: int) -> np.ndarray:
    U = P.shape[0]
    seq = np.empty(T, dtype=np.int64)
    state = int(rng.integers(U))
    for t in range(T):
        seq[t] = state
        state = int(rng.choice(U, p=P[state]))
    return seq


def sample_domain_sequences(cfg: GenConfig, rng: np.random.Generator):
    """Draw regime label sequences from a mixture of three processes.

    Returns ``(domains, chains)``: an (n_sequences, seq_len) int array and
    the two Markov matrices, stacked (sticky first, cyclic second). Retries
    until every regime label occurs at least once in the batch.
    """
    U, T, N = cfg.U, cfg.seq_len, cfg.n_sequences
    if N * T < U:
        raise GenerationError(f"{N} sequences of length {T} cannot cover {U} regimes")

    sticky = 0.7 * np.eye(U) + 0.3 * rng.dirichlet(np.ones(U), size=U)
    cyclic = 0.7 * np.roll(np.eye(U), 1, axis=1) + 0.3 * _row_stochastic(rng.uniform(size=(U, U)))
    chains = np.stack([sticky, cyclic])

    props = np.asarray(cfg.chain_proportions, dtype=np.float64)
    props = props / props.sum()
    counts = np.floor(props * N).astype(int)
    counts[0] += N - counts.sum()  # remainder goes to the sticky chain

    for _ in range(50):
        parts = []
        for _ in range(counts[0]):
            parts.append(_sample_chain(rng, sticky, T))
        for _ in range(counts[1]):
            parts.append(_sample_chain(rng, cyclic, T))
        if counts[2]:
            parts.append(rng.integers(0, U, size=(counts[2], T)))
        domains = np.vstack([p.reshape(-1, T) for p in parts]).astype(np.int64)
        if np.unique(domains).size == U:
            return domains, chains
    raise GenerationError("label sampling never covered all regimes (50 attempts)")


# ---------------------------------------------------------------------------
# transition system
# ---------------------------------------------------------------------------

def _sample_mask(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random 0/1 parent structure where each source has 0 or >=2 targets."""
    for _ in range(100):
        mask = np.zeros((n, n), dtype=np.int8)
        for i in range(n):
            if n >= 3:
                k = int(rng.choice([0, 2, 3], p=[0.2, 0.5, 0.3]))
            else:
                k = int(rng.choice([0, 2], p=[0.3, 0.7]))
            if k:
                mask[i, rng.choice(n, size=k, replace=False)] = 1
        if mask.sum() >= 2:
            return mask
    raise GenerationError("mask sampling kept producing empty structures")


def _sample_bounds(rng: np.random.Generator, mask: np.ndarray, base: float = 1.2):
    """Per-edge clamp bounds, target-major, with separated extreme children.

    For each source the child with the widest high-side bound must not also
    own the widest low-side bound; otherwise that child's saturation band
    would coincide with the all-children band and could not be told apart.
    """
    n = mask.shape[0]
    lo = np.full((n, n), -np.inf)
    hi = np.full((n, n), np.inf)
    for i in range(n):
        children = np.nonzero(mask[i])[0]
        if children.size == 0:
            continue
        ext_hi = base + rng.uniform(0.2, 0.6, size=children.size)
        ext_lo = base + rng.uniform(0.2, 0.6, size=children.size)
        if children.size >= 2 and ext_hi.argmax() == ext_lo.argmax():
            a = ext_lo.argmax()
            b = (a + 1) % children.size
            ext_lo[a], ext_lo[b] = ext_lo[b], ext_lo[a]
        for j, eh, el in zip(children, ext_hi, ext_lo):
            hi[j, i] = eh
            lo[j, i] = -el
    return lo, hi


def _sample_subnet(rng: np.random.Generator, parents: np.ndarray, n: int, H: int):
    """Weights for one target's subnet; magnitudes bounded away from zero."""
    W1 = np.zeros((n, H))
    for i in np.nonzero(parents)[0]:
        mag = rng.uniform(0.5, 1.5, size=H) / np.sqrt(max(parents.sum(), 1))
        W1[i] = mag * rng.choice([-1.0, 1.0], size=H)
    b1 = rng.normal(0.0, 0.3, size=H)
    # 1/sqrt(H) keeps one-step outputs O(1): strong enough that regimes
    # separate against the injected noise and states reach the clamp bands
    W2 = rng.uniform(0.5, 1.5, size=H) * rng.choice([-1.0, 1.0], size=H) / np.sqrt(H)
    b2 = rng.normal(0.0, 0.1)
    return W1, b1, W2, b2


def build_ground_truth(cfg: GenConfig, rng: np.random.Generator,
                       variability_mode: str | None = None) -> GroundTruth:
    """Sample a generating system whose Jacobian support equals its masks.

    ``distinct_masks`` draws pairwise different masks per regime (regimes
    are separable through structure alone); ``identical_masks`` shares one
    mask across regimes so only the map weights differ.
    """
    validate_config(cfg)
    mode = variability_mode or cfg.variability_mode
    if mode not in ("distinct_masks", "identical_masks"):
        raise ConfigError(f"unknown variability_mode {mode!r}")
    U, n, H = cfg.U, cfg.latent_dim, cfg.hidden_width

    if mode == "identical_masks":
        masks = np.repeat(_sample_mask(rng, n)[None], U, axis=0)
    else:
        masks = np.empty((U, n, n), dtype=np.int8)
        seen: set[bytes] = set()
        for u in range(U):
            for _ in range(200):
                m = _sample_mask(rng, n)
                if m.tobytes() not in seen:
                    break
            else:
                raise GenerationError("could not sample pairwise distinct masks")
            seen.add(m.tobytes())
            masks[u] = m

    W1 = np.zeros((U, n, n, H))
    b1 = np.zeros((U, n, H))
    W2 = np.zeros((U, n, H))
    b2 = np.zeros((U, n))
    lo = np.full((U, n, n), -np.inf)
    hi = np.full((U, n, n), np.inf)

    for u in range(U):
        if cfg.lossy_clamp:
            lo[u], hi[u] = _sample_bounds(rng, masks[u])
        for j in range(n):
            W1[u, j], b1[u, j], W2[u, j], b2[u, j] = _sample_subnet(
                rng, masks[u, :, j], n, H
            )

    # log-spaced per-dimension noise scales with max/min = noise_spread,
    # assigned to dimensions in random order
    exponents = np.linspace(-0.5, 0.5, n)
    scales = cfg.noise_spread ** exponents
    rng.shuffle(scales)

    gt = GroundTruth(masks, W1, b1, W2, b2, lo, hi,
                     _sample_mixing(rng, cfg, rng_attempts=1000), scales, cfg)
    _recheck_support(gt, rng)
    return gt


def _recheck_support(gt: GroundTruth, rng: np.random.Generator) -> None:
    """Resample subnets whose realized Jacobian support disagrees with the mask."""
    cfg = gt.config
    n = cfg.latent_dim
    points = rng.uniform(-1.1, 1.1, size=(100, n))
    for u in range(cfg.U):
        for _ in range(20):
            J = transition_jacobian(gt, u, points)          # (B, source, target)
            reach = np.abs(J).max(axis=0)
            support = (reach > 1e-6).astype(np.int8)
            bad = np.nonzero((support != gt.masks[u]).any(axis=0))[0]
            # also demand a clear margin on live edges so audits are stable
            weak = np.nonzero(
                ((reach < 1e-3) & (gt.masks[u] > 0)).any(axis=0)
            )[0]
            targets = np.union1d(bad, weak)
            if targets.size == 0:
                break
            for j in targets:
                gt.W1[u, j], gt.b1[u, j], gt.W2[u, j], gt.b2[u, j] = _sample_subnet(
                    rng, gt.masks[u, :, j], n, cfg.hidden_width
                )
        else:
            raise GenerationError(
                f"regime {u}: Jacobian support would not match its mask after 20 resamples"
            )


# ---------------------------------------------------------------------------
# transition map queries (used by the audits and the rollout)
# ---------------------------------------------------------------------------

def transition_apply(gt: GroundTruth, u: int, z: np.ndarray) -> np.ndarray:
    """Noise-free one-step map of regime ``u``; ``z`` is (n,) or (B, n)."""
    single = np.asarray(z).ndim == 1
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    zc = np.clip(z[:, None, :], gt.lo[u][None], gt.hi[u][None])        # (B, j, i)
    pre = np.einsum("bji,jih->bjh", zc, gt.W1[u]) + gt.b1[u][None]
    out = np.einsum("bjh,jh->bj", np.tanh(pre), gt.W2[u]) + gt.b2[u][None]
    return out[0] if single else out


def transition_jacobian(gt: GroundTruth, u: int, z: np.ndarray) -> np.ndarray:
    """Analytic Jacobian, entry (i, j) = d z'_j / d z_i; saturated edges are 0."""
    single = np.asarray(z).ndim == 1
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    zc = np.clip(z[:, None, :], gt.lo[u][None], gt.hi[u][None])
    pre = np.einsum("bji,jih->bjh", zc, gt.W1[u]) + gt.b1[u][None]
    sech2 = 1.0 - np.tanh(pre) ** 2
    inner = np.einsum("bjh,jih->bji", sech2 * gt.W2[u][None], gt.W1[u])
    active = (z[:, None, :] > gt.lo[u][None]) & (z[:, None, :] < gt.hi[u][None])
    J = np.swapaxes(inner * active, 1, 2)
    return J[0] if single else J


def _tanh_derivative_coeffs(order: int) -> np.ndarray:
    """Coefficients c with tanh^(order)(x) = sum_m c[m] * tanh(x)**m."""
    coeffs = np.zeros(2)
    coeffs[1] = 1.0
    for _ in range(order):
        nxt = np.zeros(len(coeffs) + 1)
        for m, cm in enumerate(coeffs):
            if cm and m:
                nxt[m - 1] += cm * m
                nxt[m + 1] -= cm * m
        coeffs = nxt
    return coeffs


def transition_partial(gt: GroundTruth, u: int, z: np.ndarray,
                       i: int, j: int, order: int = 1) -> float:
    """Exact d^order z'_j / d z_i^order at a single point ``z``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if not (gt.lo[u, j, i] < z[i] < gt.hi[u, j, i]):
        return 0.0
    zc = np.clip(z, gt.lo[u, j], gt.hi[u, j])
    pre = zc @ gt.W1[u, j] + gt.b1[u, j]                               # (H,)
    coeffs = _tanh_derivative_coeffs(order)
    t = np.tanh(pre)
    deriv = sum(c * t ** m for m, c in enumerate(coeffs) if c)
    return float(np.sum(gt.W2[u, j] * deriv * gt.W1[u, j, i] ** order))


# ---------------------------------------------------------------------------
# latent rollout and mixing
# ---------------------------------------------------------------------------

def sample_noise(gt: GroundTruth, rng: np.random.Generator,
                 size: tuple) -> np.ndarray:
    """Unit-variance Student-t innovations scaled per dimension.

    The trailing axis of ``size`` must be the latent dimension; each slot
    gets ``noise_scale * noise_scales[i]`` times a standardized t draw.
    """
    cfg = gt.config
    std = np.sqrt(cfg.noise_df / (cfg.noise_df - 2.0))
    draws = rng.standard_t(cfg.noise_df, size=size) / std
    return cfg.noise_scale * gt.noise_scales * draws


def generate_latents(gt: GroundTruth, domains: np.ndarray,
                     rng: np.random.Generator):
    """Roll latents for each label sequence, replicated per config batch size.

    The initial state is drawn fresh per replica and never stored; returned
    arrays cover t = 1..T. Returns ``(z, rep_domains)``.
    """
    cfg = gt.config
    domains = np.asarray(domains, dtype=np.int64)
    rep = np.repeat(domains, cfg.batch_per_domain_seq, axis=0)
    B, T = rep.shape
    n = cfg.latent_dim
    z0 = rng.normal(size=(B, n))
    noise = sample_noise(gt, rng, (B, T, n))
    z = _kernels.rollout(z0, rep, gt.W1, gt.b1, gt.W2, gt.b2, gt.lo, gt.hi, noise)
    return z, rep


def _sample_mixing(rng: np.random.Generator, cfg: GenConfig,
                   rng_attempts: int = 1000) -> np.ndarray:
    mats = np.empty((cfg.mixing_depth, cfg.obs_dim, cfg.obs_dim))
    for layer in range(cfg.mixing_depth):
        for _ in range(rng_attempts):
            A = rng.uniform(-1.0, 1.0, size=(cfg.obs_dim, cfg.obs_dim))
            if np.linalg.cond(A) < cfg.cond_bound:
                mats[layer] = A
                break
        else:
            raise GenerationError(
                f"no mixing matrix under condition bound {cfg.cond_bound} "
                f"in {rng_attempts} draws"
            )
    return mats


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _unleaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, x / slope)


def apply_mixing(gt: GroundTruth, z: np.ndarray) -> np.ndarray:
    """Map latents to observations; depth 0 is plain zero-padding."""
    cfg = gt.config
    x = np.asarray(z, dtype=np.float64)
    if cfg.obs_dim > cfg.latent_dim:
        pad = np.zeros(x.shape[:-1] + (cfg.obs_dim - cfg.latent_dim,))
        x = np.concatenate([x, pad], axis=-1)
    for A in gt.mixing:
        x = _leaky(x, cfg.leaky_slope) @ A
    return x


def invert_mixing(gt: GroundTruth, x: np.ndarray) -> np.ndarray:
    """Exact layer-by-layer inverse of :func:`apply_mixing`."""
    cfg = gt.config
    y = np.asarray(x, dtype=np.float64)
    flat = y.reshape(-1, y.shape[-1])
    for A in gt.mixing[::-1]:
        flat = np.linalg.solve(A.T, flat.T).T
        flat = _unleaky(flat, cfg.leaky_slope)
    return flat.reshape(y.shape)[..., : cfg.latent_dim]


def verify_mixing_invertible(gt: GroundTruth, z: np.ndarray) -> float:
    """Max abs round-trip error of mix-then-invert on the given latents."""
    z = np.asarray(z, dtype=np.float64)
    back = invert_mixing(gt, apply_mixing(gt, z))
    return float(np.abs(back - z).max())


# ---------------------------------------------------------------------------
# end-to-end generation and the on-disk container
# ---------------------------------------------------------------------------

def _f32(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype="<f4")


def _config_meta(cfg: GenConfig) -> dict:
    meta = dataclasses.asdict(cfg)
    meta["chain_proportions"] = list(cfg.chain_proportions)
    return meta


def _gt_payload(gt: GroundTruth) -> dict[str, np.ndarray]:
    return {
        "masks": _f32(gt.masks),
        "W1": _f32(gt.W1),
        "b1": _f32(gt.b1),
        "W2": _f32(gt.W2),
        "b2": _f32(gt.b2),
        "lo": _f32(gt.lo),
        "hi": _f32(gt.hi),
        "mixing": _f32(gt.mixing),
        "noise_scales": _f32(gt.noise_scales),
    }


def dataset_fingerprint(ds: Dataset) -> str:
    """Semantic fingerprint: config, labels, and system parameters.

    Rolled latents and observations are excluded on purpose so the value
    does not depend on which rollout backend produced them.
    """
    payload = _gt_payload(ds.gt)
    arrays = [_f32(ds.domains), _f32(ds.chains)]
    arrays += [payload[k] for k in sorted(payload)]
    return serialize.hash_arrays(_config_meta(ds.config), arrays)


def generate_dataset(cfg: GenConfig) -> Dataset:
    """Build system, sample labels, roll latents, mix, and fingerprint."""
    validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    gt = build_ground_truth(cfg, rng)
    domains, chains = sample_domain_sequences(cfg, rng)
    z, rep_domains = generate_latents(gt, domains, rng)
    x = apply_mixing(gt, z)
    ds = Dataset(x=x, z=z, domains=rep_domains, gt=gt, chains=chains, config=cfg)
    ds.fingerprint = dataset_fingerprint(ds)
    return ds


def serialize_dataset(path, ds: Dataset) -> None:
    arrays = {
        "x": _f32(ds.x),
        "z": _f32(ds.z),
        "domains": _f32(ds.domains),
        "chains": _f32(ds.chains),
        **_gt_payload(ds.gt),
    }
    meta = {
        "config": _config_meta(ds.config),
        "fingerprint": ds.fingerprint,
    }
    serialize.write_container(path, "dataset", meta, arrays)


def load_dataset(path) -> Dataset:
    kind, meta, arrays = serialize.read_container(path)
    if kind != "dataset":
        raise serialize.ContainerError(f"{path}: expected a dataset container, got {kind!r}")
    raw = dict(meta["config"])
    raw["chain_proportions"] = tuple(raw["chain_proportions"])
    cfg = GenConfig(**raw)
    gt = GroundTruth(
        masks=arrays["masks"].astype(np.int8),
        W1=arrays["W1"].astype(np.float64),
        b1=arrays["b1"].astype(np.float64),
        W2=arrays["W2"].astype(np.float64),
        b2=arrays["b2"].astype(np.float64),
        lo=arrays["lo"].astype(np.float64),
        hi=arrays["hi"].astype(np.float64),
        mixing=arrays["mixing"].astype(np.float64),
        noise_scales=arrays["noise_scales"].astype(np.float64),
        config=cfg,
    )
    ds = Dataset(
        x=arrays["x"].astype(np.float64),
        z=arrays["z"].astype(np.float64),
        domains=arrays["domains"].astype(np.int64),
        gt=gt,
        chains=arrays["chains"].astype(np.float64),
        config=cfg,
        fingerprint=meta["fingerprint"],
    )
    if dataset_fingerprint(ds) != ds.fingerprint:
        warnings.warn(f"{path}: stored fingerprint does not match recomputed value")
    return ds
