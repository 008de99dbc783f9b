"""Sequence VAE with a regime selector and per-regime sparse transitions.

The estimator carries five parameter groups:

* an encoder mapping observations to per-dim Gaussian posteriors,
* a decoder mapping latent samples back to observation space,
* a selector ("gate") that classifies each consecutive observation pair
  into one of the label slots, trained end to end through a
  Gumbel-Softmax relaxation with a straight-through hard mode,
* a bank of per-label forward transition nets used for one-step latent
  prediction (their first-layer weights carry the sparsity penalty),
* per-dimension inverse maps that pull a latent target back to its noise
  given the previous latent state and the selected label; the transition
  prior evaluates the extracted noise under a standard normal plus the
  log absolute derivative of the inverse map in its target coordinate.

That derivative is assembled symbolically from the same graph nodes as
the forward pass (a tangent propagation through the one-hidden-layer
inverse net), so its parameter gradients are exact rather than
finite-differenced. Time step 1 has no predecessor and is scored under a
learned unconditional Gaussian instead.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import engine, networks, serialize
from .engine import Var

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelConfig:
    obs_dim: int
    latent_dim: int
    n_domains: int                  # label budget; may exceed the true count
    enc_hidden: tuple = (64, 64)
    dec_hidden: tuple = (64, 64)
    gate_hidden: tuple = (64, 64)
    trans_width: int = 16
    prior_width: int = 16
    prior_depth: int = 1            # 0 keeps the inverse maps affine
    gate_input: str = "raw"         # "raw" observation pairs or "encoded" means
    derivative_floor: float = 1e-8
    logvar_limit: float = 8.0       # soft clamp half-range for posterior logvars
    seed: int = 0


def validate_model_config(cfg: ModelConfig) -> None:
    from .datagen import ConfigError

    if cfg.obs_dim < 1 or cfg.latent_dim < 1:
        raise ConfigError("obs_dim and latent_dim must be positive")
    if cfg.n_domains < 1:
        raise ConfigError("n_domains must be positive")
    if cfg.prior_depth not in (0, 1):
        raise ConfigError("prior_depth must be 0 or 1")
    if cfg.gate_input not in ("raw", "encoded"):
        raise ConfigError(f"unknown gate_input {cfg.gate_input!r}")
    if cfg.trans_width < 1 or (cfg.prior_depth == 1 and cfg.prior_width < 1):
        raise ConfigError("network widths must be positive")
    if cfg.derivative_floor <= 0:
        raise ConfigError("derivative_floor must be positive")


@dataclass
class ModelState:
    config: ModelConfig
    params: dict


def init_model(cfg: ModelConfig, rng: np.random.Generator | None = None) -> ModelState:
    validate_model_config(cfg)
    rng = rng or np.random.default_rng(cfg.seed)
    n, d, U = cfg.latent_dim, cfg.obs_dim, cfg.n_domains

    gate_in = 2 * (d if cfg.gate_input == "raw" else n)
    prior_in = n + 1
    gate = networks.init_mlp(rng, (gate_in, *cfg.gate_hidden, U))
    # uniform initial label distribution: no slot starts with an advantage
    gate[-1]["W"].value[:] = 0.0
    gate[-1]["b"].value[:] = 0.0
    params = {
        "enc": networks.init_mlp(rng, (d, *cfg.enc_hidden, 2 * n)),
        "dec": networks.init_mlp(rng, (n, *cfg.dec_hidden, d)),
        "gate": gate,
        "trans": [
            networks.init_mlp(rng, (n, cfg.trans_width, n)) for _ in range(U)
        ],
        # inverse maps: one net per (label slot, target dimension)
        "prior": [
            [
                {
                    "layers": networks.init_mlp(
                        rng,
                        (prior_in, cfg.prior_width, 1) if cfg.prior_depth else (prior_in, 1),
                    ),
                    "skip": engine.param(np.array(1.0)),
                }
                for _ in range(n)
            ]
            for _ in range(U)
        ],
        "init": {
            "mu": engine.param(np.zeros(n)),
            "logvar": engine.param(np.zeros(n)),
        },
        # learned observation noise: keeps the reconstruction term in nats,
        # commensurate with the divergence, and self-anneals its weight
        "obs": {"logvar": engine.param(np.zeros(d))},
    }
    return ModelState(config=cfg, params=params)


def parameters(state: ModelState) -> list[Var]:
    return engine.collect_params(state.params)


# ---------------------------------------------------------------------------
# forward components
# ---------------------------------------------------------------------------

def encode(state: ModelState, x: np.ndarray):
    """Posterior parameters for rows of observations; returns (mu, logvar)."""
    cfg = state.config
    out = networks.mlp_forward(state.params["enc"], np.atleast_2d(x))
    n = cfg.latent_dim
    mu = out[:, :n]
    # soft clamp keeps exp(logvar) in a sane range without a gradient cliff
    c = cfg.logvar_limit
    logvar = engine.tanh(out[:, n:] * (1.0 / c)) * c
    return mu, logvar


def reparameterize(mu: Var, logvar: Var, rng: np.random.Generator) -> Var:
    eps = rng.normal(size=mu.shape)
    return mu + engine.exp(logvar * 0.5) * eps


def decode(state: ModelState, z) -> Var:
    return networks.mlp_forward(state.params["dec"], z)


def reconstruction_nll(state: ModelState, x_rows: np.ndarray, xhat: Var) -> Var:
    """Per-row Gaussian negative log-likelihood of the observations.

    Uses the learned per-dimension observation log-variance, so the term
    shares units (nats per row) with the divergence term and tightens on
    its own as reconstructions improve. The log-variance is soft-clamped
    like the posterior's.
    """
    c = state.config.logvar_limit
    logvar = engine.tanh(state.params["obs"]["logvar"] * (1.0 / c)) * c
    return -1.0 * gaussian_log_density(x_rows, xhat, logvar)


def gate_logits(state: ModelState, pair_features: np.ndarray | Var) -> Var:
    """Label logits for rows of concatenated (previous, current) features."""
    return networks.mlp_forward(state.params["gate"], pair_features)


def gumbel_softmax(logits: Var, rng: np.random.Generator, tau: float = 1.0,
                   hard: bool = False) -> Var:
    """Relaxed one-hot sample; ``hard`` switches to straight-through."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    u = rng.uniform(size=logits.shape)
    gumbel = -np.log(-np.log(u + 1e-20) + 1e-20)
    y = engine.softmax((logits + gumbel) * (1.0 / tau), axis=-1)
    return engine.st_hard_onehot(y) if hard else y


def transition_predict(state: ModelState, z_prev, weights) -> Var:
    """One-step prediction: label-weighted blend of the per-label nets.

    ``weights`` rows are softmax or straight-through outputs; a one-hot row
    selects a single net, a soft row takes a convex combination.
    """
    weights = engine.as_var(weights)
    z_prev = engine.as_var(z_prev)
    out = None
    for u, net in enumerate(state.params["trans"]):
        pred = networks.mlp_forward(net, z_prev)
        term = pred * weights[:, u : u + 1]
        out = term if out is None else out + term
    return out


def transition_expected_mse(state: ModelState, z_prev, z_t, weights) -> Var:
    """Label-weighted one-step error: sum_u w_u * ||f_u(z_prev) - z_t||^2.

    Linear in the selector weights, like the prior mixture, so a soft row
    gains nothing from hedging between label slots; contrast with the MSE
    of the blended prediction, which a mixture can game. Row errors are
    averaged over rows and dimensions.

    All label nets are evaluated in one broadcast matmul chain; the bank
    shares a single hidden layer shape by construction.
    """
    cfg = state.config
    weights = engine.as_var(weights)
    z_prev = engine.as_var(z_prev)
    z_t = engine.as_var(z_t)
    U, n, H = cfg.n_domains, cfg.latent_dim, cfg.trans_width
    bank = state.params["trans"]
    W1 = engine.reshape(engine.concat([net[0]["W"] for net in bank], axis=0), (U, n, H))
    b1 = engine.reshape(engine.concat([net[0]["b"] for net in bank], axis=0), (U, 1, H))
    W2 = engine.reshape(engine.concat([net[1]["W"] for net in bank], axis=0), (U, H, n))
    b2 = engine.reshape(engine.concat([net[1]["b"] for net in bank], axis=0), (U, 1, n))
    h = engine.tanh(z_prev @ W1 + b1)          # (U, R, H)
    pred = h @ W2 + b2                         # (U, R, n)
    diff = pred - z_t
    err = engine.vsum(diff * diff, axis=-1)    # (U, R)
    total = engine.vsum(err * engine.transpose(weights), axis=0)
    return engine.vmean(total) * (1.0 / n)


def transition_input_l2(state: ModelState) -> Var:
    """Sum of squared first-layer transition weights: the sparsity surrogate.

    Zeroing column i of a first-layer weight matrix removes source i from
    that label's map, so this is the differentiable stand-in for support
    size.
    """
    total = None
    for net in state.params["trans"]:
        s = engine.vsum(net[0]["W"] * net[0]["W"])
        total = s if total is None else total + s
    return total


def gaussian_log_density(z, mu, logvar) -> Var:
    """Row-wise diagonal Gaussian log density, summed over dimensions."""
    z = engine.as_var(z)
    mu = engine.as_var(mu)
    logvar = engine.as_var(logvar)
    diff = z - mu
    quad = diff * diff * engine.exp(-1.0 * logvar)
    return engine.vsum(quad + logvar + LOG_2PI, axis=-1) * -0.5


def initial_log_density(state: ModelState, z1) -> Var:
    p = state.params["init"]
    return gaussian_log_density(z1, p["mu"], p["logvar"])


def label_prior_log_density(state: ModelState, u: int, z_t, z_prev) -> Var:
    """Exact transition prior of one label slot (rows -> scalars).

    For each dimension i the slot's inverse net maps (z_prev, z_{t,i}) to
    a noise estimate e_i; the density is sum_i log N(e_i; 0, 1) + log
    |d e_i / d z_{t,i}|, with the derivative assembled symbolically and
    floored at ``derivative_floor`` before the log.
    """
    cfg = state.config
    z_t = engine.as_var(z_t)
    z_prev = engine.as_var(z_prev)
    n = cfg.latent_dim
    slot = n  # index of the target coordinate inside the input vector

    total = None
    for i, net in enumerate(state.params["prior"][u]):
        zi = z_t[:, i : i + 1]
        v = engine.concat([z_prev, zi], axis=1)
        layers = net["layers"]
        c = net["skip"]
        if cfg.prior_depth == 1:
            h = engine.tanh(v @ layers[0]["W"] + layers[0]["b"])
            out = h @ layers[1]["W"] + layers[1]["b"]
            # tangent of the net in the target coordinate, from the same nodes
            w_slot = layers[0]["W"][slot]
            th = (1.0 - h * h) * w_slot
            d_net = th @ layers[1]["W"]
        else:
            out = v @ layers[0]["W"] + layers[0]["b"]
            d_net = engine.reshape(layers[0]["W"][slot], (1, 1))
        eps = out[:, 0] + c * z_t[:, i]
        deriv = d_net[:, 0] + c
        log_n = (eps * eps + LOG_2PI) * -0.5
        log_det = engine.log_abs_floor(deriv, cfg.derivative_floor)
        term = log_n + log_det
        total = term if total is None else total + term
    return total


def label_scores(state: ModelState, z_t, z_prev) -> Var:
    """Transition-prior log densities of every label slot, shape (U, R).

    Batched equivalent of stacking :func:`label_prior_log_density` over
    slots: all U * n inverse nets run as one broadcast matmul chain.
    """
    cfg = state.config
    z_t = engine.as_var(z_t)
    z_prev = engine.as_var(z_prev)
    U, n = cfg.n_domains, cfg.latent_dim
    H = cfg.prior_width if cfg.prior_depth == 1 else 1
    in_dim = n + 1
    nets = [net for bank in state.params["prior"] for net in bank]

    W1 = engine.reshape(
        engine.concat([net["layers"][0]["W"] for net in nets], axis=0),
        (U, n, in_dim, H),
    )
    b1 = engine.reshape(
        engine.concat([net["layers"][0]["b"] for net in nets], axis=0),
        (U, n, 1, H),
    )
    skip = engine.reshape(
        engine.concat([engine.reshape(net["skip"], (1,)) for net in nets], axis=0),
        (U, n, 1),
    )

    # rows of the per-dim inverse inputs: (n, R, n+1), broadcast across U
    vs = [engine.concat([z_prev, z_t[:, i : i + 1]], axis=1) for i in range(n)]
    R = z_t.shape[0]
    v = engine.reshape(engine.concat(vs, axis=0), (n, R, in_dim))
    z_cols = engine.transpose(z_t)  # (n, R), broadcasts against (U, n, R)

    if cfg.prior_depth == 1:
        W2 = engine.reshape(
            engine.concat([net["layers"][1]["W"] for net in nets], axis=0),
            (U, n, H, 1),
        )
        b2 = engine.reshape(
            engine.concat([net["layers"][1]["b"] for net in nets], axis=0),
            (U, n, 1, 1),
        )
        h = engine.tanh(v @ W1 + b1)                     # (U, n, R, H)
        out = engine.reshape(h @ W2 + b2, (U, n, R))
        w_slot = engine.reshape(W1[:, :, n, :], (U, n, 1, H))
        d_net = engine.reshape(((1.0 - h * h) * w_slot) @ W2, (U, n, R))
    else:
        out = engine.reshape(v @ W1 + b1, (U, n, R))
        d_net = engine.reshape(W1[:, :, n, :], (U, n, 1))

    eps = out + skip * z_cols                            # (U, n, R)
    deriv = d_net + skip
    log_n = (eps * eps + LOG_2PI) * -0.5
    log_det = engine.log_abs_floor(deriv, cfg.derivative_floor)
    return engine.vsum(log_n + log_det, axis=1)          # (U, R)


def prior_log_density(state: ModelState, z_t, z_prev, weights) -> Var:
    """Label-weighted transition prior: sum_u w_u * log p_u(z_t | z_prev).

    A one-hot row scores its single selected slot; relaxed rows take the
    expectation over the selector, so the gate receives each slot's
    goodness of fit as its gradient.
    """
    weights = engine.as_var(weights)
    scores = label_scores(state, z_t, z_prev)
    return engine.vsum(scores * engine.transpose(weights), axis=0)


# ---------------------------------------------------------------------------
# label-slot manipulations
# ---------------------------------------------------------------------------

def permute_domains(state: ModelState, perm) -> ModelState:
    """Relabel the slots: permute the bank, gate outputs, and prior inputs.

    ``perm[new_slot] = old_slot``. The returned state is behaviorally
    identical up to the relabeling, which the tests use to confirm that
    training objectives are label-symmetric.
    """
    perm = np.asarray(perm, dtype=np.int64)
    cfg = state.config
    U = cfg.n_domains
    if sorted(perm.tolist()) != list(range(U)):
        raise ValueError("perm must be a permutation of the label slots")
    clone = _clone_state(state)

    clone.params["trans"] = [clone.params["trans"][old] for old in perm]
    clone.params["prior"] = [clone.params["prior"][old] for old in perm]
    # gate final layer: new logit column ordering
    final = clone.params["gate"][-1]
    final["W"].value = final["W"].value[:, perm]
    final["b"].value = final["b"].value[perm]
    return clone


def merge_equivalent_domains(state: ModelState, probes: np.ndarray | None = None,
                             tol: float = 1e-3):
    """Group label slots whose transition nets act identically on probes.

    With a label budget above the true count, surplus slots either go
    unused or duplicate a regime; evaluation should treat duplicates as
    one label. Returns ``(groups, remap)`` where ``remap[u]`` is the
    canonical slot for ``u``.
    """
    cfg = state.config
    if probes is None:
        probes = np.random.default_rng(0).normal(size=(256, cfg.latent_dim))
    outs = []
    for net in state.params["trans"]:
        outs.append(networks.mlp_forward(net, probes).value)
    U = cfg.n_domains
    remap = np.arange(U)
    for u in range(U):
        for v in range(u):
            if remap[v] == v and np.max(np.abs(outs[u] - outs[v])) < tol:
                remap[u] = v
                break
    groups: dict = {}
    for u in range(U):
        groups.setdefault(int(remap[u]), []).append(u)
    return list(groups.values()), remap


# ---------------------------------------------------------------------------
# parameter flattening and checkpoints
# ---------------------------------------------------------------------------

def _walk(tree, path=""):
    if isinstance(tree, Var):
        yield path, tree
    elif isinstance(tree, dict):
        for key in sorted(tree):
            yield from _walk(tree[key], f"{path}.{key}" if path else str(key))
    elif isinstance(tree, (list, tuple)):
        for idx, item in enumerate(tree):
            yield from _walk(item, f"{path}.{idx}" if path else str(idx))


def named_parameters(state: ModelState) -> dict[str, Var]:
    return dict(_walk(state.params))


def state_arrays(state: ModelState) -> dict[str, np.ndarray]:
    return {name: var.value.copy() for name, var in named_parameters(state).items()}


def load_state_arrays(state: ModelState, arrays: dict[str, np.ndarray]) -> None:
    named = named_parameters(state)
    missing = set(named) - set(arrays)
    surplus = set(arrays) - set(named)
    if missing or surplus:
        raise serialize.ContainerError(
            f"parameter mismatch: missing {sorted(missing)[:3]}, surplus {sorted(surplus)[:3]}"
        )
    for name, var in named.items():
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != var.value.shape:
            raise serialize.ContainerError(
                f"{name}: shape {arr.shape} does not match {var.value.shape}"
            )
        var.value = arr.copy()


def _clone_state(state: ModelState) -> ModelState:
    fresh = init_model(state.config, np.random.default_rng(0))
    load_state_arrays(fresh, state_arrays(state))
    return fresh


def model_config_meta(cfg: ModelConfig) -> dict:
    meta = dataclasses.asdict(cfg)
    for key in ("enc_hidden", "dec_hidden", "gate_hidden"):
        meta[key] = list(meta[key])
    return meta


def model_config_from_meta(meta: dict) -> ModelConfig:
    raw = dict(meta)
    for key in ("enc_hidden", "dec_hidden", "gate_hidden"):
        raw[key] = tuple(raw[key])
    return ModelConfig(**raw)
