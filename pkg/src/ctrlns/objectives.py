"""Training objectives, optimizer, loop, evaluation, checkpoints.

The total loss combines four terms, each reported separately so tests
can hold the combination to its definition:

* ``recon``: per-row Gaussian negative log-likelihood of the
  observations under a learned per-dimension noise level;
* ``kld``: sampled divergence between the encoding posterior and the
  latent prior, i.e. the per-row mean of log q(z|x) - log p(z), where
  rows at t = 1 use the learned unconditional prior and later rows use
  the label-conditioned transition prior;
* ``trans``: expected one-step prediction error of the per-label
  forward transition nets under the selector weights;
* ``sparse``: squared magnitude of the banks' input-facing weights.

``recon`` and ``kld`` share units (nats per row), so their unweighted
sum is a proper evidence bound.

Label selection is sampled through a Gumbel-Softmax whose temperature
decays exponentially over the first part of training, after which the
straight-through hard mode is used. Optimization is AdamW with decoupled
weight decay.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import engine, metrics, model, serialize
from .datagen import ConfigError


class NumericError(RuntimeError):
    """A non-finite value surfaced during training."""


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 64
    epochs: int = 60
    lambda_sparse: float = 1e-4
    w_recon: float = 1.0
    w_kld: float = 1.0
    w_trans: float = 1.0
    w_balance: float = 0.0          # label-usage entropy bonus against collapse
    weight_decay: float = 1e-4
    tau_start: float = 1.0
    tau_end: float = 0.1
    tau_anneal_frac: float = 0.5
    # sample hard one-hot labels from step one (straight-through backward);
    # False delays hard sampling until the anneal finishes, which lets the
    # per-label nets homogenize and the selector stall
    hard_from_start: bool = True
    stop_grad_targets: bool = False
    eval_every: int = 1
    seed: int = 0


def validate_train_config(cfg: TrainConfig) -> None:
    if cfg.lr <= 0 or cfg.batch_size < 1 or cfg.epochs < 1:
        raise ConfigError("lr, batch_size and epochs must be positive")
    if cfg.lambda_sparse < 0 or cfg.weight_decay < 0:
        raise ConfigError("penalty strengths must be non-negative")
    if not (0 < cfg.tau_end <= cfg.tau_start):
        raise ConfigError("need 0 < tau_end <= tau_start")
    if not 0 < cfg.tau_anneal_frac <= 1:
        raise ConfigError("tau_anneal_frac must lie in (0, 1]")
    if cfg.eval_every < 1:
        raise ConfigError("eval_every must be positive")


@dataclass
class LossBreakdown:
    recon: float
    kld: float
    trans: float
    sparse: float
    total: float
    balance: float = 0.0

    def combine(self, cfg: TrainConfig) -> float:
        return (cfg.w_recon * self.recon + cfg.w_kld * self.kld
                + cfg.w_trans * self.trans + cfg.lambda_sparse * self.sparse
                + cfg.w_balance * self.balance)


def _pair_indices(B: int, T: int):
    rows = np.arange(B * T)
    curr = rows[rows % T != 0]
    first = rows[rows % T == 0]
    return curr, curr - 1, first


def compute_losses(state: model.ModelState, x: np.ndarray,
                   rng: np.random.Generator, cfg: TrainConfig,
                   tau: float = 1.0, hard: bool = False,
                   sample_labels: bool = True):
    """Build the loss graph for a batch of sequences (B, T, obs).

    Returns ``(total Var, LossBreakdown, aux)`` where ``aux`` carries the
    label weights and logits for monitoring. With ``sample_labels=False``
    the selector output is its deterministic hard argmax (used by
    evaluation paths).
    """
    B, T, d = x.shape
    xf = x.reshape(B * T, d)
    mu, logvar = model.encode(state, xf)
    z = model.reparameterize(mu, logvar, rng)

    xhat = model.decode(state, z)
    recon = engine.vmean(model.reconstruction_nll(state, xf, xhat))

    curr, prev, first = _pair_indices(B, T)
    z_curr = engine.take_rows(z, curr)
    z_prev = engine.take_rows(z, prev)

    if state.config.gate_input == "raw":
        feats = np.concatenate([xf[prev], xf[curr]], axis=1)
    else:
        feats = engine.concat(
            [engine.take_rows(mu, prev), engine.take_rows(mu, curr)], axis=1
        )
    logits = model.gate_logits(state, feats)
    if sample_labels:
        weights = model.gumbel_softmax(logits, rng, tau=tau, hard=hard)
    else:
        weights = engine.st_hard_onehot(engine.softmax(logits, axis=-1))

    log_q = model.gaussian_log_density(z, mu, logvar)
    log_p_steps = model.prior_log_density(state, z_curr, z_prev, weights)
    log_p_first = model.initial_log_density(state, engine.take_rows(z, first))
    kld = (engine.vsum(log_q) - engine.vsum(log_p_steps) - engine.vsum(log_p_first)) * (
        1.0 / (B * T)
    )

    if cfg.stop_grad_targets:
        trans = model.transition_expected_mse(
            state, engine.stop_grad(z_prev), engine.stop_grad(z_curr), weights
        )
    else:
        trans = model.transition_expected_mse(state, z_prev, z_curr, weights)

    sparse = model.transition_input_l2(state)

    total = (cfg.w_recon * recon + cfg.w_kld * kld + cfg.w_trans * trans
             + cfg.lambda_sparse * sparse)
    balance_val = 0.0
    if cfg.w_balance:
        # negative entropy of mean label usage; pushing it down spreads the
        # selector across slots instead of letting one absorb everything
        mean_use = engine.vmean(weights, axis=0)
        balance = engine.vsum(mean_use * engine.log(mean_use + 1e-12))
        total = total + cfg.w_balance * balance
        balance_val = float(balance.value)
    breakdown = LossBreakdown(
        recon=float(recon.value),
        kld=float(kld.value),
        trans=float(trans.value),
        sparse=float(sparse.value),
        total=float(total.value),
        balance=balance_val,
    )
    aux = {"logits": logits.value, "weights": weights.value,
           "pair_rows": curr, "mu": mu.value,
           "recon_mse": float(np.mean((xhat.value - xf) ** 2))}
    return total, breakdown, aux


def elbo(state: model.ModelState, x: np.ndarray, rng: np.random.Generator,
         cfg: TrainConfig | None = None) -> float:
    """Evidence bound estimate: negative reconstruction minus divergence."""
    cfg = cfg or TrainConfig()
    _, breakdown, _ = compute_losses(state, x, rng, cfg, sample_labels=False)
    return -(breakdown.recon + breakdown.kld)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay over a fixed parameter list."""

    def __init__(self, params: list[engine.Var], lr: float,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            p.value = p.value - self.lr * (update + self.weight_decay * p.value)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for k in range(len(self.params)):
            out[f"m.{k}"] = self.m[k].copy()
            out[f"v.{k}"] = self.v[k].copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        for k in range(len(self.params)):
            self.m[k] = np.asarray(arrays[f"m.{k}"], dtype=np.float64).copy()
            self.v[k] = np.asarray(arrays[f"v.{k}"], dtype=np.float64).copy()


# ---------------------------------------------------------------------------
# schedule and loop
# ---------------------------------------------------------------------------

def tau_schedule(step: int, total_steps: int, cfg: TrainConfig):
    """Exponential decay to ``tau_end`` over the anneal fraction, then hard."""
    s_anneal = max(1, int(round(cfg.tau_anneal_frac * total_steps)))
    if step >= s_anneal:
        return cfg.tau_end, True
    frac = step / s_anneal
    tau = cfg.tau_start * (cfg.tau_end / cfg.tau_start) ** frac
    return float(tau), False


@dataclass
class TrainResult:
    state: model.ModelState
    optimizer: AdamW
    history: dict = field(default_factory=dict)


def _empty_history() -> dict:
    return {"epoch": [], "recon": [], "kld": [], "trans": [], "sparse": [],
            "total": [], "tau": [], "hard": [], "eval": []}


def train(state: model.ModelState, x: np.ndarray, cfg: TrainConfig,
          eval_hook=None, optimizer: AdamW | None = None,
          history: dict | None = None, start_epoch: int = 0,
          rng: np.random.Generator | None = None,
          stop_after: int | None = None) -> TrainResult:
    """Minibatch training over sequences; resumable mid-run.

    ``eval_hook(state, epoch) -> dict`` runs every ``eval_every`` epochs
    and its output lands in ``history["eval"]``. Non-finite losses abort
    with :class:`NumericError`. ``stop_after`` halts early while keeping
    the full schedule horizon, so a checkpoint written there and resumed
    with the saved optimizer, history, start epoch and generator continues
    the original trajectory exactly.
    """
    validate_train_config(cfg)
    B = x.shape[0]
    params = model.parameters(state)
    optimizer = optimizer or AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = history if history is not None else _empty_history()
    rng = rng or np.random.default_rng(cfg.seed)

    steps_per_epoch = int(np.ceil(B / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    end_epoch = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)

    for epoch in range(start_epoch, end_epoch):
        order = rng.permutation(B)
        sums = np.zeros(5)
        tau = cfg.tau_end
        hard = True
        for s in range(steps_per_epoch):
            rows = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            tau, hard = tau_schedule(epoch * steps_per_epoch + s, total_steps, cfg)
            total, br, _ = compute_losses(
                state, x[rows], rng, cfg, tau=tau,
                hard=hard or cfg.hard_from_start,
            )
            if not np.isfinite(br.total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}: {dataclasses.asdict(br)}"
                )
            optimizer.zero_grad()
            engine.backward(total)
            optimizer.step()
            sums += (br.recon, br.kld, br.trans, br.sparse, br.total)

        means = sums / steps_per_epoch
        history["epoch"].append(epoch)
        for key, val in zip(("recon", "kld", "trans", "sparse", "total"), means):
            history[key].append(float(val))
        history["tau"].append(float(tau))
        history["hard"].append(bool(hard))
        if eval_hook is not None and (epoch % cfg.eval_every == 0
                                      or epoch == cfg.epochs - 1):
            history["eval"].append({"epoch": epoch, **eval_hook(state, epoch)})

    return TrainResult(state=state, optimizer=optimizer, history=history)


# ---------------------------------------------------------------------------
# evaluation against ground truth
# ---------------------------------------------------------------------------

def predict_domains(state: model.ModelState, x: np.ndarray) -> np.ndarray:
    """Hard label per consecutive pair: (B, T) -> (B, T-1) argmax logits."""
    B, T, d = x.shape
    xf = x.reshape(B * T, d)
    curr, prev, _ = _pair_indices(B, T)
    if state.config.gate_input == "raw":
        feats = np.concatenate([xf[prev], xf[curr]], axis=1)
    else:
        mu, _ = model.encode(state, xf)
        feats = np.concatenate([mu.value[prev], mu.value[curr]], axis=1)
    logits = model.gate_logits(state, feats)
    return logits.value.argmax(axis=-1).reshape(B, T - 1)


def evaluate(state: model.ModelState, x: np.ndarray, z_true: np.ndarray,
             domains: np.ndarray) -> dict:
    """Recovery scores of a fitted model against generator ground truth."""
    B, T, d = x.shape
    mu, _ = model.encode(state, x.reshape(B * T, d))
    z_est = mu.value
    z_flat = z_true.reshape(B * T, -1)
    spearman = metrics.mcc(z_flat, z_est, "spearman")
    pearson = metrics.mcc(z_flat, z_est, "pearson")
    pred = predict_domains(state, x)
    acc = metrics.domain_accuracy(domains[:, 1:].ravel(), pred.ravel())
    return {
        "mcc_spearman": spearman.value,
        "mcc_pearson": pearson.value,
        "domain_acc": acc.value,
        "mcc_per_component": spearman.per_component.tolist(),
    }


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, state: model.ModelState, optimizer: AdamW,
                    cfg: TrainConfig, epoch: int, history: dict,
                    rng: np.random.Generator) -> None:
    """Write a resumable snapshot: parameters, moments, schedule position.

    Arrays are stored at full precision; a resumed run must continue the
    original trajectory, so nothing may be rounded.
    """
    arrays = {f"param.{k}": v for k, v in model.state_arrays(state).items()}
    arrays.update({f"opt.{k}": v for k, v in optimizer.state_arrays().items()})
    meta = {
        "model_config": model.model_config_meta(state.config),
        "train_config": dataclasses.asdict(cfg),
        "epoch": epoch,
        "history": history,
        "rng_state": _encode_rng(rng),
    }
    serialize.write_container(path, "checkpoint", meta, arrays)


def load_checkpoint(path):
    """Read a snapshot; returns (state, optimizer, cfg, epoch, history, rng)."""
    kind, meta, arrays = serialize.read_container(path)
    if kind != "checkpoint":
        raise serialize.ContainerError(f"{path}: expected a checkpoint, got {kind!r}")
    state = model.init_model(model.model_config_from_meta(meta["model_config"]))
    model.load_state_arrays(
        state, {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    )
    cfg = TrainConfig(**meta["train_config"])
    optimizer = AdamW(model.parameters(state), lr=cfg.lr,
                      weight_decay=cfg.weight_decay)
    optimizer.load_state_arrays(
        {k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")}
    )
    rng = _decode_rng(meta["rng_state"])
    return state, optimizer, cfg, int(meta["epoch"]), meta["history"], rng


def _encode_rng(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": str(st["state"]["state"]),
        "inc": str(st["state"]["inc"]),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _decode_rng(encoded: dict) -> np.random.Generator:
    if encoded["bit_generator"] != "PCG64":
        raise serialize.ContainerError(
            f"unsupported generator {encoded['bit_generator']!r} in checkpoint"
        )
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(encoded["state"]), "inc": int(encoded["inc"])},
        "has_uint32": int(encoded["has_uint32"]),
        "uinteger": int(encoded["uinteger"]),
    }
    return rng
