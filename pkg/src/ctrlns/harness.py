"""Command line workbench: generate data, train, evaluate, audit, report.

Every subcommand reads the same JSON run configuration, validated against
a versioned schema shipped with the package, so a run is reproducible
from its config file and seed alone. Results land in an output directory
as containers (dataset, checkpoint) plus plain JSON summaries and PNG
plots. A lock file guards the directory against concurrent runs.

Exit codes: 0 success, 2 unusable configuration or input, 3 numeric
failure during generation or training.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from importlib import resources

import jsonschema
import numpy as np

from . import datagen, metrics, model, networks, objectives, serialize, theory
from .datagen import ConfigError

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_NUMERIC = 3

SCHEMA_VERSION = 1

ACC_TARGET = 0.90
MCC_TARGET = 0.85


class LockError(RuntimeError):
    """Another process owns the output directory."""


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

def _schema() -> dict:
    path = resources.files("ctrlns").joinpath(
        f"schemas/run_config_v{SCHEMA_VERSION}.json")
    return json.loads(path.read_text())


def load_run_config(path: str | None = None) -> dict:
    """Read and validate a run config; ``None`` yields pure defaults."""
    cfg: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    cfg.setdefault("schema_version", SCHEMA_VERSION)
    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "top level"
        raise ConfigError(f"config rejected at {where}: {exc.message}") from exc
    return cfg


def build_configs(run_cfg: dict, seed: int | None = None):
    """Turn the JSON sections into the three stage configs.

    Model dimensions default to the generator's so the common case needs
    no model section at all. A ``seed`` override reseeds every stage.
    """
    gen_kwargs = dict(run_cfg.get("generate", {}))
    if "chain_proportions" in gen_kwargs:
        gen_kwargs["chain_proportions"] = tuple(gen_kwargs["chain_proportions"])
    gcfg = datagen.GenConfig(**gen_kwargs)

    model_kwargs = dict(run_cfg.get("model", {}))
    for key in ("enc_hidden", "dec_hidden", "gate_hidden"):
        if key in model_kwargs:
            model_kwargs[key] = tuple(model_kwargs[key])
    model_kwargs.setdefault("obs_dim", gcfg.obs_dim)
    model_kwargs.setdefault("latent_dim", gcfg.latent_dim)
    model_kwargs.setdefault("n_domains", gcfg.U)
    mcfg = model.ModelConfig(**model_kwargs)

    tcfg = objectives.TrainConfig(**run_cfg.get("train", {}))

    if seed is not None:
        gcfg = dataclasses.replace(gcfg, seed=seed)
        mcfg = dataclasses.replace(mcfg, seed=seed)
        tcfg = dataclasses.replace(tcfg, seed=seed)

    datagen.validate_config(gcfg)
    model.validate_model_config(mcfg)
    objectives.validate_train_config(tcfg)
    return gcfg, mcfg, tcfg


# ---------------------------------------------------------------------------
# output directory plumbing
# ---------------------------------------------------------------------------

class OutputLock:
    """Exclusive claim on an output directory via a pid-stamped lock file."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(
                f"{self.path} exists; another run owns this directory "
                "(delete the file if that run is gone)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        if os.path.exists(self.path):
            os.unlink(self.path)
        return False


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {_key(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _key(k):
    # tuple keys like regime pairs become "0-1"
    if isinstance(k, tuple):
        return "-".join(str(part) for part in k)
    return str(k)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_dataset(path: str) -> datagen.Dataset:
    if not os.path.exists(path):
        raise ConfigError(f"dataset {path} does not exist (run generate first?)")
    return datagen.load_dataset(path)


def model_fingerprint(state: model.ModelState) -> str:
    """Content hash of the parameters; equal runs give equal strings."""
    arrays = model.state_arrays(state)
    meta = {"names": sorted(arrays), "config": model.model_config_meta(state.config)}
    return serialize.hash_arrays(meta, [arrays[k] for k in sorted(arrays)])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    run_cfg = load_run_config(args.config)
    gcfg, _, _ = build_configs(run_cfg, seed=args.seed)
    out = args.out
    with OutputLock(out):
        t0 = time.time()
        ds = datagen.generate_dataset(gcfg)
        path = os.path.join(out, "dataset.bin")
        datagen.serialize_dataset(path, ds)
        freq = np.bincount(ds.domains.ravel(), minlength=gcfg.U) / ds.domains.size
        _write_json(os.path.join(out, "generate.json"), {
            "fingerprint": ds.fingerprint,
            "x_shape": list(ds.x.shape),
            "n_regimes": gcfg.U,
            "regime_frequencies": freq,
            "seed": gcfg.seed,
            "wall_seconds": time.time() - t0,
        })
    print(f"wrote {path}  shape={tuple(ds.x.shape)}  "
          f"fingerprint={ds.fingerprint[:12]}")
    return EXIT_OK


def cmd_train(args) -> int:
    run_cfg = load_run_config(args.config)
    _, mcfg, tcfg = build_configs(run_cfg, seed=args.seed)
    out = args.out
    data_path = args.data or os.path.join(out, "dataset.bin")
    ds = _load_dataset(data_path)

    # unset model dims follow the dataset, not the generate section
    mspec = run_cfg.get("model", {})
    updates = {}
    if "obs_dim" not in mspec:
        updates["obs_dim"] = ds.config.obs_dim
    if "latent_dim" not in mspec:
        updates["latent_dim"] = ds.config.latent_dim
    if "n_domains" not in mspec:
        updates["n_domains"] = ds.config.U
    if updates:
        mcfg = dataclasses.replace(mcfg, **updates)

    with OutputLock(out):
        if args.resume:
            if not os.path.exists(args.resume):
                raise ConfigError(f"checkpoint {args.resume} does not exist")
            state, optimizer, tcfg, start_epoch, history, rng = \
                objectives.load_checkpoint(args.resume)
            print(f"resuming at epoch {start_epoch} from {args.resume}")
        else:
            state = model.init_model(mcfg, np.random.default_rng(mcfg.seed))
            optimizer, history, start_epoch = None, None, 0
            rng = np.random.default_rng(tcfg.seed)
        if args.eval_every is not None:
            tcfg = dataclasses.replace(tcfg, eval_every=args.eval_every)

        def hook(st, epoch):
            scores = objectives.evaluate(st, ds.x, ds.z, ds.domains)
            print(f"epoch {epoch:4d}  acc={scores['domain_acc']:.3f}  "
                  f"mcc={scores['mcc_spearman']:.3f}", flush=True)
            return scores

        t0 = time.time()
        result = objectives.train(state, ds.x, tcfg, eval_hook=hook,
                                  optimizer=optimizer, history=history,
                                  start_epoch=start_epoch, rng=rng,
                                  stop_after=args.stop_after)
        wall = time.time() - t0
        epochs_done = len(result.history["epoch"])

        ck_path = os.path.join(out, "checkpoint.bin")
        objectives.save_checkpoint(ck_path, result.state, result.optimizer,
                                   tcfg, epochs_done, result.history, rng)
        _write_json(os.path.join(out, "history.json"), result.history)

        final = (result.history["eval"][-1] if result.history["eval"]
                 else objectives.evaluate(result.state, ds.x, ds.z, ds.domains))
        _write_json(os.path.join(out, "metrics.json"), {
            "dataset_fingerprint": ds.fingerprint,
            "model_fingerprint": model_fingerprint(result.state),
            "epochs_completed": epochs_done,
            "epochs_total": tcfg.epochs,
            "wall_seconds": wall,
            "final": final,
        })
    print(f"wrote {ck_path}  epochs={epochs_done}/{tcfg.epochs}  "
          f"wall={wall:.1f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = args.out
    data_path = args.data or os.path.join(out, "dataset.bin")
    ck_path = args.checkpoint or os.path.join(out, "checkpoint.bin")
    ds = _load_dataset(data_path)
    if not os.path.exists(ck_path):
        raise ConfigError(f"checkpoint {ck_path} does not exist")
    state, _, _, epoch, history, _ = objectives.load_checkpoint(ck_path)

    scores = objectives.evaluate(state, ds.x, ds.z, ds.domains)
    pred = objectives.predict_domains(state, ds.x)
    acc = metrics.domain_accuracy(ds.domains[:, 1:].ravel(), pred.ravel())
    groups, remap = model.merge_equivalent_domains(state)

    evals = history.get("eval", [])
    phases = metrics.phase_report(
        [e["epoch"] for e in evals],
        [e["domain_acc"] for e in evals],
        [e["mcc_spearman"] for e in evals],
        acc_threshold=ACC_TARGET, mcc_threshold=MCC_TARGET,
    )

    payload = {
        "epochs_completed": epoch,
        "scores": scores,
        "label_mapping": acc.mapping,
        "confusion": acc.confusion,
        "merge_groups": groups,
        "merge_remap": remap,
        "phases": dataclasses.asdict(phases),
        "targets": {"domain_acc": ACC_TARGET, "mcc_spearman": MCC_TARGET},
    }
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "eval.json"), payload)
    _plot_domains(ds.domains, pred, acc.mapping,
                  os.path.join(out, "domains.png"))
    print(f"acc={scores['domain_acc']:.4f}  mcc={scores['mcc_spearman']:.4f}  "
          f"pearson={scores['mcc_pearson']:.4f}")
    return EXIT_OK


def cmd_audit(args) -> int:
    """Structural checks of a dataset's generating system, and optionally
    a comparison of a trained model's wiring against it."""
    out = args.out
    data_path = args.data or os.path.join(out, "dataset.bin")
    ds = _load_dataset(data_path)
    gt, gcfg = ds.gt, ds.config
    U, n = gcfg.U, gcfg.latent_dim
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)

    z_pool = ds.z.reshape(-1, n)
    n_probe = min(200, z_pool.shape[0])
    probes = z_pool[rng.choice(z_pool.shape[0], size=n_probe, replace=False)]

    def partial_fn(u):
        return lambda z, i, j, order=1: datagen.transition_partial(
            gt, u, z, i, j, order)

    regimes = []
    for u in range(U):
        support = theory.jacobian_support(
            lambda pts, u=u: datagen.transition_jacobian(gt, u, pts), probes)
        regimes.append({
            "mask": gt.masks[u],
            "jacobian_support": support,
            "support_matches_mask": bool(np.array_equal(support, gt.masks[u])),
            "complexity": theory.complexity(gt.masks[u]),
        })

    variability = theory.mechanism_variability_check(
        [partial_fn(u) for u in range(U)], probes[:50], k_max=3)

    lossy = []
    if not args.skip_lossy:
        for u in range(U):
            rep = theory.weakly_diverse_lossy_check(
                partial_fn(u), gt.masks[u], rng=np.random.default_rng(u))
            lossy.append({
                "regime": u,
                "status": rep.status,
                "sources": [{"source": int(s.source), "status": s.status,
                             "reason": s.reason} for s in rep.sources],
            })

    freq = np.bincount(ds.domains.ravel(), minlength=U) / ds.domains.size
    th1 = theory.theorem1_oracle(gt.masks, freq, np.arange(U))

    # the rank condition is existential in the evaluation point, so probe
    # several step pairs and keep the best; per-dim sigmas and the t-scores
    # mirror the generator's innovation law
    sigma = gcfg.noise_scale * gt.noise_scales
    scores_t = theory.student_t_noise_scores(gcfg.noise_df)
    suffvar = None
    pairs_tested = 0
    for b, t in zip(rng.integers(0, ds.z.shape[0], size=16),
                    rng.integers(1, ds.z.shape[1], size=16)):
        cand = theory.sufficient_variability_check(
            lambda u, z: datagen.transition_apply(gt, u, z),
            lambda u, z: datagen.transition_jacobian(gt, u, z),
            sigma, ds.z[b, t - 1], ds.z[b, t], U, noise_scores=scores_t)
        pairs_tested += 1
        if suffvar is None or cand.rank > suffvar.rank:
            suffvar = cand
        if suffvar.passes:
            break

    payload = {
        "dataset_fingerprint": ds.fingerprint,
        "regimes": regimes,
        "pooled_support": theory.binary_or(*[gt.masks[u] for u in range(U)]),
        "variability": {
            "distinguishing_order": variability.distinguishing_order,
            "all_distinguished": variability.all_distinguished,
            "k_max": variability.k_max,
        },
        "lossy": lossy,
        "sparsity_recovery": {
            "identifiable": th1.identifiable,
            "support_separable": th1.support_separable,
            "minimizers_match_truth": th1.minimizers_match_truth,
            "min_expected_complexity": th1.min_expected_complexity,
            "true_expected_complexity": th1.true_expected_complexity,
            "n_minimizers": th1.n_minimizers,
            "n_assignments": th1.n_assignments,
            "regime_frequencies": freq,
        },
        "score_variability": {
            "passes": suffvar.passes,
            "rank": suffvar.rank,
            "required": suffvar.required,
            "pairs_tested": pairs_tested,
            "noise_family": f"student_t(df={gcfg.noise_df})",
            "singular_values": suffvar.singular_values,
        },
    }

    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise ConfigError(f"checkpoint {args.checkpoint} does not exist")
        state, _, _, _, _, _ = objectives.load_checkpoint(args.checkpoint)
        payload["learned"] = _learned_structure(state, ds)

    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "audit.json"), payload)
    ok = (all(r["support_matches_mask"] for r in regimes)
          and th1.identifiable and variability.all_distinguished)
    print(f"audit {'clean' if ok else 'flagged'}: "
          f"supports={'ok' if all(r['support_matches_mask'] for r in regimes) else 'MISMATCH'}  "
          f"sparsity_recovery={'ok' if th1.identifiable else 'FAIL'}  "
          f"score_rank={suffvar.rank}/{suffvar.required}")
    return EXIT_OK


def _learned_structure(state: model.ModelState, ds: datagen.Dataset) -> dict:
    """Compare each label slot's transition net against the matched
    regime's true wiring, in the learned coordinate system."""
    n = state.config.latent_dim
    B, T, d = ds.x.shape
    mu, _ = model.encode(state, ds.x.reshape(B * T, d))
    z_est = mu.value

    pred = objectives.predict_domains(state, ds.x)
    acc = metrics.domain_accuracy(ds.domains[:, 1:].ravel(), pred.ravel())
    comp = metrics.mcc(ds.z.reshape(B * T, n), z_est, "spearman")
    est_of_true = {int(t): int(e) for t, e in zip(*comp.assignment)}
    col_perm = np.array([est_of_true[a] for a in range(n)])

    rng = np.random.default_rng(0)
    n_probe = min(128, z_est.shape[0])
    probes = z_est[rng.choice(z_est.shape[0], size=n_probe, replace=False)]
    h = 1e-4
    slots = []
    for u, net in enumerate(state.params["trans"]):
        J = np.zeros((n, n))
        for i in range(n):
            dp = probes.copy()
            dm = probes.copy()
            dp[:, i] += h
            dm[:, i] -= h
            diff = (networks.mlp_forward(net, dp).value
                    - networks.mlp_forward(net, dm).value) / (2 * h)
            J[i] = np.abs(diff).max(axis=0)
        rel = J / max(J.max(), 1e-12)
        support = (rel > 0.05).astype(np.int8)
        # aligned[a, b] reads the learned edge matched to true edge (a, b)
        aligned = support[np.ix_(col_perm, col_perm)]
        matched = acc.mapping.get(u)
        entry = {
            "slot": u,
            "matched_regime": matched,
            "max_abs_jacobian": J,
            "support_rel_5pct": support,
        }
        if matched is not None:
            mask = ds.gt.masks[matched]
            entry["true_mask"] = mask
            entry["support_agreement"] = float(
                (aligned == mask).mean())
        slots.append(entry)
    return {
        "component_alignment": col_perm,
        "slots": slots,
    }


def cmd_report(args) -> int:
    """Render plots and a one-file summary from an existing run directory."""
    out = args.out
    paths = {name: os.path.join(out, f"{name}.json")
             for name in ("history", "metrics", "eval", "audit", "generate")}
    found = {name: p for name, p in paths.items() if os.path.exists(p)}
    if not found:
        raise ConfigError(f"{out} holds no run artifacts to report on")

    summary: dict = {"run_dir": out, "artifacts": sorted(found)}
    history = None
    if "history" in found:
        with open(found["history"]) as fh:
            history = json.load(fh)
        _plot_losses(history, os.path.join(out, "losses.png"))
        summary["plots"] = ["losses.png"]
        if history.get("eval"):
            _plot_recovery(history["eval"], os.path.join(out, "recovery.png"))
            summary["plots"].append("recovery.png")
    for name in ("metrics", "eval", "audit", "generate"):
        if name in found:
            with open(found[name]) as fh:
                summary[name] = json.load(fh)
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"wrote {os.path.join(out, 'summary.json')}"
          + (" and plots" if history else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _plot_losses(history: dict, path: str) -> None:
    plt = _plt()
    epochs = history["epoch"]
    fig, (ax, ax2) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True, height_ratios=[3, 1])
    for key in ("total", "recon", "kld", "trans"):
        ax.plot(epochs, history[key], label=key)
    ax.set_ylabel("loss (nats/row)")
    ax.legend(loc="upper right")
    ax.grid(alpha=0.3)
    ax2.plot(epochs, history["tau"], color="tab:gray")
    ax2.set_ylabel("tau")
    ax2.set_xlabel("epoch")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_recovery(evals: list, path: str) -> None:
    plt = _plt()
    epochs = [e["epoch"] for e in evals]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [e["domain_acc"] for e in evals],
            label="regime accuracy", color="tab:blue")
    ax.plot(epochs, [e["mcc_spearman"] for e in evals],
            label="component MCC (spearman)", color="tab:orange")
    ax.axhline(ACC_TARGET, color="tab:blue", ls="--", lw=0.8)
    ax.axhline(MCC_TARGET, color="tab:orange", ls="--", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_domains(true_domains: np.ndarray, pred: np.ndarray,
                  mapping: dict, path: str, n_rows: int = 8) -> None:
    plt = _plt()
    k = min(n_rows, true_domains.shape[0])
    relabel = np.vectorize(lambda p: mapping.get(int(p), int(p)))
    shown_pred = relabel(pred[:k])
    hi = max(int(true_domains[:k].max()), int(shown_pred.max()))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 4.5), sharex=True)
    ax1.imshow(true_domains[:k], aspect="auto", interpolation="nearest",
               cmap="viridis", vmin=0, vmax=hi)
    ax1.set_ylabel("sequence")
    ax1.set_title("true regimes")
    ax2.imshow(shown_pred, aspect="auto", interpolation="nearest",
               cmap="viridis", vmin=0, vmax=hi)
    ax2.set_ylabel("sequence")
    ax2.set_xlabel("step")
    ax2.set_title("predicted regimes (matched labels, first step unseen)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int,
                        help="override every stage seed (or CTRLNS_SEED)")
    common.add_argument("--out", help="output directory "
                        "(or CTRLNS_OUTPUT_DIR; default ./run)")
    common.add_argument("--device", default="cpu",
                        help="compute device; only 'cpu' exists")

    parser = argparse.ArgumentParser(
        prog="ctrlns",
        description="nonstationary sequence recovery workbench")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("generate", parents=[common],
                       help="sample a dataset with known ground truth")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common],
                       help="fit the sequence model on a dataset")
    p.add_argument("--data", help="dataset container (default OUT/dataset.bin)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--eval-every", type=int, dest="eval_every",
                   help="epochs between ground-truth evaluations")
    p.add_argument("--stop-after", type=int, dest="stop_after",
                   help="halt after this many epochs, keeping the schedule")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="score a checkpoint against ground truth")
    p.add_argument("--data", help="dataset container (default OUT/dataset.bin)")
    p.add_argument("--checkpoint", help="model snapshot "
                   "(default OUT/checkpoint.bin)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", parents=[common],
                       help="structural checks of the generating system")
    p.add_argument("--data", help="dataset container (default OUT/dataset.bin)")
    p.add_argument("--checkpoint",
                   help="also compare this model's learned wiring")
    p.add_argument("--skip-lossy", action="store_true", dest="skip_lossy",
                   help="skip the saturation-witness search")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", parents=[common],
                       help="render plots and a summary from a run directory")
    p.set_defaults(func=cmd_report)

    return parser


def _resolve_env(args) -> None:
    if args.seed is None and os.environ.get("CTRLNS_SEED"):
        try:
            args.seed = int(os.environ["CTRLNS_SEED"])
        except ValueError:
            raise ConfigError(
                f"CTRLNS_SEED={os.environ['CTRLNS_SEED']!r} is not an integer")
    if args.out is None:
        args.out = os.environ.get("CTRLNS_OUTPUT_DIR") or "run"
    os.makedirs(args.out, exist_ok=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_BAD_CONFIG
    try:
        if args.device != "cpu":
            raise ConfigError(
                f"unknown device {args.device!r}; this is a cpu implementation")
        _resolve_env(args)
        return args.func(args)
    except (ConfigError, serialize.ContainerError, LockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (objectives.NumericError, datagen.GenerationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
