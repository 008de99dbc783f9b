"""Recovery metrics: component correlation, regime accuracy, phase timing.

Latent recovery is scored up to permutation and componentwise monotone
transform, so correlations are matched through an optimal assignment and
Spearman is the default flavor (Pearson is available when only affine
indeterminacy is expected). Regime labels are scored up to label swap the
same way. All assignment problems go through scipy's Hungarian solver;
tests cross-check it against brute-force permutation search.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats


def linear_sum_assignment(cost: np.ndarray):
    """Minimum-cost assignment; thin wrapper so callers stay in-package."""
    return optimize.linear_sum_assignment(np.asarray(cost, dtype=np.float64))


def _safe_corr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-correlation matrix with constant columns mapped to 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.shape[1], b.shape[1]
    const_a = a.std(axis=0) < 1e-12
    const_b = b.std(axis=0) < 1e-12
    if const_a.any() or const_b.any():
        warnings.warn("constant columns contribute zero correlation")
    with np.errstate(invalid="ignore", divide="ignore"):
        full = np.corrcoef(a, b, rowvar=False)
    cross = full[:na, na:]
    cross = np.nan_to_num(cross, nan=0.0)
    cross[const_a, :] = 0.0
    cross[:, const_b] = 0.0
    return cross


@dataclass
class MCCResult:
    value: float                 # mean matched |correlation|, in [0, 1]
    per_component: np.ndarray    # matched |correlation| per true component
    assignment: tuple            # (true indices, estimate indices)
    corr: np.ndarray             # full cross-correlation matrix
    method: str


def mcc(z_true: np.ndarray, z_est: np.ndarray, method: str = "spearman") -> MCCResult:
    """Mean correlation coefficient after optimal component matching.

    Inputs are (N, n) score matrices; leading axes beyond two are
    flattened. ``spearman`` (default) scores recovery up to monotone
    componentwise transforms, ``pearson`` up to affine ones.
    """
    z_true = np.asarray(z_true, dtype=np.float64).reshape(-1, np.asarray(z_true).shape[-1])
    z_est = np.asarray(z_est, dtype=np.float64).reshape(-1, np.asarray(z_est).shape[-1])
    if z_true.shape[0] != z_est.shape[0]:
        raise ValueError("z_true and z_est must have the same number of rows")
    if method == "spearman":
        a = stats.rankdata(z_true, axis=0)
        b = stats.rankdata(z_est, axis=0)
    elif method == "pearson":
        a, b = z_true, z_est
    else:
        raise ValueError(f"unknown correlation method {method!r}")
    corr = _safe_corr(a, b)
    rows, cols = linear_sum_assignment(-np.abs(corr))
    matched = np.abs(corr)[rows, cols]
    return MCCResult(
        value=float(matched.mean()),
        per_component=matched,
        assignment=(rows, cols),
        corr=corr,
        method=method,
    )


@dataclass
class DomainAccuracyResult:
    value: float                 # fraction of samples correct under best relabeling
    mapping: dict                # predicted label -> true label
    confusion: np.ndarray        # (n_true, n_pred) counts


def domain_accuracy(true_labels: np.ndarray, pred_labels: np.ndarray) -> DomainAccuracyResult:
    """Classification accuracy maximized over label permutations.

    Handles rectangular cases: when the predictor uses more labels than
    the ground truth, surplus labels simply stay unmatched.
    """
    true_labels = np.asarray(true_labels, dtype=np.int64).ravel()
    pred_labels = np.asarray(pred_labels, dtype=np.int64).ravel()
    if true_labels.shape != pred_labels.shape:
        raise ValueError("label arrays must have equal length")
    if true_labels.size == 0:
        raise ValueError("empty label arrays")
    n_true = int(true_labels.max()) + 1
    n_pred = int(pred_labels.max()) + 1
    confusion = np.zeros((n_true, n_pred), dtype=np.int64)
    np.add.at(confusion, (true_labels, pred_labels), 1)
    rows, cols = linear_sum_assignment(-confusion)
    value = confusion[rows, cols].sum() / true_labels.size
    return DomainAccuracyResult(
        value=float(value),
        mapping={int(c): int(r) for r, c in zip(rows, cols)},
        confusion=confusion,
    )


@dataclass
class PhaseReport:
    """When each recovery milestone was first reached during training."""

    first_acc_epoch: int | None
    first_mcc_epoch: int | None
    acc_leads: bool | None       # accuracy milestone strictly before the MCC one
    final_acc: float
    final_mcc: float
    acc_threshold: float
    mcc_threshold: float


def phase_report(epochs, acc_history, mcc_history,
                 acc_threshold: float = 0.90,
                 mcc_threshold: float = 0.90) -> PhaseReport:
    """Locate the first epochs where accuracy and MCC cross their thresholds.

    ``acc_leads`` is None when neither milestone was reached; if only one
    was reached it reflects whether that one was accuracy.
    """
    epochs = list(epochs)
    acc = list(acc_history)
    m = list(mcc_history)
    if not (len(epochs) == len(acc) == len(m)):
        raise ValueError("histories must be aligned")

    def first_crossing(values, threshold):
        for e, v in zip(epochs, values):
            if v >= threshold:
                return e
        return None

    first_acc = first_crossing(acc, acc_threshold)
    first_mcc = first_crossing(m, mcc_threshold)
    if first_acc is None and first_mcc is None:
        leads = None
    elif first_mcc is None:
        leads = True
    elif first_acc is None:
        leads = False
    else:
        leads = first_acc < first_mcc
    return PhaseReport(
        first_acc_epoch=first_acc,
        first_mcc_epoch=first_mcc,
        acc_leads=leads,
        final_acc=float(acc[-1]) if acc else float("nan"),
        final_mcc=float(m[-1]) if m else float("nan"),
        acc_threshold=acc_threshold,
        mcc_threshold=mcc_threshold,
    )
