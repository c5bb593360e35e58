"""Evaluation statistics: AUROC, bootstrap intervals, paired tests,
feature-space distance and label co-occurrence comparison.

AUROC uses the rank formulation (ties get half credit), equivalent to
the probability a random positive outscores a random negative.  A label
with a single class after masking has no defined AUROC and raises
``UndefinedMetricError``; aggregations skip such labels rather than
inventing a value.

Bootstrap intervals resample at the image level.  Paired model
comparisons reuse one shared set of resample indices so per-replicate
differences are meaningful.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

DEFAULT_BOOTSTRAP = 1000
_CI_LO, _CI_HI = 2.5, 97.5


class UndefinedMetricError(ValueError):
    """The requested statistic does not exist for the given data."""


def _masked_1d(scores, labels, mask):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.shape != scores.shape:
            raise ValueError("mask must match scores in length")
        scores, labels = scores[mask], labels[mask]
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be binary")
    return scores, labels.astype(bool)


def auroc(scores, labels, mask=None) -> float:
    """Mann-Whitney AUROC with tie half-credit."""
    scores, labels = _masked_1d(scores, labels, mask)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = sstats.rankdata(scores)
    pos_ranks = ranks[labels].sum()
    return float((pos_ranks - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _auroc_rows(scores_rows: np.ndarray, labels_rows: np.ndarray) -> np.ndarray:
    """Vectorized AUROC per row; NaN where a row is single-class."""
    ranks = sstats.rankdata(scores_rows, axis=1)
    pos = labels_rows.astype(bool)
    n_pos = pos.sum(axis=1)
    n_neg = pos.shape[1] - n_pos
    with np.errstate(invalid="ignore", divide="ignore"):
        pos_ranks = np.where(pos, ranks, 0.0).sum(axis=1)
        out = (pos_ranks - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    out[(n_pos == 0) | (n_neg == 0)] = np.nan
    return out


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lower: float
    upper: float
    n_boot: int


def bootstrap_ci(scores, labels, mask=None, n_boot: int = DEFAULT_BOOTSTRAP,
                 seed: int = 0, max_retries: int = 100) -> BootstrapCI:
    """Percentile bootstrap interval for AUROC over image-level resamples.

    Resamples that land on a single class are redrawn up to
    ``max_retries`` times each before giving up.
    """
    scores, labels = _masked_1d(scores, labels, mask)
    point = auroc(scores, labels.astype(int))
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    rng = np.random.default_rng(seed)
    n = scores.size
    idx = rng.integers(0, n, size=(n_boot, n))
    reps = _auroc_rows(scores[idx], labels[idx])
    for _ in range(max_retries):
        bad = np.isnan(reps)
        if not bad.any():
            break
        idx = rng.integers(0, n, size=(int(bad.sum()), n))
        reps[bad] = _auroc_rows(scores[idx], labels[idx])
    else:
        raise UndefinedMetricError(
            f"could not draw two-class resamples in {max_retries} rounds")
    lo, hi = np.percentile(reps, [_CI_LO, _CI_HI])
    return BootstrapCI(point=point, lower=float(lo), upper=float(hi),
                       n_boot=n_boot)


def bootstrap_indices(n: int, n_boot: int, seed: int) -> np.ndarray:
    """Shared (n_boot, n) resample index matrix for paired comparisons."""
    if n < 1 or n_boot < 1:
        raise ValueError("n and n_boot must be positive")
    return np.random.default_rng(seed).integers(0, n, size=(n_boot, n))


def macro_auroc_replicates(scores, targets, masks, indices) -> np.ndarray:
    """Macro AUROC per shared resample.

    ``scores``/``targets`` are (N, L); a label drops out of a replicate's
    macro average when the resample leaves it single-class or fully
    masked.  Returns (n_boot,) with NaN where no label is defined.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    masks = np.ones_like(targets, dtype=bool) if masks is None \
        else np.asarray(masks, dtype=bool)
    if scores.shape != targets.shape or scores.shape != masks.shape:
        raise ValueError("scores, targets and masks must share a shape")
    indices = np.asarray(indices)
    n_boot = indices.shape[0]
    n_labels = scores.shape[1]
    per_label = np.full((n_boot, n_labels), np.nan)
    for k in range(n_labels):
        valid = masks[:, k]
        s, t = scores[valid, k], targets[valid, k]
        if s.size == 0:
            continue
        if valid.all():
            per_label[:, k] = _auroc_rows(s[indices], t[indices])
            continue
        # remap shared image indices onto this label's unmasked subset
        lookup = np.full(masks.shape[0], -1)
        lookup[valid] = np.arange(s.size)
        mapped = lookup[indices]
        for b in range(n_boot):
            rows = mapped[b][mapped[b] >= 0]
            if rows.size == 0:
                continue
            per_label[b, k] = _auroc_rows(s[rows][None], t[rows][None])[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(per_label, axis=1)


def paired_bootstrap_test(reps_a, reps_b) -> float:
    """Two-sided paired t-test over shared bootstrap replicates.

    Degenerate case: zero variance of the differences gives p = 1.0 when
    the means agree and p = 0.0 otherwise, with a warning either way.
    """
    a = np.asarray(reps_a, dtype=np.float64)
    b = np.asarray(reps_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length replicate vectors (>= 2 entries)")
    keep = ~(np.isnan(a) | np.isnan(b))
    d = a[keep] - b[keep]
    if d.size < 2:
        raise UndefinedMetricError("too few defined paired replicates")
    sd = d.std(ddof=1)
    if sd == 0.0:
        warnings.warn("paired replicates have zero variance", RuntimeWarning)
        return 1.0 if d.mean() == 0.0 else 0.0
    t = d.mean() / (sd / np.sqrt(d.size))
    return float(2.0 * sstats.t.sf(abs(t), df=d.size - 1))


def bonferroni(p_values, alpha: float = 0.05):
    """Significance flags at the family-wise level alpha / m."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        raise ValueError("no p-values given")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return list(p < (alpha / p.size))


# ---------------------------------------------------------------------------
# feature-space distance


@dataclass(frozen=True)
class FeatureStats:
    """First two moments of a feature cloud."""
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be (D,) and cov (D, D)")
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        if self.n < 2:
            raise ValueError("need at least two samples")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def feature_stats(features) -> FeatureStats:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("features must be (N >= 2, D)")
    cov = np.cov(f, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return FeatureStats(mean=f.mean(axis=0), cov=(cov + cov.T) / 2.0, n=f.shape[0])


_EIG_FLOOR = -1e-8


def _psd_sqrt(mat: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < _EIG_FLOOR:
        raise ValueError(f"{what} has eigenvalue {vals.min():.3e} below {_EIG_FLOOR}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca^1/2 Cb Ca^1/2)^1/2).

    The cross term is computed through a symmetric eigendecomposition,
    so mild negative eigenvalues from roundoff are clamped and anything
    below -1e-8 is treated as a real error.
    """
    if a.mean.size != b.mean.size:
        raise ValueError("feature dimensions differ")
    diff = a.mean - b.mean
    sa_half = _psd_sqrt(a.cov, "first covariance")
    inner = sa_half @ b.cov @ sa_half
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigvalsh(inner)
    if vals.min() < _EIG_FLOOR:
        raise ValueError(f"cross matrix has eigenvalue {vals.min():.3e} "
                         f"below {_EIG_FLOOR}")
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)


# ---------------------------------------------------------------------------
# label co-occurrence


def cooccurrence_matrix(labels) -> np.ndarray:
    """Row-normalized co-occurrence: entry (i, j) = P(j present | i present).

    Rows for labels that never occur are NaN.
    """
    m = np.asarray(labels)
    if m.ndim != 2:
        raise ValueError("labels must be (N, L)")
    if not np.all(np.isin(m, (0, 1))):
        raise ValueError("labels must be binary")
    m = m.astype(np.float64)
    counts = m.T @ m                      # joint presence counts
    row = np.diag(counts).copy()          # occurrences of each label
    out = np.full(counts.shape, np.nan)
    nz = row > 0
    out[nz] = counts[nz] / row[nz, None]
    return out


def matrix_correlation(a, b) -> float:
    """Pearson correlation over entries defined in both matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("matrices must share a shape")
    valid = ~(np.isnan(a) | np.isnan(b))
    x, y = a[valid], b[valid]
    if x.size < 2:
        raise UndefinedMetricError("fewer than two jointly defined entries")
    if x.std() == 0.0 or y.std() == 0.0:
        raise UndefinedMetricError("zero variance leaves correlation undefined")
    return float(np.corrcoef(x, y)[0, 1])


# ---------------------------------------------------------------------------
# evaluation reports


@dataclass(frozen=True)
class LabelMetric:
    name: str
    auroc: float | None
    ci_lower: float | None
    ci_upper: float | None
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class EvalReport:
    model_id: str
    dataset_id: str
    seed: int
    n_images: int
    n_boot: int
    per_label: tuple
    macro_auroc: float
    macro_ci_lower: float
    macro_ci_upper: float
    macro_replicates: tuple = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id, "dataset_id": self.dataset_id,
            "seed": self.seed, "n_images": self.n_images, "n_boot": self.n_boot,
            "macro_auroc": self.macro_auroc,
            "macro_ci_lower": self.macro_ci_lower,
            "macro_ci_upper": self.macro_ci_upper,
            "per_label": [vars(m) for m in self.per_label],
            "macro_replicates": list(self.macro_replicates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(model_id=d["model_id"], dataset_id=d["dataset_id"],
                   seed=d["seed"], n_images=d["n_images"], n_boot=d["n_boot"],
                   per_label=tuple(LabelMetric(**m) for m in d["per_label"]),
                   macro_auroc=d["macro_auroc"],
                   macro_ci_lower=d["macro_ci_lower"],
                   macro_ci_upper=d["macro_ci_upper"],
                   macro_replicates=tuple(d.get("macro_replicates", ())))


def evaluate_predictions(scores, targets, masks, label_names, model_id: str,
                         dataset_id: str, n_boot: int = DEFAULT_BOOTSTRAP,
                         seed: int = 0) -> EvalReport:
    """Per-label and macro AUROC with shared-resample bootstrap intervals."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    masks = np.asarray(masks, dtype=bool)
    if scores.ndim != 2 or scores.shape[1] != len(label_names):
        raise ValueError("scores must be (N, n_labels)")
    if scores.shape != targets.shape or scores.shape != masks.shape:
        raise ValueError("scores, targets and masks must share a shape")
    n = scores.shape[0]
    indices = bootstrap_indices(n, n_boot, seed)
    per_label = []
    defined_points = []
    for k, name in enumerate(label_names):
        valid = masks[:, k]
        t = targets[valid, k].astype(int)
        n_pos, n_neg = int(t.sum()), int(t.size - t.sum())
        try:
            ci = bootstrap_ci(scores[valid, k], t, n_boot=n_boot,
                              seed=seed + 1000 + k)
            per_label.append(LabelMetric(name=name, auroc=ci.point,
                                         ci_lower=ci.lower, ci_upper=ci.upper,
                                         n_pos=n_pos, n_neg=n_neg))
            defined_points.append(ci.point)
        except UndefinedMetricError:
            per_label.append(LabelMetric(name=name, auroc=None, ci_lower=None,
                                         ci_upper=None, n_pos=n_pos, n_neg=n_neg))
    if not defined_points:
        raise UndefinedMetricError("no label has a defined AUROC on this set")
    reps = macro_auroc_replicates(scores, targets, masks, indices)
    reps_ok = reps[~np.isnan(reps)]
    if reps_ok.size < n_boot // 2:
        raise UndefinedMetricError("macro AUROC undefined on most resamples")
    lo, hi = np.percentile(reps_ok, [_CI_LO, _CI_HI])
    return EvalReport(model_id=model_id, dataset_id=dataset_id, seed=seed,
                      n_images=n, n_boot=n_boot, per_label=tuple(per_label),
                      macro_auroc=float(np.mean(defined_points)),
                      macro_ci_lower=float(lo), macro_ci_upper=float(hi),
                      macro_replicates=tuple(float(r) for r in reps))
