"""End-to-end experiment driver for synthetic supplementation studies.

Three training regimes share one pre-generated synthetic pool:

* ``supplement_same_origin``: real siteA training data plus whole
  synthetic replicas of it, in graded ratios.
* ``pure_synthetic``: synthetic replicas only, with model selection
  still on real validation data.
* ``cross_site_mix``: real siteB training data plus siteA-sourced
  synthetic replicas.

Every regime trains one classifier per (ratio, seed) with otherwise
identical hyperparameters and evaluates it on the siteA and siteB test
sets.  Metric files are canonical JSON derived only from the config, so
a rerun with the same config writes byte-identical files; wall-clock
information lives only in the run manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .classifier import ClassifierConfig, train_classifier
from .conditioning import LABEL_NAMES
from .denoiser import Denoiser
from .diffusion import generate_replicas
from .metrics import (EvalReport, bonferroni, evaluate_predictions,
                      paired_bootstrap_test)
from .schedule import make_schedule
from .toydata import (builtin_site, generate_site, load_dataset,
                      resolve_dataset, save_dataset, split_by_patient,
                      supplement)

FAMILIES = ("supplement_same_origin", "pure_synthetic", "cross_site_mix")

REGIME_BY_FAMILY = {
    "supplement_same_origin": "real_plus_synthetic",
    "pure_synthetic": "synthetic_only",
    "cross_site_mix": "cross_site_mix",
}

TEST_SETS = ("siteA_test", "siteB_test")

# patient id offsets keeping the four corpora disjoint by construction
_PATIENT_BASE = {"siteA_train": 0, "siteA_test": 1_000_000,
                 "siteB_train": 2_000_000, "siteB_test": 3_000_000}

CSV_HEADER = "ratio_percent,regime,macro_auroc,ci_lo,ci_hi,baseline_auroc"


@dataclass(frozen=True)
class SitePlan:
    """How many images to draw for one site and from which seeds."""
    n_train: int
    n_test: int
    train_seed: int
    test_seed: int

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("site corpus sizes must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    ratios: tuple
    out_dir: str
    diffusion_checkpoint: str
    site_a: SitePlan
    site_b: SitePlan
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    classifier_seeds: tuple = (0, 1, 2)
    image_size: int = 32
    schedule_kind: str = "cosine"
    schedule_steps: int = 1000
    split_seed: int = 0
    val_fraction: float = 0.1
    cfg_scale: float = 0.0
    sample_steps: int = 200
    sample_seed: int = 0
    sample_batch: int = 128
    pool_dir: str | None = None
    eval_n_boot: int = 1000
    eval_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        ratios = tuple(int(r) for r in self.ratios)
        if not ratios or len(set(ratios)) != len(ratios):
            raise ValueError("ratios must be non-empty and unique")
        for r in ratios:
            if not 0 <= r <= 1000 or r % 100:
                raise ValueError("each ratio must be one of 0, 100, ..., 1000")
        if self.family == "pure_synthetic" and 0 in ratios:
            raise ValueError("pure synthetic training forbids ratio 0")
        object.__setattr__(self, "ratios", ratios)
        seeds = tuple(int(s) for s in self.classifier_seeds)
        if not seeds or len(set(seeds)) != len(seeds):
            raise ValueError("classifier_seeds must be non-empty and unique")
        object.__setattr__(self, "classifier_seeds", seeds)
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly inside (0, 1)")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be non-negative")
        if self.eval_n_boot < 1 or self.sample_steps < 1:
            raise ValueError("eval_n_boot and sample_steps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier"] = self.classifier.to_dict()
        d["ratios"] = list(self.ratios)
        d["classifier_seeds"] = list(self.classifier_seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["site_a"] = SitePlan(**d["site_a"])
        d["site_b"] = SitePlan(**d["site_b"])
        d["classifier"] = ClassifierConfig.from_dict(d["classifier"])
        d["ratios"] = tuple(d["ratios"])
        d["classifier_seeds"] = tuple(d["classifier_seeds"])
        return cls(**d)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical config serialization.

    Keys are sorted before hashing, so two dicts with reordered fields
    produce the same hash.
    """
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to locate and reproduce one experiment run."""
    config: dict
    config_hash: str
    package_version: str
    library_versions: dict
    created: str
    pool_path: str | None
    metrics: tuple          # rows of {family, ratio, seed, test_set, path}
    comparisons_path: str | None
    root: str = ""          # directory the relative paths hang off

    def metric_path(self, ratio: int, seed: int, test_set: str) -> Path:
        for row in self.metrics:
            if (row["ratio"], row["seed"], row["test_set"]) == (ratio, seed,
                                                                test_set):
                return Path(self.root) / row["path"]
        raise KeyError(f"no metrics for ratio={ratio} seed={seed} "
                       f"test_set={test_set}")

    def load_report(self, ratio: int, seed: int, test_set: str) -> EvalReport:
        with open(self.metric_path(ratio, seed, test_set),
                  encoding="utf-8") as fh:
            return EvalReport.from_dict(json.load(fh))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_manifest(manifest: RunManifest, path) -> None:
    d = asdict(manifest)
    d.pop("root")
    d["metrics"] = list(manifest.metrics)
    _write_json(Path(path), d)


def load_manifest(path) -> RunManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    d["metrics"] = tuple(d["metrics"])
    return RunManifest(root=str(path.parent), **d)


def _build_corpora(config: ExperimentConfig) -> dict:
    plans = {"siteA_train": ("siteA", config.site_a.n_train,
                             config.site_a.train_seed),
             "siteA_test": ("siteA", config.site_a.n_test,
                            config.site_a.test_seed),
             "siteB_train": ("siteB", config.site_b.n_train,
                             config.site_b.train_seed),
             "siteB_test": ("siteB", config.site_b.n_test,
                            config.site_b.test_seed)}
    if config.family != "cross_site_mix":
        del plans["siteB_train"]
    out = {}
    for name, (site, n, seed) in plans.items():
        spec = builtin_site(site, n, image_size=config.image_size)
        out[name] = generate_site(spec, seed, patient_base=_PATIENT_BASE[name])
    return out


def _obtain_pool(config: ExperimentConfig, sources, out: Path,
                 progress: bool) -> tuple:
    """Load or generate the replica pool; returns (records, stored path)."""
    n_replicas = max(config.ratios) // 100
    if n_replicas == 0:
        return [], None
    if config.pool_dir is not None:
        pool = load_dataset(config.pool_dir)
        if any(r.provenance.is_real for r in pool):
            raise ValueError("configured pool contains real-provenance records")
        return pool, str(config.pool_dir)
    model = Denoiser.load(config.diffusion_checkpoint)
    if model.config.image_size != config.image_size:
        raise ValueError("diffusion checkpoint image size does not match "
                         "the experiment image size")
    schedule = make_schedule(config.schedule_kind, config.schedule_steps)
    pool = generate_replicas(model, sources, n_replicas, config.cfg_scale,
                             base_seed=config.sample_seed, schedule=schedule,
                             n_steps=config.sample_steps,
                             batch_size=config.sample_batch,
                             progress=progress)
    pool_path = out / "pool"
    save_dataset(pool_path, pool,
                 meta={"cfg_scale": config.cfg_scale,
                       "n_replicas": n_replicas,
                       "sample_steps": config.sample_steps,
                       "sample_seed": config.sample_seed})
    return pool, str(pool_path)


def _compare_to_baseline(config: ExperimentConfig, reports: dict) -> dict:
    """Paired tests of each ratio against ratio 0, per test set.

    Replicates are averaged over classifier seeds elementwise; that is
    sound because every evaluation shares one bootstrap index matrix.
    """
    seeds = config.classifier_seeds
    others = [r for r in config.ratios if r != 0]
    out = {"alpha": 0.05, "test_sets": {}}
    for ts in TEST_SETS:
        def mean_over_seeds(ratio, what):
            vals = [np.asarray(getattr(reports[(ratio, s, ts)], what))
                    for s in seeds]
            return np.mean(vals, axis=0)

        base_reps = mean_over_seeds(0, "macro_replicates")
        base_macro = float(mean_over_seeds(0, "macro_auroc"))
        rows = []
        for ratio in others:
            reps = mean_over_seeds(ratio, "macro_replicates")
            macro = float(mean_over_seeds(ratio, "macro_auroc"))
            rows.append({"ratio": ratio, "macro_auroc": macro,
                         "delta_vs_baseline": macro - base_macro,
                         "p_value": paired_bootstrap_test(reps, base_reps)})
        if rows:
            flags = bonferroni([r["p_value"] for r in rows])
            for row, sig in zip(rows, flags):
                row["significant"] = bool(sig)
        out["test_sets"][ts] = {"baseline_macro_auroc": base_macro,
                                "comparisons": rows}
    return out


def run_experiment(config: ExperimentConfig, progress: bool = False) -> RunManifest:
    """Train, evaluate and persist one experiment family.

    Writes under ``config.out_dir``: ``pool/`` (when replicas are
    generated here), ``metrics/*.json`` per (ratio, seed, test set),
    ``comparisons.json`` when ratio 0 is present, and ``manifest.json``.
    """
    if not Path(config.diffusion_checkpoint).exists():
        raise FileNotFoundError(
            f"diffusion checkpoint {config.diffusion_checkpoint!r} not found")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    corpora = _build_corpora(config)
    real_base = corpora["siteB_train"] if config.family == "cross_site_mix" \
        else corpora["siteA_train"]
    train_real, val_real, _ = split_by_patient(
        real_base, (1.0 - config.val_fraction, config.val_fraction, 0.0),
        config.split_seed)

    # synthetic images always derive from siteA's classifier-train side,
    # so the same pool serves every family
    if config.family == "cross_site_mix":
        sources, _, _ = split_by_patient(
            corpora["siteA_train"],
            (1.0 - config.val_fraction, config.val_fraction, 0.0),
            config.split_seed)
    else:
        sources = train_real
    pool, pool_path = _obtain_pool(config, sources, out, progress)

    tests = {name: resolve_dataset(corpora[name], "testing")
             for name in TEST_SETS}
    val_resolved = resolve_dataset(val_real, "training")

    rows, reports = [], {}
    pure = config.family == "pure_synthetic"
    for ratio in config.ratios:
        train_list = supplement(train_real, pool, ratio, pure_synthetic=pure)
        train_resolved = resolve_dataset(train_list, "training")
        for seed in config.classifier_seeds:
            if progress:
                print(f"{config.family}: ratio {ratio}% seed {seed} "
                      f"({len(train_resolved)} training images)")
            clf = train_classifier(train_resolved, val_resolved,
                                   replace(config.classifier, seed=seed))
            for ts_name, ts in tests.items():
                report = evaluate_predictions(
                    clf.predict(ts.images), ts.targets, ts.masks, LABEL_NAMES,
                    model_id=f"{config.family}:ratio{ratio}:seed{seed}",
                    dataset_id=ts_name, n_boot=config.eval_n_boot,
                    seed=config.eval_seed)
                rel = f"metrics/{config.family}_r{ratio:04d}_s{seed}_{ts_name}.json"
                _write_json(out / rel, report.to_dict())
                rows.append({"family": config.family, "ratio": ratio,
                             "seed": seed, "test_set": ts_name, "path": rel})
                reports[(ratio, seed, ts_name)] = report

    comparisons_path = None
    if 0 in config.ratios and len(config.ratios) > 1:
        _write_json(out / "comparisons.json",
                    _compare_to_baseline(config, reports))
        comparisons_path = "comparisons.json"

    manifest = RunManifest(
        config=config.to_dict(), config_hash=config_hash(config),
        package_version=__version__,
        library_versions={"numpy": np.__version__, "torch": torch.__version__},
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        pool_path=pool_path, metrics=tuple(rows),
        comparisons_path=comparisons_path, root=str(out))
    save_manifest(manifest, out / "manifest.json")
    return manifest


def _aggregate_rows(manifest: RunManifest) -> tuple:
    """Seed-averaged (test_set, regime, ratio, macro, lo, hi) tuples."""
    config = ExperimentConfig.from_dict(manifest.config)
    regime = REGIME_BY_FAMILY[config.family]
    rows, missing = [], []
    for ts in TEST_SETS:
        for ratio in config.ratios:
            per_seed = []
            for seed in config.classifier_seeds:
                try:
                    per_seed.append(manifest.load_report(ratio, seed, ts))
                except (KeyError, FileNotFoundError):
                    missing.append(f"{config.family} ratio={ratio} "
                                   f"seed={seed} test_set={ts}")
            if len(per_seed) != len(config.classifier_seeds):
                continue
            rows.append((ts, regime, ratio,
                         float(np.mean([r.macro_auroc for r in per_seed])),
                         float(np.mean([r.macro_ci_lower for r in per_seed])),
                         float(np.mean([r.macro_ci_upper for r in per_seed]))))
    return rows, missing


def emit_figure_csv(manifests, out_dir) -> tuple:
    """Figure-ready CSVs, one per test set, from completed manifests.

    Columns: ratio_percent, regime, macro_auroc, ci_lo, ci_hi,
    baseline_auroc.  The baseline column is constant per file, taken
    from a ratio-0 run (real-data regimes take precedence).  Returns
    (written paths, warning records); incomplete runs are skipped with
    a warning rather than failing the export.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = [m if isinstance(m, RunManifest) else load_manifest(m)
              for m in manifests]
    if not loaded:
        raise ValueError("no manifests given")
    all_rows, warnings_log = [], []
    for man in loaded:
        rows, missing = _aggregate_rows(man)
        all_rows.extend(rows)
        warnings_log.extend(f"skipped incomplete run: {m}" for m in missing)

    baseline_rank = {"real_plus_synthetic": 0, "cross_site_mix": 1}
    paths = []
    for ts in TEST_SETS:
        ts_rows = sorted(r for r in all_rows if r[0] == ts)
        if not ts_rows:
            continue
        candidates = sorted((baseline_rank[regime], macro)
                            for (_, regime, ratio, macro, _, _) in ts_rows
                            if ratio == 0 and regime in baseline_rank)
        if not candidates:
            warnings_log.append(f"no ratio-0 baseline for {ts}: skipped")
            continue
        baseline = candidates[0][1]
        path = out_dir / f"figure_{ts}.csv"
        lines = [CSV_HEADER]
        lines += [f"{ratio},{regime},{macro:.6f},{lo:.6f},{hi:.6f},"
                  f"{baseline:.6f}"
                  for (_, regime, ratio, macro, lo, hi) in ts_rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(path)
    return paths, warnings_log
