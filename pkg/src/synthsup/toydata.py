"""Procedural two-site multi-label image corpus.

Each of the 14 labels owns one cell of a 4x4 grid and, when present,
renders a distinctive motif there.  Labels are drawn sequentially so
earlier labels can boost later ones (pairwise co-dependencies), and the
recorded state degrades the truth the way report extraction would:

    truly present  -> Present, or Uncertain at the site's uncertain rate
    truly absent   -> Absent, or NotMentioned at the not-mentioned rate

Sites differ in appearance, not in label structure: siteA draws bright
motifs on a dark textured background, siteB dark motifs on a bright one,
with different texture statistics.  Demographics leave visible traces in
the texture (age shifts its frequency, sex its orientation, race its
phase) so conditioning has something real to latch onto.

Patients own one to three images; splits always move whole patients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path

import numpy as np

from .conditioning import LABEL_NAMES, N_LABELS, ConditionVector
from .imageops import equalize_histogram, pad_to_square, resize_bilinear

FORMAT_VERSION = 1
_CELL = 9          # native cell side; 4x4 cells -> 36x36 native canvas
_GRID = 4
_NATIVE = _CELL * _GRID


class LabelState(Enum):
    PRESENT = "present"
    ABSENT = "absent"
    NOT_MENTIONED = "not_mentioned"
    UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class Provenance:
    kind: str                      # "real" | "synthetic"
    seed: int | None = None
    cfg_scale: float | None = None
    replica_index: int | None = None
    source_index: int | None = None

    def __post_init__(self):
        if self.kind not in ("real", "synthetic"):
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if self.kind == "synthetic" and (self.replica_index is None
                                         or self.replica_index < 1):
            raise ValueError("synthetic provenance needs a replica_index >= 1")

    @property
    def is_real(self) -> bool:
        return self.kind == "real"

    @classmethod
    def real(cls) -> "Provenance":
        return cls(kind="real")

    @classmethod
    def synthetic(cls, seed: int, cfg_scale: float, replica_index: int,
                  source_index: int) -> "Provenance":
        return cls(kind="synthetic", seed=seed, cfg_scale=cfg_scale,
                   replica_index=replica_index, source_index=source_index)


@dataclass(frozen=True)
class ImageRecord:
    pixels: np.ndarray             # (S, S) float32 in [0, 1]
    patient_id: int
    label_states: tuple            # 14 LabelState entries
    age_decade: int
    sex: int
    race: int
    provenance: Provenance

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2 or px.shape[0] != px.shape[1] or px.size == 0:
            raise ValueError("pixels must form a non-empty square array")
        if px.min() < -1e-5 or px.max() > 1.0 + 1e-5:
            raise ValueError("pixels must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        states = tuple(self.label_states)
        if len(states) != N_LABELS or not all(isinstance(s, LabelState) for s in states):
            raise ValueError(f"label_states must be {N_LABELS} LabelState values")
        object.__setattr__(self, "label_states", states)
        # range checks ride on ConditionVector validation
        ConditionVector(age_decade=self.age_decade, sex=self.sex, race=self.race)

    def condition_vector(self) -> ConditionVector:
        labels = tuple(1 if s is LabelState.PRESENT else 0 for s in self.label_states)
        return ConditionVector(labels=labels, age_decade=self.age_decade,
                               sex=self.sex, race=self.race)


# ---------------------------------------------------------------------------
# site specifications


@dataclass(frozen=True)
class RenderParams:
    background_level: float = 0.22
    motif_polarity: float = 1.0            # +1 bright motifs, -1 dark
    motif_intensity: tuple = (0.45, 0.70)  # uniform range, absolute value
    texture_freq: float = 3.0              # cycles across the canvas
    texture_amp: float = 0.05
    noise_amp: float = 0.02
    demog_strength: float = 0.35           # relative demographic modulation
    position_jitter: int = 1


@dataclass(frozen=True)
class SiteSpec:
    site_name: str
    prevalences: tuple                     # 14 base rates
    co_dependency: tuple = ()              # (earlier, later, boost) triples
    rendering: RenderParams = field(default_factory=RenderParams)
    n_patients: int = 100
    images_per_patient: tuple = (1, 3)     # inclusive range
    max_images: int | None = None
    uncertain_rate: float = 0.0
    not_mentioned_rate: float = 0.0
    image_size: int = 32

    def __post_init__(self):
        prev = tuple(float(p) for p in self.prevalences)
        if len(prev) != N_LABELS:
            raise ValueError(f"need {N_LABELS} prevalences")
        if any(not 0.0 <= p <= 1.0 for p in prev):
            raise ValueError("prevalences must lie in [0, 1]")
        object.__setattr__(self, "prevalences", prev)
        for (a, b, boost) in self.co_dependency:
            if not (0 <= a < N_LABELS and 0 <= b < N_LABELS and a < b):
                raise ValueError("co-dependency pairs need earlier < later label")
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        lo, hi = self.images_per_patient
        if not 1 <= lo <= hi:
            raise ValueError("images_per_patient must be an increasing range from >= 1")
        for rate in (self.uncertain_rate, self.not_mentioned_rate):
            if not 0.0 <= rate < 1.0:
                raise ValueError("state rates must lie in [0, 1)")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")


_BASE_PREVALENCES = (0.30, 0.22, 0.18, 0.25, 0.20, 0.15, 0.12,
                     0.28, 0.16, 0.14, 0.24, 0.10, 0.13, 0.35)
_CO_DEPENDENCY = ((0, 1, 0.30), (0, 8, 0.20), (3, 4, 0.25),
                  (6, 7, 0.20), (10, 12, 0.15))

_SITE_RENDERING = {
    "siteA": RenderParams(background_level=0.22, motif_polarity=1.0,
                          motif_intensity=(0.45, 0.70), texture_freq=3.0,
                          texture_amp=0.05, noise_amp=0.02),
    "siteB": RenderParams(background_level=0.74, motif_polarity=-1.0,
                          motif_intensity=(0.40, 0.62), texture_freq=5.0,
                          texture_amp=0.07, noise_amp=0.03),
}
_SITE_RATES = {"siteA": (0.05, 0.30), "siteB": (0.08, 0.25)}


def builtin_site(name: str, n_images: int, image_size: int = 32) -> SiteSpec:
    """Desk-scale spec for one of the two built-in sites, capped at
    exactly ``n_images`` images."""
    if name not in _SITE_RENDERING:
        raise ValueError(f"unknown site {name!r}; expected one of "
                         f"{sorted(_SITE_RENDERING)}")
    if n_images < 1:
        raise ValueError("n_images must be positive")
    uncertain, not_mentioned = _SITE_RATES[name]
    return SiteSpec(site_name=name, prevalences=_BASE_PREVALENCES,
                    co_dependency=_CO_DEPENDENCY, rendering=_SITE_RENDERING[name],
                    n_patients=n_images, max_images=n_images,
                    uncertain_rate=uncertain, not_mentioned_rate=not_mentioned,
                    image_size=image_size)


# ---------------------------------------------------------------------------
# rendering

def _motif_mask(index: int) -> np.ndarray:
    c = (_CELL - 1) / 2.0
    yy, xx = np.mgrid[0:_CELL, 0:_CELL].astype(np.float64)
    dy, dx = yy - c, xx - c
    r = np.hypot(dx, dy)
    ax, ay = np.abs(dx), np.abs(dy)
    cheb = np.maximum(ax, ay)
    masks = (
        r <= 3.0,                                             # disc
        (r >= 1.8) & (r <= 3.4),                              # ring
        ((ax <= 1.0) | (ay <= 1.0)) & (cheb <= 3.5),          # cross
        (ay <= 1.2) & (ax <= 4.0),                            # hbar
        (ax <= 1.2) & (ay <= 4.0),                            # vbar
        (cheb <= 3.4) & (cheb >= 1.8),                        # box
        ax + ay <= 3.6,                                       # diamond
        np.minimum.reduce([np.hypot(dx - sx, dy - sy)
                           for sx in (-2, 2) for sy in (-2, 2)]) <= 1.3,  # dots
        (r >= 2.0) & (r <= 3.6) & (dy <= 0),                  # arc
        (dx >= -1.0) & (dx <= 3.0) & (ay <= (dx + 1.0) * 0.8),  # wedge
        np.abs(dx - dy) <= 1.1,                               # stripe
        (cheb <= 3.0) & ~((ax <= 0.9) & (dy >= 0)),           # notch
        ((np.abs(dy + 3.0) <= 0.9) & (ax <= 3.2))
        | ((ax <= 0.9) & (dy >= -3.0) & (dy <= 3.2)),         # tee
        r <= 1.4,                                             # speck
    )
    return masks[index].astype(np.float64)


_MOTIF_MASKS = [_motif_mask(i) for i in range(N_LABELS)]


def _texture(rng: np.random.Generator, rp: RenderParams, age_decade: int,
             sex: int, race: int) -> np.ndarray:
    yy, xx = np.mgrid[0:_NATIVE, 0:_NATIVE].astype(np.float64) / _NATIVE
    theta = (math.pi / 2.0 if sex else 0.0) + (race - 2) * 0.12
    freq = rp.texture_freq * (1.0 + rp.demog_strength * (age_decade - 4.5) / 4.5)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = np.sin(2.0 * math.pi * freq * (math.cos(theta) * xx
                                          + math.sin(theta) * yy) + phase)
    return rp.texture_amp * wave + rng.normal(0.0, rp.noise_amp, (_NATIVE, _NATIVE))


def _render_native(true_present, rng, rp: RenderParams, age_decade, sex, race):
    canvas = rp.background_level + _texture(rng, rp, age_decade, sex, race)
    lo, hi = rp.motif_intensity
    j = rp.position_jitter
    for k in range(N_LABELS):
        if not true_present[k]:
            continue
        strength = rp.motif_polarity * rng.uniform(lo, hi)
        dy, dx = (int(rng.integers(-j, j + 1)), int(rng.integers(-j, j + 1))) if j else (0, 0)
        y0, x0 = (k // _GRID) * _CELL + dy, (k % _GRID) * _CELL + dx
        ys, xs = slice(max(y0, 0), min(y0 + _CELL, _NATIVE)), \
                 slice(max(x0, 0), min(x0 + _CELL, _NATIVE))
        mask = _MOTIF_MASKS[k][ys.start - y0:ys.stop - y0, xs.start - x0:xs.stop - x0]
        canvas[ys, xs] += strength * mask   # overlaps add up, clipped below
    return np.clip(canvas, 0.0, 1.0)


def preprocess(raw, image_size: int) -> np.ndarray:
    """Pad to square, bilinear-resize, equalize over 256 bins, clamp to [0, 1]."""
    out = equalize_histogram(resize_bilinear(pad_to_square(raw), image_size))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _sample_states(spec: SiteSpec, rng) -> tuple:
    present = np.zeros(N_LABELS, dtype=bool)
    boosts = {}
    for a, b, boost in spec.co_dependency:
        boosts.setdefault(b, []).append((a, boost))
    states = []
    for k in range(N_LABELS):
        p = spec.prevalences[k]
        for a, boost in boosts.get(k, ()):
            if present[a]:
                p += boost
        present[k] = rng.random() < min(max(p, 0.0), 0.95)
        if present[k]:
            state = LabelState.UNCERTAIN if rng.random() < spec.uncertain_rate \
                else LabelState.PRESENT
        else:
            state = LabelState.NOT_MENTIONED if rng.random() < spec.not_mentioned_rate \
                else LabelState.ABSENT
        states.append(state)
    return present, tuple(states)


def generate_site(spec: SiteSpec, seed: int, patient_base: int = 0) -> list:
    """Deterministic corpus for one site.

    Every patient gets an independent generator derived from
    (seed, patient index), so the corpus does not depend on scheduling
    and could be produced patient-parallel.
    """
    records = []
    for p in range(spec.n_patients):
        if spec.max_images is not None and len(records) >= spec.max_images:
            break
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, p]))
        age = int(rng.integers(0, 10))
        sex = int(rng.integers(0, 2))
        race = int(rng.integers(0, 5))
        lo, hi = spec.images_per_patient
        for _ in range(int(rng.integers(lo, hi + 1))):
            if spec.max_images is not None and len(records) >= spec.max_images:
                break
            present, states = _sample_states(spec, rng)
            raw = _render_native(present, rng, spec.rendering, age, sex, race)
            records.append(ImageRecord(
                pixels=preprocess(raw, spec.image_size),
                patient_id=patient_base + p, label_states=states,
                age_decade=age, sex=sex, race=race,
                provenance=Provenance.real()))
    return records


# ---------------------------------------------------------------------------
# splits and label resolution


def split_by_patient(records, fractions, seed: int):
    """Partition whole patients into (train, val, test) by shuffled order."""
    if len(fractions) != 3:
        raise ValueError("fractions must be a (train, val, test) triple")
    fracs = [float(f) for f in fractions]
    if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise ValueError("fractions must be non-negative and sum to 1")
    if not records:
        raise ValueError("cannot split an empty record list")
    patients = sorted({r.patient_id for r in records})
    order = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF])) \
        .permutation(len(patients))
    shuffled = [patients[i] for i in order]
    n = len(shuffled)
    cut1 = int(round(fracs[0] * n))
    cut2 = int(round((fracs[0] + fracs[1]) * n))
    buckets = {pid: 0 for pid in shuffled[:cut1]}
    buckets.update({pid: 1 for pid in shuffled[cut1:cut2]})
    buckets.update({pid: 2 for pid in shuffled[cut2:]})
    parts = ([], [], [])
    for r in records:
        parts[buckets[r.patient_id]].append(r)
    return parts


def resolve_labels(states, mode: str):
    """Map recorded states to (targets, mask, keep) under a resolution mode.

    mode "training": Present -> 1, Absent and NotMentioned -> 0; a record
    with any Uncertain slot is dropped (keep = False).
    mode "testing": same targets, but Uncertain slots stay and are masked
    out instead; the record is always kept.
    """
    if mode not in ("training", "testing"):
        raise ValueError(f"unknown resolution mode {mode!r}")
    states = tuple(states)
    if len(states) != N_LABELS or not all(isinstance(s, LabelState) for s in states):
        raise ValueError(f"expected {N_LABELS} LabelState values")
    targets = np.array([1.0 if s is LabelState.PRESENT else 0.0 for s in states],
                       dtype=np.float32)
    mask = np.ones(N_LABELS, dtype=bool)
    keep = True
    uncertain = [s is LabelState.UNCERTAIN for s in states]
    if mode == "training":
        keep = not any(uncertain)
    else:
        mask = ~np.array(uncertain)
    return targets, mask, keep


@dataclass(frozen=True)
class ResolvedData:
    """Stacked arrays ready for the classifier."""
    images: np.ndarray             # (N, S, S) float32
    targets: np.ndarray            # (N, 14) float32
    masks: np.ndarray              # (N, 14) bool
    records: tuple                 # the kept ImageRecords, same order

    def __len__(self):
        return self.images.shape[0]

    @property
    def all_real(self) -> bool:
        return all(r.provenance.is_real for r in self.records)


def resolve_dataset(records, mode: str) -> ResolvedData:
    kept, targets, masks = [], [], []
    for r in records:
        tgt, mask, keep = resolve_labels(r.label_states, mode)
        if not keep:
            continue
        kept.append(r)
        targets.append(tgt)
        masks.append(mask)
    if not kept:
        raise ValueError("no records survive label resolution")
    images = np.stack([r.pixels for r in kept])
    return ResolvedData(images=images, targets=np.stack(targets),
                        masks=np.stack(masks), records=tuple(kept))


def labels_matrix(records) -> np.ndarray:
    """(N, 14) binary matrix, 1 where the recorded state is Present."""
    return np.array([[1 if s is LabelState.PRESENT else 0 for s in r.label_states]
                     for r in records], dtype=np.int64)


# ---------------------------------------------------------------------------
# supplementation


def supplement(real, synthetic, ratio_percent: int, pure_synthetic: bool = False):
    """Compose a training list from real records plus whole synthetic replicas.

    ``ratio_percent`` must be a multiple of 100 in [0, 1000]; replicas
    1..ratio/100 are taken in full from the synthetic pool.  With
    ``pure_synthetic`` the real records are left out entirely (the ratio
    must then be positive).
    """
    ratio_percent = int(ratio_percent)
    if not 0 <= ratio_percent <= 1000 or ratio_percent % 100 != 0:
        raise ValueError("ratio_percent must be one of 0, 100, ..., 1000")
    if pure_synthetic and ratio_percent == 0:
        raise ValueError("pure synthetic training needs a positive ratio")
    k = ratio_percent // 100
    chosen = []
    if k:
        by_replica = {}
        for s in synthetic:
            if s.provenance.is_real:
                raise ValueError("synthetic pool contains a real-provenance record")
            by_replica.setdefault(s.provenance.replica_index, []).append(s)
        available = max(by_replica) if by_replica else 0
        if available < k:
            raise ValueError(f"pool holds {available} replicas, need {k}")
        sizes = {i: len(by_replica.get(i, ())) for i in range(1, k + 1)}
        if len(set(sizes.values())) != 1 or sizes[1] == 0:
            raise ValueError(f"incomplete replicas in pool: sizes {sizes}")
        for i in range(1, k + 1):
            chosen.extend(by_replica[i])
    out = list(chosen) if pure_synthetic else list(real) + chosen
    return out


# ---------------------------------------------------------------------------
# serialization


def save_dataset(path, records, meta: dict | None = None) -> None:
    """Write manifest.json + pixels.f32 (row-major little-endian float32)."""
    records = list(records)
    if not records:
        raise ValueError("refusing to save an empty dataset")
    size = records[0].pixels.shape[0]
    if any(r.pixels.shape != (size, size) for r in records):
        raise ValueError("all records must share one image size")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in records:
        prov = {k: v for k, v in asdict(r.provenance).items() if v is not None}
        entries.append({
            "patient_id": r.patient_id,
            "age_decade": r.age_decade, "sex": r.sex, "race": r.race,
            "labels": [s.value for s in r.label_states],
            "provenance": prov,
        })
    manifest = {"format_version": FORMAT_VERSION, "image_size": size,
                "label_names": list(LABEL_NAMES), "n_records": len(records),
                "meta": meta or {}, "records": entries}
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    pixels = np.stack([r.pixels for r in records]).astype("<f4")
    pixels.tofile(path / "pixels.f32")


def load_dataset(path) -> list:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format "
                         f"{manifest.get('format_version')!r}")
    n = manifest["n_records"]
    size = manifest["image_size"]
    pixels = np.fromfile(path / "pixels.f32", dtype="<f4")
    if pixels.size != n * size * size:
        raise ValueError("pixel blob size does not match the manifest")
    pixels = pixels.reshape(n, size, size)
    records = []
    for i, entry in enumerate(manifest["records"]):
        states = tuple(LabelState(v) for v in entry["labels"])
        records.append(ImageRecord(
            pixels=pixels[i], patient_id=entry["patient_id"],
            label_states=states, age_decade=entry["age_decade"],
            sex=entry["sex"], race=entry["race"],
            provenance=Provenance(**entry["provenance"])))
    return records
