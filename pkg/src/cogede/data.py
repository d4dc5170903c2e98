"""Data blocks, fusion datasets, CSV/JSON ingestion and a synthetic ERP generator.

A block is one matrix ``X`` of shape (channels, P) for a (modality, subject,
split) triple. All blocks of a dataset share the column axis P, which is the
condition-stacked time axis. ``tilde_mask`` selects the columns of ``X`` that
drive the reconstruction (``X_tilde = X[:, tilde_mask]``); the reconstruction
target is always the full ``X``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "SPLITS",
    "FORMULATIONS",
    "DatasetError",
    "ErpBlock",
    "FusionDataset",
    "SynthConfig",
    "load_dataset",
    "save_dataset",
    "read_matrix",
    "write_matrix",
    "stack_group",
    "stack_multimodal",
    "stack_conditions",
    "make_tilde_mask",
    "synth_dataset",
    "halve_heldout",
    "as_formulation",
]

SPLITS = ("train", "validation", "test")
FORMULATIONS = ("group", "multimodal", "multimodal_multisubject")
_ALIASES = {"mmms": "multimodal_multisubject", "mm": "multimodal"}

# label used for the merged axis of stacked blocks
POOLED = "all"


class DatasetError(ValueError):
    """Raised when a dataset or manifest violates the block data model."""


def normalize_formulation(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in FORMULATIONS:
        raise DatasetError(f"unknown formulation {name!r}")
    return name


@dataclass(eq=False)
class ErpBlock:
    """One data matrix ``X^(m,b)`` with its labels.

    ``sources`` records, for stacked blocks, which original blocks occupy
    which row ranges as ``(modality, subject, start, stop)`` tuples.
    """

    modality: str
    subject: str
    split: str
    data: np.ndarray
    tilde_mask: np.ndarray
    condition_layout: list[tuple[str, int]]
    sources: tuple = ()

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.tilde_mask = np.asarray(self.tilde_mask, dtype=bool)
        self.condition_layout = [(str(lab), int(n)) for lab, n in self.condition_layout]
        if self.split not in SPLITS:
            raise DatasetError(f"block {self.key}: unknown split {self.split!r}")
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise DatasetError(f"block {self.key}: data must be a nonempty 2-D matrix")
        if not np.all(np.isfinite(self.data)):
            raise DatasetError(f"block {self.key}: data contains non-finite values")
        P = self.data.shape[1]
        if self.tilde_mask.shape != (P,):
            raise DatasetError(f"block {self.key}: tilde_mask length differs from P={P}")
        if not 1 <= self.tilde_mask.sum() <= P:
            raise DatasetError(f"block {self.key}: tilde_mask selects no columns")
        if sum(n for _, n in self.condition_layout) != P:
            raise DatasetError(f"block {self.key}: condition layout does not sum to P={P}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.modality, self.subject, self.split)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def shared_dim(self) -> int:
        return self.data.shape[1]

    @property
    def tilde(self) -> np.ndarray:
        return self.data[:, self.tilde_mask]

    def equals(self, other: "ErpBlock") -> bool:
        return (
            self.key == other.key
            and self.condition_layout == other.condition_layout
            and np.array_equal(self.tilde_mask, other.tilde_mask)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


def _split_rank(split):
    return SPLITS.index(split)


@dataclass(eq=False)
class FusionDataset:
    """An ordered set of blocks sharing the column dimension P.

    Blocks are kept sorted by (split, modality, subject). ``truth`` optionally
    holds the generating factors of synthetic data: ``{"H": array,
    "W": {(modality, subject): array}}``.
    """

    blocks: list[ErpBlock]
    formulation: str
    truth: dict | None = None

    def __post_init__(self):
        self.formulation = normalize_formulation(self.formulation)
        if not self.blocks:
            raise DatasetError("dataset has no blocks")
        self.blocks = sorted(
            self.blocks, key=lambda b: (_split_rank(b.split), b.modality, b.subject)
        )
        first = self.blocks[0]
        keys = set()
        for b in self.blocks:
            if b.shared_dim != first.shared_dim:
                raise DatasetError(
                    f"inconsistent shared dimension: block {b.key} has P={b.shared_dim}, "
                    f"block {first.key} has P={first.shared_dim}"
                )
            if b.condition_layout != first.condition_layout:
                raise DatasetError(f"block {b.key}: condition layout differs from {first.key}")
            if not np.array_equal(b.tilde_mask, first.tilde_mask):
                raise DatasetError(f"block {b.key}: tilde_mask differs from {first.key}")
            if b.key in keys:
                raise DatasetError(f"duplicate block key {b.key}")
            keys.add(b.key)
        for split in self.splits:
            blocks = self.split(split)
            if self.formulation == "group" and len(blocks) != 1:
                raise DatasetError(f"group formulation needs one block per split, {split!r} has {len(blocks)}")
            if self.formulation == "multimodal":
                mods = [b.modality for b in blocks]
                if len(set(mods)) != len(mods):
                    raise DatasetError(f"multimodal formulation needs one block per modality in {split!r}")

    @property
    def P(self) -> int:
        return self.blocks[0].shared_dim

    @property
    def tilde_mask(self) -> np.ndarray:
        return self.blocks[0].tilde_mask

    @property
    def condition_layout(self):
        return self.blocks[0].condition_layout

    @property
    def splits(self) -> list[str]:
        present = {b.split for b in self.blocks}
        return [s for s in SPLITS if s in present]

    def split(self, name: str) -> list[ErpBlock]:
        return [b for b in self.blocks if b.split == name]

    def modalities(self) -> list[str]:
        return sorted({b.modality for b in self.blocks})

    def subjects(self) -> list[str]:
        return sorted({b.subject for b in self.blocks})

    def equals(self, other: "FusionDataset") -> bool:
        return (
            self.formulation == other.formulation
            and len(self.blocks) == len(other.blocks)
            and all(a.equals(b) for a, b in zip(self.blocks, other.blocks))
        )


# ---------------------------------------------------------------------------
# stacking


def stack_conditions(per_condition, labels):
    """Concatenate per-condition matrices along the shared axis.

    Parameters
    ----------
    per_condition : sequence of ndarray, each (N, T)
    labels : sequence of str, one per matrix

    Returns
    -------
    stacked : ndarray (N, C*T)
    layout : list of (label, T)
    """
    mats = [np.asarray(m, dtype=float) for m in per_condition]
    if len(mats) != len(labels):
        raise DatasetError("need exactly one label per condition matrix")
    if not mats:
        raise DatasetError("no condition matrices given")
    shape = mats[0].shape
    for lab, m in zip(labels, mats):
        if m.ndim != 2 or m.shape != shape:
            raise DatasetError(f"condition {lab!r} has shape {m.shape}, expected {shape}")
    return np.hstack(mats), [(str(lab), shape[1]) for lab in labels]


def make_tilde_mask(condition_layout, prestim_len):
    """Boolean mask that drops the first ``prestim_len`` samples of every condition."""
    parts = []
    for label, n in condition_layout:
        if not 0 <= prestim_len < n:
            raise DatasetError(
                f"prestim_len {prestim_len} out of range for condition {label!r} of length {n}"
            )
        seg = np.ones(n, dtype=bool)
        seg[:prestim_len] = False
        parts.append(seg)
    return np.concatenate(parts)


def _stack(blocks, modality, subject, split):
    rows = []
    sources = []
    start = 0
    for b in blocks:
        # re-stacking an already stacked block keeps the original provenance
        if b.sources:
            for m, s, lo, hi in b.sources:
                sources.append((m, s, start + lo, start + hi))
        else:
            sources.append((b.modality, b.subject, start, start + b.n_channels))
        rows.append(b.data)
        start += b.n_channels
    first = blocks[0]
    return ErpBlock(modality, subject, split, np.vstack(rows), first.tilde_mask.copy(),
                    list(first.condition_layout), tuple(sources))


def stack_group(dataset: FusionDataset) -> FusionDataset:
    """Concatenate all blocks of each split row-wise into one group block."""
    if dataset.formulation == "group":
        raise DatasetError("dataset is already in the group formulation")
    blocks = [_stack(dataset.split(s), POOLED, POOLED, s) for s in dataset.splits]
    return FusionDataset(blocks, "group", dataset.truth)


def stack_multimodal(dataset: FusionDataset) -> FusionDataset:
    """Concatenate subjects within each modality (multimodal formulation)."""
    if dataset.formulation != "multimodal_multisubject":
        raise DatasetError("multimodal stacking needs a multimodal_multisubject dataset")
    blocks = []
    for s in dataset.splits:
        for m in dataset.modalities():
            members = [b for b in dataset.split(s) if b.modality == m]
            if members:
                blocks.append(_stack(members, m, POOLED, s))
    return FusionDataset(blocks, "multimodal", dataset.truth)


def as_formulation(dataset: FusionDataset, formulation: str) -> FusionDataset:
    """Return ``dataset`` restacked into ``formulation`` (coarsening only)."""
    formulation = normalize_formulation(formulation)
    if formulation == dataset.formulation:
        return dataset
    if formulation == "group":
        return stack_group(dataset)
    if formulation == "multimodal":
        return stack_multimodal(dataset)
    raise DatasetError(f"cannot refine a {dataset.formulation} dataset into {formulation}")


def halve_heldout(dataset: FusionDataset, source_split: str = "test") -> FusionDataset:
    """Divide one held-out split into validation and test by subject.

    The first half of the sorted subject ids becomes the validation split and
    the latter half the test split. Only meaningful for per-subject blocks.
    """
    if dataset.formulation != "multimodal_multisubject":
        raise DatasetError("subject halving needs a multimodal_multisubject dataset")
    subjects = sorted({b.subject for b in dataset.split(source_split)})
    first = set(subjects[: len(subjects) // 2])
    blocks = []
    for b in dataset.blocks:
        if b.split == source_split:
            b = replace(b, split="validation" if b.subject in first else "test")
        elif b.split in ("validation", "test"):
            continue
        blocks.append(b)
    return FusionDataset(blocks, dataset.formulation, dataset.truth)


# ---------------------------------------------------------------------------
# file formats


def write_matrix(path, M):
    # %.17g round-trips float64 exactly
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g", encoding="utf-8")


def read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float, ndmin=2, encoding="utf-8"))


def _block_filename(b: ErpBlock) -> str:
    return f"{b.split}_{b.modality}_{b.subject}.csv"


def _prestim_from_mask(mask, layout):
    """Recover a uniform prestim length from a mask, or None if not of that form."""
    for n in range(layout[0][1]):
        try:
            if np.array_equal(make_tilde_mask(layout, n), mask):
                return n
        except DatasetError:
            break
    return None


def save_dataset(dataset: FusionDataset, outdir, demean: bool = False) -> Path:
    """Write block CSVs, ``manifest.json`` and (if present) ground truth CSVs.

    Returns the manifest path.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    prestim = _prestim_from_mask(dataset.tilde_mask, dataset.condition_layout)
    if prestim is None:
        raise DatasetError("tilde_mask is not expressible as a per-condition prestimulus length")
    entries = []
    for b in dataset.blocks:
        name = _block_filename(b)
        write_matrix(outdir / name, b.data)
        entries.append({"modality": b.modality, "subject": b.subject, "split": b.split,
                        "path": name, "n_channels": b.n_channels})
    manifest = {
        "formulation": dataset.formulation,
        "P": dataset.P,
        "condition_layout": [[lab, n] for lab, n in dataset.condition_layout],
        "tilde_prestim_len": prestim,
        "demean": bool(demean),
        "blocks": entries,
    }
    if dataset.truth is not None:
        write_matrix(outdir / "truth_H.csv", dataset.truth["H"])
        for (m, s), W in sorted(dataset.truth["W"].items()):
            write_matrix(outdir / f"truth_W_{m}_{s}.csv", W)
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_dataset(manifest_path) -> FusionDataset:
    """Read a manifest and its block CSVs into a :class:`FusionDataset`.

    Relative block paths are resolved against the manifest's directory. When
    the manifest sets ``demean`` each channel (row) has its mean over the full
    shared axis removed.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: invalid JSON ({exc})") from None
    for fld in ("formulation", "P", "condition_layout", "blocks"):
        if fld not in manifest:
            raise DatasetError(f"{manifest_path}: missing field {fld!r}")
    root = manifest_path.parent
    P = int(manifest["P"])
    layout = [(str(lab), int(n)) for lab, n in manifest["condition_layout"]]
    mask = make_tilde_mask(layout, int(manifest.get("tilde_prestim_len", 0)))
    demean = bool(manifest.get("demean", False))

    blocks = []
    seen = {}
    for entry in manifest["blocks"]:
        key = (str(entry["modality"]), str(entry["subject"]), str(entry["split"]))
        path = root / entry["path"]
        if key in seen:
            raise DatasetError(f"{path}: duplicate block key {key} (also {seen[key]})")
        seen[key] = path
        if not path.is_file():
            raise DatasetError(f"{path}: matrix file missing for block {key}")
        X = read_matrix(path)
        n_ch = int(entry.get("n_channels", X.shape[0]))
        if X.shape[0] != n_ch:
            raise DatasetError(
                f"{path}: shape mismatch for block {key}: manifest says {n_ch} channels, file has {X.shape[0]}"
            )
        if X.shape[1] != P:
            raise DatasetError(
                f"{path}: inconsistent shared dimension for block {key}: manifest P={P}, file has {X.shape[1]}"
            )
        if demean:
            X = X - X.mean(axis=1, keepdims=True)
        try:
            blocks.append(ErpBlock(*key, X, mask, layout))
        except DatasetError as exc:
            raise DatasetError(f"{path}: {exc}") from None

    truth = None
    if (root / "truth_H.csv").is_file():
        W = {}
        for p in sorted(root.glob("truth_W_*.csv")):
            m, s = p.stem[len("truth_W_"):].split("_", 1)
            W[(m, s)] = read_matrix(p)
        truth = {"H": read_matrix(root / "truth_H.csv"), "W": W}
    return FusionDataset(blocks, manifest["formulation"], truth)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    """Parameters of the synthetic multimodal ERP generator.

    ``snr`` is the power ratio ||W H||^2 / ||E||^2 per block; ``np.inf``
    gives noiseless data. ``prestim_len`` leading samples of each condition
    carry no signal and are excluded from ``X_tilde``.
    """

    n_subjects: int = 4
    n_modalities: int = 2
    channels_per_modality: list[int] = field(default_factory=lambda: [8, 12])
    n_timepoints: int = 60
    n_conditions: int = 3
    k_true: int = 3
    snr: float = 4.0
    heterogeneity: float = 0.0
    seed: int = 0
    prestim_len: int = 0

    def __post_init__(self):
        self.channels_per_modality = [int(c) for c in self.channels_per_modality]
        counts = [self.n_subjects, self.n_modalities, self.n_timepoints, self.n_conditions, self.k_true]
        if min(counts) < 1 or min(self.channels_per_modality, default=0) < 1:
            raise ValueError("all counts must be >= 1")
        if len(self.channels_per_modality) != self.n_modalities:
            raise ValueError("channels_per_modality needs one entry per modality")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if not 0.0 <= self.heterogeneity <= 1.0:
            raise ValueError("heterogeneity must lie in [0, 1]")
        if not 0 <= self.prestim_len < self.n_timepoints:
            raise ValueError("prestim_len must lie in [0, n_timepoints)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


CONDITION_NAMES = ("famous", "scrambled", "unfamiliar")


def _condition_labels(C):
    if C <= len(CONDITION_NAMES):
        return list(CONDITION_NAMES[:C])
    return [f"cond{c}" for c in range(C)]


def _temporal_profiles(rng, cfg: SynthConfig) -> np.ndarray:
    T, C, k = cfg.n_timepoints, cfg.n_conditions, cfg.k_true
    t = np.arange(T, dtype=float)
    lo = cfg.prestim_len
    span = T - lo
    H = np.zeros((k, C * T))
    for j in range(k):
        # one latency and width per component, amplitude per condition
        center = lo + rng.uniform(0.1, 0.9) * span
        width = rng.uniform(0.03, 0.1) * span + 0.5
        for c in range(C):
            amp = rng.uniform(0.5, 1.5)
            seg = amp * np.exp(-0.5 * ((t - center) / width) ** 2)
            seg[:lo] = 0.0
            H[j, c * T:(c + 1) * T] = seg
    return H


def synth_dataset(config: SynthConfig) -> FusionDataset:
    """Generate a multimodal, multisubject dataset with known low-rank signal.

    Each block is ``X = W H + E`` with shared temporal profiles ``H`` and
    per-block spatial maps ``W = (1 - h) W_modality + h W_individual``. The
    train, validation and test splits are independent noise draws on the same
    signal; the noise is rescaled so that each block's SNR is exact.
    """
    cfg = config
    root = np.random.SeedSequence(int(cfg.seed))
    s_profile, s_shared, s_indiv, s_noise = root.spawn(4)
    H = _temporal_profiles(np.random.default_rng(s_profile), cfg)
    labels = _condition_labels(cfg.n_conditions)
    layout = [(lab, cfg.n_timepoints) for lab in labels]
    mask = make_tilde_mask(layout, cfg.prestim_len)

    rng_shared = np.random.default_rng(s_shared)
    rng_indiv = np.random.default_rng(s_indiv)
    rng_noise = np.random.default_rng(s_noise)
    h = cfg.heterogeneity
    blocks = []
    W_truth = {}
    for mi, n_ch in enumerate(cfg.channels_per_modality):
        modality = f"m{mi}"
        W_shared = rng_shared.standard_normal((n_ch, cfg.k_true))
        for si in range(cfg.n_subjects):
            subject = f"s{si:02d}"
            W = (1.0 - h) * W_shared + h * rng_indiv.standard_normal((n_ch, cfg.k_true))
            W_truth[(modality, subject)] = W
            signal = W @ H
            power = np.sum(signal**2)
            for split in SPLITS:
                E = rng_noise.standard_normal(signal.shape)
                if np.isinf(cfg.snr) or power == 0.0:
                    X = signal.copy()
                else:
                    X = signal + E * np.sqrt(power / (cfg.snr * np.sum(E**2)))
                blocks.append(ErpBlock(modality, subject, split, X, mask, layout))
    return FusionDataset(blocks, "multimodal_multisubject", {"H": H, "W": W_truth})

