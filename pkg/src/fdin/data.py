"""Feature-map sequences, synthetic planted-relation data and the dataset file.

Synthetic sequences
-------------------
Every region carries five latent components that are mixed into its
``h*w*C`` feature vector by a fixed random per-region matrix:

* component 0: an onset/apex/offset bump ``u_k * (1 - cos(2*pi*t/T)) / 2``
  whose signed peak intensity ``u_k ~ U(-1, 1)`` is drawn once per subject;
* components 1..4: 2-4 sinusoids with random frequency, phase and amplitude
  (unused slots are zero), redrawn for every sequence.

Only the planted pair's bumps drive the label:

``pair-sum-regression``
    ``label = center + scale * sum_t e_a(t) e_b(t) / sum_t bump(t)^2 + N(0, sigma^2)``
    which reduces to ``center + scale * u_a * u_b``.
``pair-phase-classification``
    class 1 when the planted bumps move in phase (``u_a * u_b > 0``), else 0;
    with ``sigma > 0`` the product is jittered by ``N(0, sigma^2)`` first.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .regions import RegionSpec, grid_spec

LABEL_KINDS = ("pair-sum-regression", "pair-phase-classification")
N_COMPONENTS = 5


@dataclass
class FeatureMapSequence:
    frames: np.ndarray  # [T, H, W, C]
    label: float
    subject_id: str

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1 or min(self.frames.shape[1:]) < 1:
            raise ValueError(f"frames must be [T>=1, H, W, C], got {self.frames.shape}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]


class DatasetFormatError(ValueError):
    """Raised when a dataset or checkpoint file is malformed."""


@dataclass
class SyntheticSpec:
    rows: int = 3
    cols: int = 3
    height: int = 6
    width: int = 6
    channels: int = 8
    t_min: int = 16
    t_max: int = 16
    planted: tuple[int, int] = (3, 7)  # 0-based; left cheek and mouth on the 3x3 face grid
    label_kind: str = "pair-sum-regression"
    sigma: float = 0.1
    n_samples: int = 600
    seed: int = 0
    label_center: float = 40.0
    label_scale: float = 30.0
    contrast: tuple[int, int] | None = None  # optional second relation, 0-based
    contrast_scale: float = 0.0
    distractor_amplitude: float = 1.0  # sinusoid amplitudes ~ U(0.2, 1) * this
    shared_mixing: float = 0.0  # 0: independent per-region mixing, 1: one matrix for all

    def __post_init__(self):
        self.planted = tuple(int(k) for k in self.planted)
        n = self.rows * self.cols
        if self.contrast is not None:
            self.contrast = tuple(int(k) for k in self.contrast)
            if len(self.contrast) != 2 or len(set(self.contrast)) != 2 or \
                    not all(0 <= k < n for k in self.contrast):
                raise ValueError(f"contrast must name two distinct regions on the grid, got {self.contrast}")
        if len(self.planted) != 2 or len(set(self.planted)) != 2:
            raise ValueError(f"planted must name two distinct regions, got {self.planted}")
        for k in self.planted:
            if not 0 <= k < n:
                raise ValueError(f"planted region {k + 1} lies outside the {self.rows}x{self.cols} grid")
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError(f"invalid length range [{self.t_min}, {self.t_max}]")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        self.region_spec()  # validates grid divisibility

    def region_spec(self) -> RegionSpec:
        return grid_spec(self.height, self.width, self.rows, self.cols)

    @property
    def is_classification(self) -> bool:
        return self.label_kind == "pair-phase-classification"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["planted"] = list(self.planted)
        if self.contrast is not None:
            d["contrast"] = list(self.contrast)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        return cls(**d)

    def label_moments(self) -> tuple[float, float]:
        """Closed-form (mean, variance) of the label for iid ``u ~ U(-1, 1)``.

        ``E[u_a u_b] = 0`` and ``Var[u_a u_b] = E[u^2]^2 = 1/9``; the
        classification class is 1 with probability 1/2.
        """
        if self.is_classification:
            return 0.5, 0.25
        var = self.label_scale ** 2 / 9.0 + self.sigma ** 2
        if self.contrast is not None:
            var += self.contrast_scale ** 2 * 2.0 / 3.0
        return self.label_center, var


def bump(t_len: int) -> np.ndarray:
    t = np.arange(t_len)
    return (1.0 - np.cos(2.0 * np.pi * (t + 0.5) / t_len)) / 2.0


def mixing_matrices(spec: SyntheticSpec) -> np.ndarray:
    """Fixed per-region mixing, ``[N, F, N_COMPONENTS]``."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    n = spec.rows * spec.cols
    f = spec.region_spec().region_width(spec.channels)
    own = rng.normal(0.0, 1.0, size=(n, f, N_COMPONENTS))
    common = rng.normal(0.0, 1.0, size=(1, f, N_COMPONENTS))
    w = spec.shared_mixing
    return (w * common + np.sqrt(1.0 - w * w) * own) / np.sqrt(N_COMPONENTS)


def _subject_sizes(n: int, rng: np.random.Generator) -> list[int]:
    sizes: list[int] = []
    while sum(sizes) < n:
        sizes.append(int(rng.integers(2, 5)))
    sizes[-1] -= sum(sizes) - n
    if sizes[-1] == 1 and len(sizes) > 1:
        sizes.pop()
        sizes[-1] += 1
    return sizes


def _components(t_len: int, intensity: float, rng: np.random.Generator,
                distractor: float = 1.0) -> np.ndarray:
    comps = np.zeros((t_len, N_COMPONENTS))
    comps[:, 0] = intensity * bump(t_len)
    n_sin = int(rng.integers(2, 5))
    t = np.arange(t_len) / t_len
    for m in range(n_sin):
        freq = rng.uniform(0.5, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.2, 1.0) * distractor
        comps[:, 1 + m] = amp * np.sin(2.0 * np.pi * freq * t + phase)
    return comps


def planted_label(spec: SyntheticSpec, comps: list[np.ndarray], noise: float) -> float:
    """Label from the planted regions' component-0 envelopes (``comps`` per region)."""
    b = bump(comps[0].shape[0])
    pa, pb = spec.planted
    corr = float(np.dot(comps[pa][:, 0], comps[pb][:, 0]) / np.dot(b, b))
    if spec.is_classification:
        return float(corr + noise > 0)
    label = spec.label_center + spec.label_scale * corr
    if spec.contrast is not None:
        ca, cb = spec.contrast
        label += spec.contrast_scale * float(np.sum(comps[ca][:, 0] - comps[cb][:, 0]) / b.sum())
    return label + noise


def generate(spec: SyntheticSpec) -> list[FeatureMapSequence]:
    """Deterministic synthetic dataset for ``spec`` (seed included)."""
    regions = spec.region_spec()
    mix = mixing_matrices(spec)
    n_regions = regions.n_regions
    root = np.random.SeedSequence(spec.seed)
    layout_rng = np.random.default_rng(root.spawn(1)[0])
    sizes = _subject_sizes(spec.n_samples, layout_rng)
    subject_seeds = np.random.SeedSequence([spec.seed, 2]).spawn(len(sizes))
    out: list[FeatureMapSequence] = []
    for s_idx, (size, s_seed) in enumerate(zip(sizes, subject_seeds)):
        subj_rng = np.random.default_rng(s_seed)
        intensities = subj_rng.uniform(-1.0, 1.0, size=n_regions)
        for rep_seed in s_seed.spawn(size):
            rng = np.random.default_rng(rep_seed)
            t_len = int(rng.integers(spec.t_min, spec.t_max + 1))
            frames = np.zeros((t_len, spec.height, spec.width, spec.channels))
            comps = [_components(t_len, intensities[k], rng, spec.distractor_amplitude)
                     for k in range(n_regions)]
            for k, ((r0, r1), (c0, c1)) in enumerate(regions.windows):
                feat = comps[k] @ mix[k].T  # [T, F]
                frames[:, r0:r1, c0:c1, :] = feat.reshape(t_len, r1 - r0, c1 - c0, spec.channels)
            noise = float(rng.normal(0.0, spec.sigma)) if spec.sigma > 0 else 0.0
            label = planted_label(spec, comps, noise)
            out.append(FeatureMapSequence(frames, label, f"s{s_idx:04d}"))
    return out


def unmix_components(seq: FeatureMapSequence, spec: SyntheticSpec, region: int) -> np.ndarray:
    """Recover a region's latent components by least squares against the known mixing."""
    regions = spec.region_spec()
    (r0, r1), (c0, c1) = regions.windows[region]
    feat = seq.frames[:, r0:r1, c0:c1, :].reshape(seq.T, -1)
    mix = mixing_matrices(spec)[region]
    sol, *_ = np.linalg.lstsq(mix, feat.T, rcond=None)
    return sol.T


# ---------------------------------------------------------------------------
# dataset file
# ---------------------------------------------------------------------------

DATA_MAGIC = b"FDINDATA"
DATA_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIQB")  # magic, version, T(max), H, W, C, count, dtype code
_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}


def write_dataset(data: list[FeatureMapSequence], path: str | Path, dtype: str = "float64",
                  sidecar: dict | None = None) -> None:
    """Write ``data`` in the binary dataset layout (all integers little-endian).

    Header: magic, version, max T, H, W, C, sample count, real-type code.
    Record: subject-id length (u16) + utf-8 bytes, label (f64), T (u32),
    then ``T*H*W*C`` reals.  ``sidecar`` is written as ``<path>.json``.
    """
    if not data:
        raise ValueError("refusing to write an empty dataset")
    code = {"float64": 1, "float32": 2}[dtype]
    real = _DTYPE_CODES[code]
    _, h, w, c = data[0].frames.shape
    for k, seq in enumerate(data):
        if seq.frames.shape[1:] != (h, w, c):
            raise ValueError(f"record {k}: frame shape {seq.frames.shape[1:]} differs from {(h, w, c)}")
    t_max = max(seq.T for seq in data)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(DATA_MAGIC, DATA_VERSION, t_max, h, w, c, len(data), code))
        for seq in data:
            sid = seq.subject_id.encode("utf-8")
            fh.write(struct.pack("<H", len(sid)))
            fh.write(sid)
            fh.write(struct.pack("<dI", float(seq.label), seq.T))
            fh.write(np.ascontiguousarray(seq.frames, dtype=real).tobytes())
    if sidecar is not None:
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_dataset(path: str | Path) -> list[FeatureMapSequence]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file shorter than the dataset header")
    magic, version, t_max, h, w, c, count, code = _HEADER.unpack_from(raw, 0)
    if magic != DATA_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}, not a dataset file")
    if version != DATA_VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {version} (expected {DATA_VERSION})")
    if code not in _DTYPE_CODES:
        raise DatasetFormatError(f"{path}: unknown real-type code {code}")
    real = _DTYPE_CODES[code]
    pos = _HEADER.size
    out = []
    for k in range(count):
        try:
            (n,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            if pos + n > len(raw):
                raise struct.error("subject id")
            sid = raw[pos:pos + n].decode("utf-8")
            pos += n
            label, t_len = struct.unpack_from("<dI", raw, pos)
            pos += 12
        except struct.error as exc:
            raise DatasetFormatError(f"{path}: truncated in record {k}") from exc
        if t_len < 1 or t_len > t_max:
            raise DatasetFormatError(f"{path}: record {k} declares T={t_len} outside [1, {t_max}]")
        nbytes = t_len * h * w * c * real.itemsize
        if pos + nbytes > len(raw):
            raise DatasetFormatError(f"{path}: truncated in record {k}")
        frames = np.frombuffer(raw, dtype=real, count=t_len * h * w * c, offset=pos)
        frames = frames.astype(np.float64).reshape(t_len, h, w, c)
        pos += nbytes
        out.append(FeatureMapSequence(frames, label, sid))
    if pos != len(raw):
        raise DatasetFormatError(f"{path}: {len(raw) - pos} trailing bytes after {count} records")
    return out


def read_sidecar(path: str | Path) -> dict | None:
    side = Path(str(path) + ".json")
    if not side.exists():
        return None
    return json.loads(side.read_text())


PRESETS = {
    "planted-pair": dict(label_kind="pair-sum-regression"),
    "planted-phase": dict(label_kind="pair-phase-classification", sigma=0.0),
    "tiny": dict(rows=2, cols=2, height=2, width=2, channels=2, t_min=3, t_max=3,
                 planted=(0, 3), n_samples=24),
}


def preset(name: str, **overrides) -> SyntheticSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return SyntheticSpec(**kw)


def group_by_length(data: list[FeatureMapSequence]) -> dict[int, list[int]]:
    """Indices of ``data`` keyed by sequence length."""
    groups: dict[int, list[int]] = {}
    for k, seq in enumerate(data):
        groups.setdefault(seq.T, []).append(k)
    return groups


def stack_frames(data: list[FeatureMapSequence], idx) -> np.ndarray:
    seqs = [data[k] for k in idx]
    lengths = {s.T for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"cannot stack sequences of different lengths {sorted(lengths)}")
    return np.stack([s.frames for s in seqs])
