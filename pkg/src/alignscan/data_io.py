"""Synthetic misaligned multimodal data, missing-modality simulation, and file formats.

The generator stands in for sentiment corpora with pretrained encoders, which
are out of reach at desk scale. Each sample is driven by a latent curve with
six channels: a content channel (the sentiment signal), a deterministic time
ramp, and four shared context channels. Audio and video both observe content
plus context; language observes the ramp, the context, and a deliberately
weak copy of content. The label is the sign of the time-weighted content mean
over the clip: sum_t ramp(t) * content(t). Because every modality is
circularly shifted by its own per-sample offset (language least, as the
anchor), the label is only recoverable by pairing language's time reference
with audio/video content at matching true timesteps. A plain mean over a fully
circularly shifted sequence is shift-invariant, so an unaligned pooled readout
cannot solve the task; that is what makes the alignment ablations measurable.

Observation maps are structured so that cross-modal cosine geometry reflects
latent geometry: feature k of a modality carries channel k mod 6 scaled by a
fixed positive per-dimension gain (plus additive noise). Positive gains make
the cross-modal feature inner product a positively weighted inner product of
the latent vectors over commonly visible channels, so the transport plan's
per-row argmin recovers true temporal correspondence when noise permits.

Two file formats are provided and documented bit-exactly in the README:
the MMF1 binary container (32-bit floats on disk) and a JSONL interchange
schema for external feature extractors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .numcore import component_seed, make_rng

LATENT_CONTENT = 0
LATENT_RAMP = 1
LATENT_SHARED = (2, 3, 4, 5)
LATENT_DIM = 6

# language's weak direct view of the content channel: > 0 keeps single-modality
# evaluation above chance, small keeps the task genuinely cross-modal
LANGUAGE_CONTENT_GAIN = 0.25

# autocorrelation time of the latent curves, in anchor timesteps
CURVE_CORR_STEPS = 1.5

_MMF_MAGIC = b"MMF1"


@dataclass
class MultimodalSample:
    """One clip: three feature sequences, a sentiment score, a presence mask.

    ``label`` is the real-valued score in [-3, 3]; the binary class is
    ``label > 0``. ``mask`` flags (audio, video, language) presence; absent
    modalities keep their array shape but carry zeros.
    """

    audio: np.ndarray
    video: np.ndarray
    language: np.ndarray
    label: float
    mask: tuple[bool, bool, bool] = (True, True, True)

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.video = np.asarray(self.video, dtype=np.float64)
        self.language = np.asarray(self.language, dtype=np.float64)
        self.mask = tuple(bool(m) for m in self.mask)
        if len(self.mask) != 3 or not any(self.mask):
            raise ParameterError("sample must have at least one present modality")
        for name, arr, present in zip(("audio", "video", "language"), self.modalities(), self.mask):
            if arr.ndim != 2:
                raise DimensionError(f"{name} features must be 2-D, got shape {arr.shape}")
            if present and arr.shape[0] < 1:
                raise DimensionError(f"present modality {name} has empty sequence")

    def modalities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.audio, self.video, self.language)


@dataclass
class Dataset:
    """An ordered collection of samples plus optional generator ground truth."""

    samples: list[MultimodalSample]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> MultimodalSample:
        return self.samples[i]

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])


@dataclass(frozen=True)
class SynthConfig:
    num_samples: int = 256
    T_a: int = 12
    T_v: int = 12
    T_l: int = 12
    d_a: int = 8
    d_v: int = 8
    d_l: int = 8
    misalignment_max_shift: int = 4
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("num_samples", "T_a", "T_v", "T_l", "d_a", "d_v", "d_l"):
            if getattr(self, name) < 1:
                raise ParameterError(f"SynthConfig.{name} must be >= 1")
        if self.noise_std < 0:
            raise ParameterError("SynthConfig.noise_std must be >= 0")
        if not 0 <= self.misalignment_max_shift < min(self.T_a, self.T_v, self.T_l):
            raise ParameterError("misalignment_max_shift must be in [0, min sequence length)")


def _observation_map(d_mod: int, visibility: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Fixed linear map latent -> feature space: (d_mod, LATENT_DIM).

    Feature k observes channel k mod LATENT_DIM with a positive random gain,
    masked by the modality's channel visibility.
    """
    gains = rng.uniform(0.7, 1.3, size=d_mod)
    g = np.zeros((d_mod, LATENT_DIM))
    for k in range(d_mod):
        ch = k % LATENT_DIM
        g[k, ch] = gains[k] * visibility[ch]
    return g


def _latent_curve(rng: np.random.Generator, grid: int, corr_grid: float) -> np.ndarray:
    """Stationary smoothed Gaussian curves, one column per latent channel."""
    rho = float(np.exp(-1.0 / corr_grid))
    innovations = rng.normal(size=(grid, LATENT_DIM)) * np.sqrt(1.0 - rho * rho)
    z = np.empty((grid, LATENT_DIM))
    z[0] = rng.normal(size=LATENT_DIM)
    for g in range(1, grid):
        z[g] = rho * z[g - 1] + innovations[g]
    z[:, LATENT_RAMP] = np.linspace(-1.0, 1.0, grid)
    return z


def _sample_grid(T: int, grid: int) -> np.ndarray:
    return np.floor((np.arange(T) + 0.5) * grid / T).astype(np.int64)


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Generate a temporally misaligned trimodal dataset.

    Deterministic given the config: byte-identical output for identical
    configs. The returned ``meta`` records the per-sample circular shifts and
    the observation maps (generator ground truth used by alignment tests; it
    is not part of any serialized format).
    """
    rng = make_rng(component_seed(cfg.seed, "synth"))
    vis_audio = np.array([1.0, 0.0, 1.0, 1.0, 1.0, 1.0])
    vis_video = np.array([1.0, 0.0, 1.0, 1.0, 1.0, 1.0])
    vis_lang = np.array([LANGUAGE_CONTENT_GAIN, 1.0, 1.0, 1.0, 1.0, 1.0])
    g_a = _observation_map(cfg.d_a, vis_audio, rng)
    g_v = _observation_map(cfg.d_v, vis_video, rng)
    g_l = _observation_map(cfg.d_l, vis_lang, rng)

    t_max = max(cfg.T_a, cfg.T_v, cfg.T_l)
    grid = 4 * t_max
    corr_grid = CURVE_CORR_STEPS * grid / cfg.T_l

    samples: list[MultimodalSample] = []
    shifts: list[tuple[int, int, int]] = []
    scores_raw: list[float] = []
    for _ in range(cfg.num_samples):
        z = _latent_curve(rng, grid, corr_grid)
        raw = float(np.mean(z[:, LATENT_RAMP] * z[:, LATENT_CONTENT]))
        score = float(3.0 * np.tanh(raw / 0.3))
        if cfg.misalignment_max_shift > 0:
            k_a = int(rng.integers(1, cfg.misalignment_max_shift + 1))
            k_v = int(rng.integers(1, cfg.misalignment_max_shift + 1))
        else:
            k_a = k_v = 0
        k_l = 0  # anchor keeps the true timeline
        mods = []
        for T, d, gmap, k in (
            (cfg.T_a, cfg.d_a, g_a, k_a),
            (cfg.T_v, cfg.d_v, g_v, k_v),
            (cfg.T_l, cfg.d_l, g_l, k_l),
        ):
            idx = (_sample_grid(T, grid)[(np.arange(T) + k) % T]).astype(np.int64)
            feats = z[idx] @ gmap.T
            if cfg.noise_std > 0:
                feats = feats + rng.normal(size=feats.shape) * cfg.noise_std
            mods.append(feats)
        samples.append(MultimodalSample(mods[0], mods[1], mods[2], score))
        shifts.append((k_a, k_v, k_l))
        scores_raw.append(raw)

    meta = {
        "shifts": shifts,
        "scores_raw": scores_raw,
        "maps": {"audio": g_a, "video": g_v, "language": g_l},
        "config": cfg,
    }
    return Dataset(samples, meta)


# -- missing-modality protocol ------------------------------------------


def missing_draws(n: int, p: float, seed: int) -> np.ndarray:
    """Raw per-(sample, modality) Bernoulli(p) drop draws, before the fix-up.

    Exposed so the drop probability can be audited independently of the
    guarantee that at least one modality survives.
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"missing rate must be in [0, 1], got {p}")
    rng = make_rng(component_seed(seed, "missing"))
    return rng.random((n, 3)) < p


def apply_missing(dataset: Dataset, p: float, seed: int) -> Dataset:
    """Drop whole modalities independently with probability ``p``.

    Dropped modalities are zeroed and unmasked; when all three would drop,
    one uniformly random modality is retained. Pure: returns a new dataset.
    """
    drops = missing_draws(len(dataset), p, seed)
    keep_rng = make_rng(component_seed(seed, "missing-keep"))
    out: list[MultimodalSample] = []
    for s, drop in zip(dataset, drops):
        drop = drop.copy()
        if drop.all():
            drop[keep_rng.integers(0, 3)] = False
        arrays = [np.zeros_like(a) if d else a for a, d in zip(s.modalities(), drop)]
        mask = tuple(bool(not d) and m for d, m in zip(drop, s.mask))
        out.append(MultimodalSample(arrays[0], arrays[1], arrays[2], s.label, mask))
    return Dataset(out, dict(dataset.meta))


# -- MMF1 binary container ----------------------------------------------


def mmf_write(dataset: Dataset, path) -> None:
    """Write the MMF1 container.

    Layout (little-endian): magic ``MMF1``; u32 sample count; per sample
    three modality blocks (u32 T, u32 d, then T*d float32 values row-major)
    in audio, video, language order; u8 mask (bit0 audio, bit1 video,
    bit2 language); float64 label.
    """
    with open(path, "wb") as fh:
        fh.write(_MMF_MAGIC)
        fh.write(struct.pack("<I", len(dataset)))
        for s in dataset:
            for arr in s.modalities():
                t, d = arr.shape
                fh.write(struct.pack("<II", t, d))
                fh.write(arr.astype("<f4").tobytes())
            bits = s.mask[0] | (s.mask[1] << 1) | (s.mask[2] << 2)
            fh.write(struct.pack("<B", bits))
            fh.write(struct.pack("<d", s.label))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated file at byte offset {self.pos} (needed {n} more bytes)")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def mmf_read(path) -> Dataset:
    """Read an MMF1 container; values come back at 32-bit precision."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != _MMF_MAGIC:
        raise FormatError(f"{path}: bad magic, expected MMF1")
    (count,) = struct.unpack("<I", r.take(4))
    samples = []
    for _ in range(count):
        mods = []
        for _ in range(3):
            t, d = struct.unpack("<II", r.take(8))
            raw = r.take(4 * t * d)
            mods.append(np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(t, d))
        (bits,) = struct.unpack("<B", r.take(1))
        (label,) = struct.unpack("<d", r.take(8))
        mask = (bool(bits & 1), bool(bits & 2), bool(bits & 4))
        samples.append(MultimodalSample(mods[0], mods[1], mods[2], label, mask))
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes after sample {count}")
    return Dataset(samples)


# -- JSONL interchange ----------------------------------------------------


def jsonl_write(dataset: Dataset, path) -> None:
    """Write one JSON object per line: audio/video/language arrays, label, mask."""
    with open(path, "w") as fh:
        for s in dataset:
            fh.write(
                json.dumps(
                    {
                        "audio": s.audio.tolist(),
                        "video": s.video.tolist(),
                        "language": s.language.tolist(),
                        "label": s.label,
                        "mask": list(s.mask),
                    }
                )
            )
            fh.write("\n")


def _parse_matrix(obj, key: str, lineno: int) -> np.ndarray:
    rows = obj[key]
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise DimensionError(f"line {lineno}: {key} must be a non-empty list of rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DimensionError(f"line {lineno}: ragged {key} rows")
    try:
        return np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"line {lineno}: non-numeric value in {key}: {exc}") from None


def jsonl_read(path) -> Dataset:
    """Parse the JSONL schema; same invariants as MultimodalSample."""
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: malformed JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise FormatError(f"line {lineno}: expected a JSON object")
            missing = {"audio", "video", "language", "label"} - obj.keys()
            if missing:
                raise FormatError(f"line {lineno}: missing keys {sorted(missing)}")
            mats = {k: _parse_matrix(obj, k, lineno) for k in ("audio", "video", "language")}
            mask = tuple(bool(b) for b in obj.get("mask", (True, True, True)))
            samples.append(
                MultimodalSample(mats["audio"], mats["video"], mats["language"], float(obj["label"]), mask)
            )
    return Dataset(samples)


def split_dataset(dataset: Dataset, n_first: int) -> tuple[Dataset, Dataset]:
    """Deterministic head/tail split (generation order is already random)."""
    if not 0 < n_first < len(dataset):
        raise ParameterError(f"split point {n_first} outside (0, {len(dataset)})")
    return Dataset(dataset.samples[:n_first], dict(dataset.meta)), Dataset(
        dataset.samples[n_first:], dict(dataset.meta)
    )
