"""Perceptual contrast stretching (PCS).

The log-compressed magnitude spectrum is multiplied bin-wise by band
importance gains, decompressed, and resynthesized with the original phase.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dsp import StftConfig, Spectrogram, decompose, decompress, istft, recompose, stft

Band = tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class BandImportanceWeights:
    """One positive gain per STFT bin, optionally with the bands it came from."""

    weights: np.ndarray
    source_bands: tuple[Band, ...] | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError(f"weights must be 1-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or not np.all(w > 0):
            raise ValueError("band importance weights must be finite and positive")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    @classmethod
    def identity(cls, n_bins: int) -> "BandImportanceWeights":
        return cls(np.ones(n_bins))


@dataclass(frozen=True)
class PcsMode:
    """Which side of a training pair gets stretched."""

    apply_to_input: bool = True
    apply_to_target: bool = True

    _NAMES = {
        (True, True): "both",
        (True, False): "input",
        (False, True): "target",
        (False, False): "none",
    }

    @property
    def name(self) -> str:
        return self._NAMES[(self.apply_to_input, self.apply_to_target)]

    @classmethod
    def from_name(cls, name: str) -> "PcsMode":
        aliases = {"input-only": "input", "target-only": "target"}
        name = aliases.get(name, name)
        for flags, known in cls._NAMES.items():
            if known == name:
                return cls(*flags)
        raise ValueError(
            f"unknown PCS mode {name!r}; expected one of {sorted(cls._NAMES.values())}"
        )

    def at_test_time(self) -> "PcsMode":
        """Targets are never stretched at inference; inputs only if trained that way."""
        return PcsMode(self.apply_to_input, False)


def default_bif_path() -> Path:
    return Path(str(resources.files("pcs_enhance") / "data" / "bif_pcs400.txt"))


def load_bif(path=None) -> list[Band]:
    """Read a ``low_hz high_hz gain`` table; ``#`` starts a comment."""
    path = Path(path) if path is not None else default_bif_path()
    bands = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'low_hz high_hz gain', got {raw!r}")
        try:
            low, high, gain = (float(p) for p in parts)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric field in {raw!r}") from None
        bands.append((low, high, gain))
    if not bands:
        raise ValueError(f"{path}: no bands defined")
    return bands


def bif_digest(path=None) -> str:
    path = Path(path) if path is not None else default_bif_path()
    return hashlib.sha256(path.read_bytes()).hexdigest()


def expand_bands(bands, cfg: StftConfig | None = None, sample_rate: int = 16000) -> BandImportanceWeights:
    """Assign every FFT bin the gain of the band holding its center frequency.

    Bands are half-open ``[low, high)``; the top band also owns the Nyquist
    bin.  Bands must tile ``[0, sample_rate / 2]`` exactly.
    """
    cfg = cfg or StftConfig()
    nyquist = sample_rate / 2
    bands = sorted((float(lo), float(hi), float(g)) for lo, hi, g in bands)
    if not bands:
        raise ValueError("no bands given")
    for lo, hi, gain in bands:
        if not hi > lo:
            raise ValueError(f"band ({lo}, {hi}) has non-positive width")
        if not gain > 0:
            raise ValueError(f"band ({lo}, {hi}) has non-positive gain {gain}")
    if bands[0][0] != 0:
        raise ValueError(f"bands leave a gap at [0, {bands[0][0]})")
    for (lo0, hi0, _), (lo1, hi1, _) in zip(bands, bands[1:]):
        if lo1 < hi0:
            raise ValueError(f"bands ({lo0}, {hi0}) and ({lo1}, {hi1}) overlap")
        if lo1 > hi0:
            raise ValueError(f"bands leave a gap at [{hi0}, {lo1})")
    if bands[-1][1] != nyquist:
        raise ValueError(f"bands end at {bands[-1][1]} Hz, expected Nyquist {nyquist}")

    freqs = np.arange(cfg.n_bins) * sample_rate / cfg.n_fft
    lows = np.array([b[0] for b in bands])
    gains = np.array([b[2] for b in bands])
    which = np.searchsorted(lows, freqs, side="right") - 1
    return BandImportanceWeights(gains[which], tuple(bands))


def default_weights(cfg: StftConfig | None = None, sample_rate: int = 16000) -> BandImportanceWeights:
    return expand_bands(load_bif(), cfg, sample_rate)


def pcs_compress(spec) -> np.ndarray:
    """Log-compressed magnitude ``log(|S| + 1)``."""
    mag, _ = decompose(spec)
    return np.log1p(mag)


def _as_weights(w, n_bins: int) -> np.ndarray:
    weights = w.weights if isinstance(w, BandImportanceWeights) else np.asarray(w, dtype=np.float64)
    if weights.shape != (n_bins,):
        raise ValueError(f"{weights.size} weights for {n_bins} frequency bins")
    return weights


def pcs_stretch(compressed, w) -> np.ndarray:
    """Scale each bin of a compressed magnitude spectrum by its gain."""
    compressed = np.asarray(compressed, dtype=np.float64)
    return compressed * _as_weights(w, compressed.shape[-1])


def pcs_spectrum(spec: Spectrogram, w) -> Spectrogram:
    """Stretched spectrogram before resynthesis: stretched magnitude, original phase.

    This is the matrix :func:`apply_pcs` inverts.  It is generally not a
    consistent spectrogram, so re-analysing the output waveform gives
    magnitudes that differ from it wherever neighbouring frames disagree.
    """
    _, phase = decompose(spec)
    stretched = decompress(pcs_stretch(pcs_compress(spec), w))
    return spec.with_bins(recompose(stretched, phase))


def apply_pcs(x, w, cfg: StftConfig | None = None) -> np.ndarray:
    """Contrast-stretch a waveform; output length equals input length."""
    return istft(pcs_spectrum(stft(x, cfg), w))
