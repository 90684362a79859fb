"""STFT analysis/synthesis and the magnitude-domain helpers built on it.

The transform is centered (reflect padding of ``n_fft // 2`` on both ends)
and uses a periodic Hann window for both analysis and synthesis, with the
overlap-add normalized by the summed squared window.  That normalization is
what makes 400/160 framing invertible, since a Hann window at that hop is not
constant-overlap-add on its own.

Besides the forward/inverse pair this module exposes their vector-Jacobian
products (:func:`stft_vjp`, :func:`istft_vjp`).  Complex gradients follow the
convention ``dL/dRe + 1j * dL/dIm``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

#: Largest value :func:`decompress` accepts before treating input as corrupt.
DECOMPRESS_CAP = 80.0

_WSUM_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono float64 samples plus their sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters. Defaults are 400-point FFT, 160 hop, 400 window."""

    n_fft: int = 400
    hop: int = 160
    win_length: int = 400
    window: str = "hann"

    def __post_init__(self):
        for name in ("n_fft", "hop", "win_length"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.n_fft % 2:
            raise ValueError(f"n_fft must be even, got {self.n_fft}")
        if self.win_length > self.n_fft:
            raise ValueError(
                f"win_length ({self.win_length}) must not exceed n_fft ({self.n_fft})"
            )
        if self.hop > self.win_length:
            raise ValueError(
                f"hop ({self.hop}) must not exceed win_length ({self.win_length})"
            )
        try:
            win = _window(self)
        except ValueError as exc:
            raise ValueError(f"unknown window {self.window!r}") from exc
        # squared-window overlap-add over one hop period must stay positive
        sq = win**2
        period = np.zeros(self.hop)
        for start in range(0, self.n_fft, self.hop):
            chunk = sq[start:start + self.hop]
            period[: len(chunk)] += chunk
        if period.min() <= _WSUM_FLOOR:
            raise ValueError(
                "squared-window overlap-add vanishes for this window/hop; "
                "the inverse STFT is undefined"
            )

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def pad(self) -> int:
        return self.n_fft // 2

    def n_frames(self, length: int) -> int:
        """Number of frames the centered STFT produces for ``length`` samples."""
        return 1 + length // self.hop

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT matrix of shape ``(n_frames, n_bins)``.

    ``original_length`` is the sample count of the analysed waveform, so the
    inverse can return a signal of exactly that length.
    """

    bins: np.ndarray
    config: StftConfig
    original_length: int

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.ndim != 2 or bins.shape[1] != self.config.n_bins:
            raise ValueError(
                f"expected bins of shape (n_frames, {self.config.n_bins}), got {bins.shape}"
            )
        expected = self.config.n_frames(self.original_length)
        if bins.shape[0] != expected:
            raise ValueError(
                f"{bins.shape[0]} frames inconsistent with original_length "
                f"{self.original_length} (expected {expected})"
            )
        if not np.all(np.isfinite(bins)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "bins", bins.astype(np.complex128, copy=False))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape

    def with_bins(self, bins: np.ndarray) -> "Spectrogram":
        return dataclasses.replace(self, bins=bins)


@lru_cache(maxsize=32)
def _window(cfg: StftConfig) -> np.ndarray:
    win = get_window(cfg.window, cfg.win_length, fftbins=True).astype(np.float64)
    if cfg.win_length < cfg.n_fft:
        left = (cfg.n_fft - cfg.win_length) // 2
        win = np.pad(win, (left, cfg.n_fft - cfg.win_length - left))
    win.flags.writeable = False
    return win


@lru_cache(maxsize=64)
def _frame_layout(cfg: StftConfig, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample index of every frame element, plus the squared-window OLA sum."""
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    ola_len = (n_frames - 1) * cfg.hop + cfg.n_fft
    wsum = np.bincount(
        idx.ravel(), weights=np.tile(_window(cfg) ** 2, n_frames), minlength=ola_len
    )
    idx.flags.writeable = False
    wsum.flags.writeable = False
    return idx, wsum


@lru_cache(maxsize=64)
def _pad_index(length: int, pad: int) -> np.ndarray:
    idx = np.pad(np.arange(length), pad, mode="reflect")
    idx.flags.writeable = False
    return idx


def _as_signal(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D waveform, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("empty waveform")
    if not np.all(np.isfinite(x)):
        raise ValueError("waveform contains non-finite samples")
    return x


def stft(x, cfg: StftConfig | None = None) -> Spectrogram:
    """Centered STFT of a real waveform.

    Parameters
    ----------
    x : array_like
        1-D real signal.
    cfg : StftConfig, optional
        Framing parameters, defaults to ``StftConfig()``.

    Returns
    -------
    Spectrogram
        ``1 + len(x) // hop`` frames by ``n_fft // 2 + 1`` bins.
    """
    cfg = cfg or StftConfig()
    x = _as_signal(x)
    length = x.size
    padded = x[_pad_index(length, cfg.pad)]
    n_frames = cfg.n_frames(length)
    frames = sliding_window_view(padded, cfg.n_fft)[:: cfg.hop][:n_frames]
    bins = np.fft.rfft(frames * _window(cfg), axis=-1)
    return Spectrogram(bins, cfg, length)


def istft(spec: Spectrogram) -> np.ndarray:
    """Weighted overlap-add inverse, trimmed to ``spec.original_length``."""
    cfg = spec.config
    n_frames = spec.shape[0]
    idx, wsum = _frame_layout(cfg, n_frames)
    frames = np.fft.irfft(spec.bins, n=cfg.n_fft, axis=-1) * _window(cfg)
    ola = np.bincount(idx.ravel(), weights=frames.ravel(), minlength=wsum.size)
    sl = slice(cfg.pad, cfg.pad + spec.original_length)
    norm = wsum[sl]
    if norm.min() <= _WSUM_FLOOR:
        raise ValueError("overlap-add normalization vanishes inside the signal")
    return ola[sl] / norm


def stft_vjp(grad: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Pull a gradient w.r.t. STFT bins back to the waveform."""
    grad = np.asarray(grad, dtype=np.complex128)
    n_frames = cfg.n_frames(length)
    if grad.shape != (n_frames, cfg.n_bins):
        raise ValueError(f"gradient shape {grad.shape} != {(n_frames, cfg.n_bins)}")
    # rfft adjoint: interior bins appear twice in irfft, so halve them first
    scale = np.full(cfg.n_bins, 0.5)
    scale[0] = scale[-1] = 1.0
    frame_grad = cfg.n_fft * np.fft.irfft(grad * scale, n=cfg.n_fft, axis=-1)
    frame_grad *= _window(cfg)
    idx, _ = _frame_layout(cfg, n_frames)
    pad_idx = _pad_index(length, cfg.pad)
    padded = np.bincount(idx.ravel(), weights=frame_grad.ravel(), minlength=pad_idx.size)
    return np.bincount(pad_idx, weights=padded[: pad_idx.size], minlength=length)


def istft_vjp(grad: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Pull a gradient w.r.t. the inverse-STFT output back to the bins."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (length,):
        raise ValueError(f"gradient shape {grad.shape} != {(length,)}")
    n_frames = cfg.n_frames(length)
    idx, wsum = _frame_layout(cfg, n_frames)
    buf = np.zeros(wsum.size)
    sl = slice(cfg.pad, cfg.pad + length)
    buf[sl] = grad / wsum[sl]
    frame_grad = buf[idx] * _window(cfg)
    # irfft adjoint: interior bins contribute twice, DC/Nyquist once
    scale = np.full(cfg.n_bins, 2.0)
    scale[0] = scale[-1] = 1.0
    return np.fft.rfft(frame_grad, axis=-1) * (scale / cfg.n_fft)


def decompose(spec) -> tuple[np.ndarray, np.ndarray]:
    """Split complex bins into magnitude and phase in (-pi, pi].

    Zero-magnitude bins get phase 0.
    """
    z = spec.bins if isinstance(spec, Spectrogram) else np.asarray(spec)
    mag = np.abs(z)
    phase = np.angle(z)
    phase[mag == 0] = 0.0
    phase[phase == -np.pi] = np.pi
    return mag, phase


def recompose(mag, phase) -> np.ndarray:
    """Inverse of :func:`decompose`: ``mag * exp(1j * phase)``."""
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape:
        raise ValueError(f"magnitude shape {mag.shape} != phase shape {phase.shape}")
    return mag * np.exp(1j * phase)


def compress(mag) -> np.ndarray:
    """``log(1 + x)`` on a nonnegative magnitude array."""
    mag = np.asarray(mag, dtype=np.float64)
    if not np.all(mag >= 0):
        raise ValueError("compress expects nonnegative finite magnitudes")
    return np.log1p(mag)


def decompress(values, cap: float = DECOMPRESS_CAP) -> np.ndarray:
    """``exp(x) - 1``; inputs above ``cap`` raise instead of saturating."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("decompress expects finite input")
    if values.size and values.max() > cap:
        raise OverflowError(f"decompress input {values.max():.6g} exceeds cap {cap}")
    return np.expm1(values)


def consistency_project(spec: Spectrogram) -> Spectrogram:
    """Map a spectrogram onto the set of STFTs of real signals."""
    return stft(istft(spec), spec.config)
