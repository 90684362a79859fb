"""Training objective: wSDR, compressed-magnitude L1 and its consistent twin.

``combined_loss`` builds the enhanced spectrum ``mask * |Y| * exp(j angle Y)``
once and evaluates

* ``wsdr`` on the resynthesized waveform,
* ``mag_l1`` between ``log(1 + enhanced magnitude)`` and ``log(1 + |S|)``,
* ``cs_mag_l1`` on the same quantities after both spectra went through
  ``stft(istft(.))``.

:class:`PairLoss` caches the per-utterance constants and returns the exact
gradient of the weighted total with respect to every mask entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig, Spectrogram, consistency_project, decompose, istft, istft_vjp, stft, stft_vjp
from .masking import masked_magnitude, validate_mask

DEFAULT_WEIGHTS = (1.0, 1.0, 1.0)
LOSS_NAMES = ("wsdr", "mag_l1", "cs_mag_l1")


@dataclass(frozen=True)
class LossBreakdown:
    wsdr: float
    mag_l1: float
    cs_mag_l1: float
    total: float
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS

    def as_row(self) -> dict:
        return {"wsdr": self.wsdr, "mag_l1": self.mag_l1, "cs_mag_l1": self.cs_mag_l1, "total": self.total}


def _check_weights(weights) -> tuple[float, float, float]:
    weights = tuple(float(w) for w in weights)
    if len(weights) != 3:
        raise ValueError(f"expected three loss weights, got {len(weights)}")
    if not all(np.isfinite(w) and w >= 0 for w in weights):
        raise ValueError(f"loss weights must be finite and nonnegative, got {weights}")
    return weights


def _cosine(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Cosine similarity and its gradient w.r.t. ``b`` (zero if either is silent)."""
    aa = float(a @ a)
    bb = float(b @ b)
    if aa == 0.0 or bb == 0.0:
        return 0.0, np.zeros_like(b)
    denom = np.sqrt(aa * bb)
    cos = float(a @ b) / denom
    grad = a / denom - cos * b / bb
    return min(1.0, max(-1.0, cos)), grad


def _wsdr(noisy, clean, enhanced) -> tuple[float, np.ndarray]:
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    enhanced = np.asarray(enhanced, dtype=np.float64)
    if not noisy.shape == clean.shape == enhanced.shape or noisy.ndim != 1:
        raise ValueError(
            f"wsdr needs equal-length 1-D signals, got {noisy.shape}, {clean.shape}, {enhanced.shape}"
        )
    noise = noisy - clean
    noise_est = noisy - enhanced
    clean_energy = float(clean @ clean)
    noise_energy = float(noise @ noise)
    if clean_energy == 0.0 and noise_energy == 0.0:
        raise ValueError("wsdr undefined: noisy and clean signals are both silent")
    alpha = clean_energy / (clean_energy + noise_energy)
    cos_speech, g_speech = _cosine(clean, enhanced)
    cos_noise, g_noise = _cosine(noise, noise_est)
    # -(alpha*c1 + (1-alpha)*c2) rearranged so that c1 == c2 == 1 gives exactly -1
    loss = -cos_noise - alpha * (cos_speech - cos_noise)
    # d noise_est / d enhanced = -1
    grad = -alpha * g_speech + (1.0 - alpha) * g_noise
    return float(min(1.0, max(-1.0, loss))), grad


def wsdr_loss(noisy, clean, enhanced) -> float:
    """Weighted SDR loss in [-1, 1]; -1 for a perfect estimate.

    The speech term is the cosine between ``clean`` and ``enhanced``, the noise
    term the cosine between the true residual ``noisy - clean`` and the
    estimated one ``noisy - enhanced``.  They are mixed by the clean share of
    total energy.
    """
    return _wsdr(noisy, clean, enhanced)[0]


def mag_l1_loss(enhanced_mag_c, clean_mag_c) -> float:
    """Mean absolute difference of two compressed magnitude spectra."""
    a = np.asarray(enhanced_mag_c, dtype=np.float64)
    b = np.asarray(clean_mag_c, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mag_l1: shape {a.shape} != {b.shape}")
    return float(np.mean(np.abs(a - b)))


def cs_mag_l1_loss(enhanced_spec: Spectrogram, clean_spec: Spectrogram) -> float:
    """``mag_l1_loss`` after projecting both spectrograms onto consistent STFTs."""
    if enhanced_spec.config != clean_spec.config or enhanced_spec.shape != clean_spec.shape:
        raise ValueError("cs_mag_l1 needs spectrograms with matching config and shape")
    enh = np.log1p(np.abs(consistency_project(enhanced_spec).bins))
    ref = np.log1p(np.abs(consistency_project(clean_spec).bins))
    return mag_l1_loss(enh, ref)


class PairLoss:
    """Loss and mask gradient for one (noisy, clean) pair.

    Everything that depends only on the pair (noisy STFT, compressed clean
    targets) is computed once in the constructor.
    """

    def __init__(self, noisy, clean, cfg: StftConfig | None = None, weights=DEFAULT_WEIGHTS,
                 domain: str = "linear"):
        self.noisy = np.asarray(noisy, dtype=np.float64)
        self.clean = np.asarray(clean, dtype=np.float64)
        if self.noisy.shape != self.clean.shape:
            raise ValueError(f"noisy {self.noisy.shape} and clean {self.clean.shape} lengths differ")
        if not np.any(self.noisy) and not np.any(self.clean):
            raise ValueError("noisy and clean signals are both silent")
        self.weights = _check_weights(weights)
        self.domain = domain
        self.spec = stft(self.noisy, cfg)
        self.cfg = self.spec.config
        self.length = self.spec.original_length
        self.noisy_mag, phase = decompose(self.spec)
        self.unit_phase = np.exp(1j * phase)
        clean_spec = stft(self.clean, self.cfg)
        self.clean_mag_c = np.log1p(np.abs(clean_spec.bins))
        self.clean_cs_mag_c = np.log1p(np.abs(consistency_project(clean_spec).bins))

    @property
    def shape(self) -> tuple[int, int]:
        return self.spec.shape

    def enhanced_spectrogram(self, mask) -> Spectrogram:
        enhanced, _ = masked_magnitude(self.noisy_mag, mask, self.domain)
        return self.spec.with_bins(enhanced * self.unit_phase)

    def __call__(self, mask, need_grad: bool = True):
        """Return ``(LossBreakdown, dtotal/dmask or None)``."""
        mask = validate_mask(mask, self.shape)
        w_wsdr, w_mag, w_cs = self.weights
        n = mask.size

        enhanced_mag, d_mag_d_mask = masked_magnitude(self.noisy_mag, mask, self.domain)
        enhanced_spec = self.spec.with_bins(enhanced_mag * self.unit_phase)
        enhanced_wav = istft(enhanced_spec)

        wsdr, g_wav = _wsdr(self.noisy, self.clean, enhanced_wav)

        diff_mag = np.log1p(enhanced_mag) - self.clean_mag_c
        mag_l1 = float(np.mean(np.abs(diff_mag)))

        projected = stft(enhanced_wav, self.cfg).bins
        proj_mag = np.abs(projected)
        diff_cs = np.log1p(proj_mag) - self.clean_cs_mag_c
        cs_mag_l1 = float(np.mean(np.abs(diff_cs)))

        total = float(w_wsdr * wsdr + w_mag * mag_l1 + w_cs * cs_mag_l1)
        breakdown = LossBreakdown(wsdr, mag_l1, cs_mag_l1, total, self.weights)
        if not need_grad:
            return breakdown, None

        # gradient w.r.t. the enhanced waveform, then through the inverse STFT
        g_wav = w_wsdr * g_wav
        if w_cs:
            g_abs = w_cs * np.sign(diff_cs) / (n * (1.0 + proj_mag))
            with np.errstate(invalid="ignore", divide="ignore"):
                direction = np.where(proj_mag > 0, projected / proj_mag, 0.0)
            g_wav = g_wav + stft_vjp(g_abs * direction, self.cfg, self.length)
        g_spec = istft_vjp(g_wav, self.cfg, self.length)
        g_mag = np.real(g_spec * np.conj(self.unit_phase))
        if w_mag:
            g_mag += w_mag * np.sign(diff_mag) / (n * (1.0 + enhanced_mag))
        return breakdown, g_mag * d_mag_d_mask


def combined_loss(noisy, clean, mask, weights=DEFAULT_WEIGHTS, cfg: StftConfig | None = None,
                  domain: str = "linear") -> LossBreakdown:
    return PairLoss(noisy, clean, cfg, weights, domain)(mask, need_grad=False)[0]


def loss_gradient(noisy, clean, mask, weights=DEFAULT_WEIGHTS, cfg: StftConfig | None = None,
                  domain: str = "linear") -> np.ndarray:
    """Gradient of the weighted total loss w.r.t. each mask entry."""
    return PairLoss(noisy, clean, cfg, weights, domain)(mask)[1]
