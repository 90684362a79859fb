"""Ratio masks: oracle computation, application and resynthesis."""

from __future__ import annotations

import numpy as np

from .dsp import StftConfig, Spectrogram, Waveform, compress, decompose, decompress, istft, recompose, stft

#: Denominator floor of the oracle ratio mask.
IRM_FLOOR = 1e-8

MASK_DOMAINS = ("linear", "compressed")


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape {a.shape} != {b.shape}")


def irm_oracle(clean_mag, noisy_mag, eps: float = IRM_FLOOR) -> np.ndarray:
    """Clean-to-noisy magnitude ratio, clipped to [0, 1]."""
    clean_mag = np.asarray(clean_mag, dtype=np.float64)
    noisy_mag = np.asarray(noisy_mag, dtype=np.float64)
    _check_shapes(clean_mag, noisy_mag, "irm_oracle")
    if np.any(clean_mag < 0) or np.any(noisy_mag < 0):
        raise ValueError("magnitudes must be nonnegative")
    return np.clip(clean_mag / np.maximum(noisy_mag, eps), 0.0, 1.0)


def validate_mask(mask, shape=None) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} != spectrogram shape {tuple(shape)}")
    if not np.all((mask >= 0) & (mask <= 1)):
        raise ValueError("mask values must lie in [0, 1]")
    return mask


def apply_mask(noisy_mag, mask) -> np.ndarray:
    noisy_mag = np.asarray(noisy_mag, dtype=np.float64)
    return noisy_mag * validate_mask(mask, noisy_mag.shape)


def masked_magnitude(noisy_mag, mask, domain: str = "linear") -> tuple[np.ndarray, np.ndarray]:
    """Enhanced magnitude and its elementwise derivative w.r.t. the mask.

    ``domain="linear"`` multiplies the raw magnitude.  ``"compressed"``
    multiplies ``log(1 + |Y|)`` and decompresses the product afterwards.
    """
    noisy_mag = np.asarray(noisy_mag, dtype=np.float64)
    mask = validate_mask(mask, noisy_mag.shape)
    if domain == "linear":
        return noisy_mag * mask, noisy_mag
    if domain == "compressed":
        c = compress(noisy_mag)
        enhanced = decompress(mask * c)
        return enhanced, (enhanced + 1.0) * c
    raise ValueError(f"unknown mask domain {domain!r}; expected one of {MASK_DOMAINS}")


def reconstruct(enhanced_mag, noisy_phase, cfg: StftConfig | None = None, length: int | None = None) -> np.ndarray:
    """Resynthesize from an enhanced magnitude and the noisy phase."""
    cfg = cfg or StftConfig()
    bins = recompose(enhanced_mag, noisy_phase)
    if length is None:
        length = (bins.shape[0] - 1) * cfg.hop
    return istft(Spectrogram(bins, cfg, length))


def oracle_enhance(noisy, clean, cfg: StftConfig | None = None, domain: str = "linear") -> np.ndarray:
    """Enhance ``noisy`` with the ideal ratio mask computed from ``clean``."""
    noisy_spec = stft(noisy, cfg)
    noisy_mag, noisy_phase = decompose(noisy_spec)
    clean_mag, _ = decompose(stft(clean, noisy_spec.config))
    mask = irm_oracle(clean_mag, noisy_mag)
    enhanced, _ = masked_magnitude(noisy_mag, mask, domain)
    return reconstruct(enhanced, noisy_phase, noisy_spec.config, noisy_spec.original_length)


def enhance(noisy, model, cfg: StftConfig | None = None, ext_features=None, domain: str = "linear"):
    """Run the full inference chain of a mask estimator on one waveform.

    ``model`` needs ``predict_mask(compressed_mag, ext_features)`` returning a
    mask shaped like the spectrogram; a ``sample_rate`` attribute, if present,
    must match the input's.  Returns a :class:`Waveform` when given one,
    otherwise an array.
    """
    samples = noisy.samples if isinstance(noisy, Waveform) else noisy
    if isinstance(noisy, Waveform):
        model_sr = getattr(model, "sample_rate", None)
        if model_sr is not None and model_sr != noisy.sample_rate:
            raise ValueError(
                f"sample rate mismatch: waveform {noisy.sample_rate} Hz, model {model_sr} Hz"
            )
    spec = stft(samples, cfg)
    noisy_mag, noisy_phase = decompose(spec)
    mask = model.predict_mask(compress(noisy_mag), ext_features)
    enhanced, _ = masked_magnitude(noisy_mag, mask, domain)
    out = reconstruct(enhanced, noisy_phase, spec.config, spec.original_length)
    if isinstance(noisy, Waveform):
        return Waveform(out, noisy.sample_rate)
    return out
