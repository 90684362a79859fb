"""Objective scores: STOI, SI-SDR and segmental SNR, plus corpus evaluation."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

from .dsp import StftConfig

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps

# STOI constants (Taal et al., 2011)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # frames, 384 ms
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0

SI_SDR_CAP_DB = 100.0


@lru_cache(maxsize=8)
def _resampling_filter(up: int, down: int) -> np.ndarray:
    # Kaiser-windowed sinc, 10 zero crossings per side at the narrower band edge
    max_rate = max(up, down)
    taps = firwin(2 * 10 * max_rate + 1, 1.0 / max_rate, window=("kaiser", 5.0))
    taps.flags.writeable = False
    return taps


def resample(x, fs_in: int, fs_out: int) -> np.ndarray:
    """Polyphase resampling with a filter fixed in this module."""
    x = np.asarray(x, dtype=np.float64)
    if fs_in == fs_out:
        return x
    g = gcd(int(fs_in), int(fs_out))
    up, down = fs_out // g, fs_in // g
    return resample_poly(x, up, down, window=np.array(_resampling_filter(up, down)))


@lru_cache(maxsize=4)
def third_octave_matrix(fs: int = STOI_FS, nfft: int = STOI_NFFT, num_bands: int = STOI_BANDS,
                        min_freq: float = STOI_MIN_FREQ) -> tuple[np.ndarray, np.ndarray]:
    """0/1 matrix summing FFT power bins into one-third-octave bands.

    Returns ``(matrix, center_frequencies)``; band edges snap to the nearest
    FFT bin.
    """
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands)
    centers = min_freq * 2.0 ** (k / 3.0)
    lows = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    highs = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((num_bands, f.size))
    for i in range(num_bands):
        lo = int(np.argmin((f - lows[i]) ** 2))
        hi = int(np.argmin((f - highs[i]) ** 2))
        obm[i, lo:hi] = 1.0
    obm.flags.writeable = False
    return obm, centers


def _frames(x: np.ndarray, size: int, hop: int) -> np.ndarray:
    starts = range(0, x.size - size, hop)
    return np.array([x[s:s + size] for s in starts]).reshape(-1, size)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n, size = frames.shape
    out = np.zeros((n - 1) * hop + size) if n else np.zeros(0)
    for i, fr in enumerate(frames):
        out[i * hop:i * hop + size] += fr
    return out


def _remove_silent_frames(x, y, dyn_range, size, hop):
    win = np.hanning(size + 2)[1:-1]
    xf = _frames(x, size, hop) * win
    yf = _frames(y, size, hop) * win
    energies = 20 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = (energies.max() - dyn_range - energies) < 0
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _stoi_spectrum(x: np.ndarray) -> np.ndarray:
    win = np.hanning(STOI_FRAME + 2)[1:-1]
    frames = _frames(x, STOI_FRAME, STOI_FRAME // 2) * win
    return np.fft.rfft(frames, n=STOI_NFFT, axis=-1).T


def stoi(clean, processed, fs: int = 16000, clip: bool = True) -> float:
    """Short-time objective intelligibility of ``processed`` w.r.t. ``clean``.

    Signals are resampled to 10 kHz, frames more than 40 dB below the clean
    peak are dropped, and band envelopes over 384 ms segments are compared by
    normalized, clipped correlation.
    """
    clean = np.asarray(clean, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if clean.shape != processed.shape or clean.ndim != 1:
        raise ValueError(f"stoi needs equal-length 1-D signals, got {clean.shape} and {processed.shape}")
    if not np.any(clean):
        raise ValueError("stoi undefined for a silent clean signal")
    x = resample(clean, fs, STOI_FS)
    y = resample(processed, fs, STOI_FS)
    x, y = _remove_silent_frames(x, y, STOI_DYN_RANGE_DB, STOI_FRAME, STOI_FRAME // 2)

    obm, _ = third_octave_matrix()
    x_spec = _stoi_spectrum(x)
    y_spec = _stoi_spectrum(y)
    if x_spec.shape[1] < STOI_SEGMENT:
        raise ValueError(
            f"signal too short for STOI: {x_spec.shape[1]} active frames, need {STOI_SEGMENT}"
        )
    x_tob = np.sqrt(obm @ np.abs(x_spec) ** 2)
    y_tob = np.sqrt(obm @ np.abs(y_spec) ** 2)

    n_seg = x_tob.shape[1] - STOI_SEGMENT + 1
    idx = np.arange(STOI_SEGMENT)[None, :] + np.arange(n_seg)[:, None]
    x_seg = x_tob[:, idx].transpose(1, 0, 2)  # (segments, bands, frames)
    y_seg = y_tob[:, idx].transpose(1, 0, 2)

    norm = np.linalg.norm(x_seg, axis=2, keepdims=True) / (np.linalg.norm(y_seg, axis=2, keepdims=True) + EPS)
    y_prime = np.minimum(y_seg * norm, x_seg * (1.0 + 10.0 ** (-STOI_BETA_DB / 20.0)))

    y_prime = y_prime - y_prime.mean(axis=2, keepdims=True)
    x_c = x_seg - x_seg.mean(axis=2, keepdims=True)
    y_prime /= np.linalg.norm(y_prime, axis=2, keepdims=True) + EPS
    x_c /= np.linalg.norm(x_c, axis=2, keepdims=True) + EPS
    d = float(np.sum(y_prime * x_c) / (n_seg * STOI_BANDS))
    return min(1.0, max(0.0, d)) if clip else d


def si_sdr(clean, processed, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant SDR in dB, capped at ``cap_db`` for (near) perfect estimates."""
    clean = np.asarray(clean, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if clean.shape != processed.shape:
        raise ValueError(f"si_sdr needs equal lengths, got {clean.shape} and {processed.shape}")
    ref_energy = float(clean @ clean)
    if ref_energy == 0.0:
        raise ValueError("si_sdr undefined for a silent clean signal")
    target = (float(processed @ clean) / ref_energy) * clean
    err = processed - target
    t_energy = float(target @ target)
    e_energy = float(err @ err)
    if e_energy == 0.0:
        return cap_db
    if t_energy == 0.0:
        return -cap_db
    return float(np.clip(10.0 * np.log10(t_energy / e_energy), -cap_db, cap_db))


def seg_snr(clean, processed, fs: int = 16000, frame_ms: float = 30.0,
            floor_db: float = -10.0, ceil_db: float = 35.0) -> float:
    """Mean per-frame SNR over Hann-windowed 30 ms frames, 75 % overlap, clipped to [-10, 35] dB."""
    clean = np.asarray(clean, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if clean.shape != processed.shape:
        raise ValueError(f"seg_snr needs equal lengths, got {clean.shape} and {processed.shape}")
    size = int(round(frame_ms * fs / 1000.0))
    hop = size // 4
    if clean.size < size:
        raise ValueError("signal shorter than one segmental-SNR frame")
    win = np.hanning(size)
    starts = np.arange(0, clean.size - size + 1, hop)
    idx = starts[:, None] + np.arange(size)[None, :]
    c = clean[idx] * win
    e = (clean - processed)[idx] * win
    snr = 10 * np.log10(np.sum(c**2, axis=1) / (np.sum(e**2, axis=1) + EPS) + EPS)
    return float(np.mean(np.clip(snr, floor_db, ceil_db)))


@dataclass
class EvalRow:
    id: str
    stoi: float
    si_sdr_db: float
    seg_snr_db: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)
    system: str = ""

    COLUMNS = ("stoi", "si_sdr_db", "seg_snr_db")

    @property
    def means(self) -> dict[str, float]:
        if not self.rows:
            return {c: float("nan") for c in self.COLUMNS}
        return {c: float(np.mean([getattr(r, c) for r in self.rows])) for c in self.COLUMNS}

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_csv(self, path) -> Path:
        """Header row, one row per utterance, means in a trailing ``#`` line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("id",) + self.COLUMNS)
            for r in self.rows:
                w.writerow((r.id, repr(r.stoi), repr(r.si_sdr_db), repr(r.seg_snr_db)))
            m = self.means
            fh.write("# mean," + ",".join(repr(m[c]) for c in self.COLUMNS) + "\n")
            for uid, msg in self.errors:
                fh.write(f"# error,{uid},{msg}\n")
        return path


def score(clean, processed, fs: int = 16000, uid: str = "") -> EvalRow:
    return EvalRow(uid, stoi(clean, processed, fs), si_sdr(clean, processed), seg_snr(clean, processed, fs))


def evaluate_manifest(manifest, system="identity", cfg: StftConfig | None = None,
                      pcs_weights=None, n_jobs: int = 1) -> EvalReport:
    """Score every pair of ``manifest`` after processing the noisy side.

    ``system`` is ``"identity"`` (score the mixture itself), ``"oracle"``
    (ideal ratio mask from the clean reference) or a model exposing
    ``predict_mask``.  ``pcs_weights``, when given, stretch the noisy input
    before a model sees it.  Failing utterances are recorded in
    ``report.errors`` and the run continues.
    """
    from .audio_io import read_ext_features, read_wav
    from .masking import enhance, oracle_enhance
    from .pcs import apply_pcs

    entries = list(manifest)
    if not entries:
        raise ValueError("cannot evaluate an empty manifest")
    cfg = cfg or StftConfig()
    name = system if isinstance(system, str) else type(system).__name__
    if isinstance(system, str) and system not in ("identity", "oracle"):
        raise ValueError(f"unknown system {system!r}")

    def run(entry):
        try:
            noisy = read_wav(entry.noisy)
            clean = read_wav(entry.clean)
            if len(noisy) != len(clean):
                raise ValueError(f"noisy/clean lengths differ ({len(noisy)} vs {len(clean)})")
            if system == "identity":
                out = noisy.samples
            elif system == "oracle":
                out = oracle_enhance(noisy.samples, clean.samples, cfg)
            else:
                x = noisy.samples
                if pcs_weights is not None:
                    x = apply_pcs(x, pcs_weights, cfg)
                ext = read_ext_features(entry.ext) if entry.ext is not None else None
                out = enhance(x, system, cfg, ext)
            return score(clean.samples, out, clean.sample_rate, entry.id), None
        except Exception as exc:  # collected per file, run continues
            logger.warning("evaluation failed for %s: %s", entry.id, exc)
            return None, (entry.id, f"{type(exc).__name__}: {exc}")

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, entries))
    else:
        results = [run(e) for e in entries]
    report = EvalReport(system=name)
    for row, err in results:
        if row is not None:
            report.rows.append(row)
        else:
            report.errors.append(err)
    return report
