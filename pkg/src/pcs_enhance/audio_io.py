"""WAV files, JSON-lines manifests and the synthetic noisy/clean corpus."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import Waveform

SAMPLE_RATE = 16000
MANIFEST_SCHEMA = "pcs-enhance/manifest-v1"
WAV_FORMATS = ("pcm16", "float32")


class WavFormatError(ValueError):
    """A WAV file that is unreadable or violates the expected format."""

    def __init__(self, path, field: str, message: str):
        self.path = Path(path)
        self.field = field
        super().__init__(f"{path}: {field}: {message}")


class ManifestError(ValueError):
    pass


def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV file.

    PCM samples are divided by 32768, so the result lies in [-1, 1).
    """
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise WavFormatError(path, "container", str(exc)) from exc
    if data.ndim != 1:
        raise WavFormatError(path, "channels", f"expected mono, got {data.shape[1]} channels")
    if expected_rate is not None and rate != expected_rate:
        raise WavFormatError(path, "sample_rate", f"expected {expected_rate} Hz, got {rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise WavFormatError(path, "samples", "non-finite float samples")
    else:
        raise WavFormatError(path, "format", f"unsupported sample type {data.dtype}; need pcm16 or float32")
    return Waveform(samples, rate)


def quantize_pcm16(samples) -> np.ndarray:
    """Clamp to [-1, 1 - 2**-15] and round half away from zero to int16."""
    scaled = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 2.0**-15) * 32768.0
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int16)


def write_wav(x, path, format: str = "pcm16", sample_rate: int | None = None) -> None:
    if isinstance(x, Waveform):
        samples, rate = x.samples, x.sample_rate
    else:
        samples, rate = np.asarray(x, dtype=np.float64), SAMPLE_RATE
    if sample_rate is not None:
        rate = sample_rate
    if not np.all(np.isfinite(samples)):
        raise ValueError("cannot write non-finite samples")
    if format == "pcm16":
        data = quantize_pcm16(samples)
    elif format == "float32":
        data = samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {format!r}; expected one of {WAV_FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, int(rate), data)


@dataclass
class ManifestEntry:
    id: str
    noisy: Path
    clean: Path
    ext: Path | None = None


@dataclass
class Manifest:
    """Paired corpus listing plus a provenance record.

    On disk: JSON lines, the first holding ``{"schema", "provenance"}``,
    then one ``{"id", "noisy", "clean"[, "ext"]}`` object per utterance with
    paths relative to the manifest's directory.
    """

    entries: list[ManifestEntry] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    path: Path | None = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    @property
    def pcs_mode(self) -> str:
        return self.provenance.get("pcs_mode", "none")

    def subset(self, indices) -> "Manifest":
        return Manifest([self.entries[i] for i in indices], dict(self.provenance), self.path)

    def validate(self) -> None:
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError(f"duplicate utterance id {e.id!r}")
            seen.add(e.id)
            for role in ("noisy", "clean", "ext"):
                p = getattr(e, role)
                if p is not None and not Path(p).is_file():
                    raise ManifestError(f"utterance {e.id!r}: {role} file not found: {p}")

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        root = path.parent.resolve()

        def rel(p):
            p = Path(p).resolve()
            try:
                return p.relative_to(root).as_posix()
            except ValueError:
                return str(p)

        lines = [json.dumps({"schema": MANIFEST_SCHEMA, "provenance": self.provenance}, sort_keys=True)]
        for e in self.entries:
            row = {"id": e.id, "noisy": rel(e.noisy), "clean": rel(e.clean)}
            if e.ext is not None:
                row["ext"] = rel(e.ext)
            lines.append(json.dumps(row, sort_keys=True))
        path.write_text("\n".join(lines) + "\n")
        self.path = path
        return path

    @classmethod
    def load(cls, path, validate: bool = True) -> "Manifest":
        path = Path(path)
        root = path.parent
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        if not lines:
            raise ManifestError(f"{path}: empty manifest file")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:1: {exc}") from None
        if header.get("schema") != MANIFEST_SCHEMA:
            raise ManifestError(f"{path}: unsupported schema {header.get('schema')!r}")
        entries = []
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                row = json.loads(line)
                entries.append(ManifestEntry(
                    str(row["id"]), root / row["noisy"], root / row["clean"],
                    root / row["ext"] if row.get("ext") else None,
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed entry ({exc})") from None
        manifest = cls(entries, header.get("provenance", {}), path)
        if validate:
            manifest.validate()
        return manifest


def read_ext_features(path) -> np.ndarray:
    """Per-utterance external frame features, an ``(n_frames, dim)`` .npy file."""
    feats = np.load(path, allow_pickle=False)
    if feats.ndim != 2:
        raise ValueError(f"{path}: external features must be 2-D (frames, dim), got {feats.shape}")
    return feats.astype(np.float64)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for the synthetic corpus.

    Clean items are trains of harmonic "syllables" (random f0, two formant-like
    spectral peaks, raised-cosine envelopes); noise is white or pink, scaled to
    an exact SNR.  SNRs cycle through ``snr_db`` item by item.
    """

    n_items: int = 50
    clip_seconds: float = 2.0
    f0_range_hz: tuple[float, float] = (100.0, 240.0)
    max_harmonic_hz: float = 5000.0
    noise_kind: str = "white"
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    level_rms: float = 0.05
    format: str = "float32"

    def __post_init__(self):
        if self.n_items < 0:
            raise ValueError("n_items must be nonnegative")
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")
        if self.noise_kind not in ("white", "pink"):
            raise ValueError(f"noise_kind must be 'white' or 'pink', got {self.noise_kind!r}")
        if not self.snr_db or not all(np.isfinite(s) for s in self.snr_db):
            raise ValueError("snr_db must be a non-empty set of finite values")
        lo, hi = self.f0_range_hz
        if not 0 < lo <= hi:
            raise ValueError(f"invalid f0 range {self.f0_range_hz}")


def _syllable_train(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    sr = spec.sample_rate
    n = int(round(spec.clip_seconds * sr))
    out = np.zeros(n)
    t0 = int(rng.uniform(0.02, 0.12) * sr)
    while t0 < n:
        dur = int(rng.uniform(0.12, 0.32) * sr)
        seg_len = min(dur, n - t0)
        t = np.arange(seg_len) / sr
        f0 = rng.uniform(*spec.f0_range_hz)
        glide = rng.uniform(-0.25, 0.25)  # relative f0 change over the syllable
        inst_f0 = f0 * (1.0 + glide * t / (dur / sr))
        phase0 = 2 * np.pi * np.cumsum(inst_f0) / sr
        formants = rng.uniform([300.0, 900.0], [900.0, 3000.0])
        seg = np.zeros(seg_len)
        n_harm = int(spec.max_harmonic_hz // (f0 * (1 + max(glide, 0))))
        for h in range(1, n_harm + 1):
            fh = h * f0
            gain = sum(np.exp(-0.5 * ((fh - f) / 180.0) ** 2) for f in formants) + 0.05
            seg += gain / np.sqrt(h) * np.sin(h * phase0 + rng.uniform(0, 2 * np.pi))
        ramp = max(1, int(0.03 * sr))
        env = np.ones(dur)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[-ramp:] = env[:ramp][::-1]
        seg *= env[:seg_len] * rng.uniform(0.4, 1.0)
        out[t0:t0 + seg_len] += seg
        t0 += dur + int(rng.uniform(0.03, 0.15) * sr)
    if not np.any(out):
        raise RuntimeError("synthetic clip too short to hold a syllable")
    return out * (spec.level_rms / np.sqrt(np.mean(out**2)))


def _noise(rng: np.random.Generator, n: int, kind: str) -> np.ndarray:
    white = rng.standard_normal(n)
    if kind == "white":
        return white
    spectrum = np.fft.rfft(white)
    f = np.arange(spectrum.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(f), n=n)


def synth_pair(spec: SynthSpec, index: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Return ``(noisy, clean, snr_db)`` for item ``index`` of ``spec``."""
    rng = np.random.default_rng([spec.seed, index])
    clean = _syllable_train(rng, spec)
    noise = _noise(rng, clean.size, spec.noise_kind)
    snr = float(spec.snr_db[index % len(spec.snr_db)])
    noise *= np.sqrt(np.sum(clean**2) / (np.sum(noise**2) * 10.0 ** (snr / 10.0)))
    noisy = clean + noise
    peak = np.max(np.abs(noisy))
    if peak > 0.99:
        clean, noisy = clean * (0.99 / peak), noisy * (0.99 / peak)
    return noisy, clean, snr


def generate_synthetic(spec: SynthSpec, out_dir) -> Manifest:
    """Write ``spec.n_items`` noisy/clean WAV pairs and ``manifest.jsonl``."""
    out_dir = Path(out_dir)
    entries = []
    for i in range(spec.n_items):
        noisy, clean, snr = synth_pair(spec, i)
        uid = f"synth_{i:05d}_snr{snr:g}"
        noisy_path = out_dir / "noisy" / f"{uid}.wav"
        clean_path = out_dir / "clean" / f"{uid}.wav"
        write_wav(Waveform(noisy, spec.sample_rate), noisy_path, spec.format)
        write_wav(Waveform(clean, spec.sample_rate), clean_path, spec.format)
        entries.append(ManifestEntry(uid, noisy_path, clean_path))
    provenance = {
        "generator": "synthetic",
        "seed": spec.seed,
        "n_items": spec.n_items,
        "clip_seconds": spec.clip_seconds,
        "noise_kind": spec.noise_kind,
        "snr_db": list(spec.snr_db),
        "pcs_mode": "none",
        "bif_sha256": None,
    }
    manifest = Manifest(entries, provenance)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest.write(out_dir / "manifest.jsonl")
    return manifest
