"""
Contrast stretching a spectrogram
=================================

A walk through the contrast-stretching step on a synthetic vowel-like
signal: which bins get boosted, how the log-domain gain turns into a
power law on linear magnitudes, and what survives resynthesis.

Run with ``python demos/plot_contrast_stretch.py``; the figure lands next
to the script as ``contrast_stretch.png``.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from pcs_enhance import BandImportanceWeights, StftConfig, apply_pcs, expand_bands, pcs_spectrum, stft
from pcs_enhance.pcs import default_bif_path, load_bif

cfg = StftConfig()
sr = 16000

###############################################################################
# The band-importance table
# -------------------------
# The bundled table lists frequency bands and a gain per band.  Expanding it
# gives one weight per STFT bin.

bands = load_bif(default_bif_path())
weights = expand_bands(bands, cfg, sr)
freqs = np.arange(cfg.n_bins) * sr / cfg.n_fft
print(f"{len(bands)} bands -> {len(weights)} bin weights, range {weights.weights.min():.3f} .. {weights.weights.max():.3f}")

###############################################################################
# A harmonic test signal
# ----------------------
# Ten harmonics of 180 Hz under a slow amplitude envelope stand in for a
# sustained vowel.

t = np.arange(sr) / sr
envelope = 0.5 * (1 - np.cos(2 * np.pi * t))
x = sum(np.sin(2 * np.pi * 180 * h * t) / h for h in range(1, 11)) * envelope * 0.3

spec = stft(x, cfg)
stretched = pcs_spectrum(spec, weights)
mid = spec.shape[0] // 2
before = np.abs(spec.bins[mid])
after = np.abs(stretched.bins[mid])

###############################################################################
# Power law on linear magnitudes
# ------------------------------
# Scaling ``log1p|X|`` by ``w`` means ``|Y| = (1 + |X|)**w - 1``: strong bins
# grow faster than weak ones wherever ``w > 1``.

predicted = (1 + before) ** weights.weights - 1
print(f"largest deviation from the power law: {np.max(np.abs(after - predicted)):.2e}")

###############################################################################
# Resynthesis
# -----------
# The stretched spectrum is turned back into a waveform; with unit weights the
# chain is the identity.

y = apply_pcs(x, weights, cfg)
identity = apply_pcs(x, BandImportanceWeights.identity(cfg.n_bins), cfg)
print(f"identity weights: max |y - x| = {np.max(np.abs(identity - x)):.2e}")
print(f"table weights: energy ratio out/in = {np.sum(y**2) / np.sum(x**2):.3f}")

fig, axes = plt.subplots(2, 1, figsize=(8, 6))
axes[0].plot(freqs, weights.weights)
axes[0].set_ylabel("weight")
axes[1].semilogy(freqs, before + 1e-6, label="input")
axes[1].semilogy(freqs, after + 1e-6, label="stretched")
axes[1].set_xlabel("frequency (Hz)")
axes[1].set_ylabel("|X| (middle frame)")
axes[1].legend()
fig.tight_layout()
out = Path(__file__).with_name("contrast_stretch.png")
fig.savefig(out, dpi=100)
print(f"wrote {out}")
