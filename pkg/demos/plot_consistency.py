"""
Consistent and inconsistent spectrograms
========================================

Not every complex array is the STFT of some signal.  This demo projects an
arbitrary array onto the set of consistent spectrograms and shows why a
magnitude loss measured after resynthesis can differ from one measured
directly on the masked spectrum.
"""
import numpy as np

from pcs_enhance import StftConfig, consistency_project, istft, stft
from pcs_enhance.dsp import Spectrogram, compress
from pcs_enhance.losses import cs_mag_l1_loss, mag_l1_loss

rng = np.random.default_rng(0)
cfg = StftConfig()
length = 8000

###############################################################################
# Projection is idempotent
# ------------------------
# Projecting twice changes nothing, and the STFT of a real signal is already
# a fixed point.

shape = (cfg.n_frames(length), cfg.n_bins)
arbitrary = Spectrogram(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), cfg, length)
once = consistency_project(arbitrary)
twice = consistency_project(once)
print(f"|P(S) - S|      = {np.linalg.norm(once.bins - arbitrary.bins):10.3f}")
print(f"|P(P(S)) - P(S)| = {np.linalg.norm(twice.bins - once.bins):10.3e}")

real = stft(rng.standard_normal(length), cfg)
print(f"|P(X) - X| for a real STFT = {np.linalg.norm(consistency_project(real).bins - real.bins):.3e}")

###############################################################################
# Masking breaks consistency
# --------------------------
# A random mask on a noisy spectrum gives an array whose magnitude no longer
# matches what comes back after resynthesis.

clean = np.sin(2 * np.pi * 440 * np.arange(length) / 16000) * 0.5
noisy = clean + 0.3 * rng.standard_normal(length)
noisy_spec = stft(noisy, cfg)
mask = rng.uniform(0, 1, noisy_spec.shape)
masked = Spectrogram(noisy_spec.bins * mask, cfg, length)
clean_spec = stft(clean, cfg)

direct = mag_l1_loss(compress(np.abs(masked.bins)), compress(np.abs(clean_spec.bins)))
after_resynthesis = cs_mag_l1_loss(masked, clean_spec)
print(f"magnitude L1 on the masked array : {direct:.4f}")
print(f"magnitude L1 after resynthesis   : {after_resynthesis:.4f}")

y = istft(masked)
print(f"resynthesized length {y.size}, matches input: {y.size == length}")
