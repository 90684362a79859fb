"""
Training a small mask estimator
===============================

End to end on a handful of synthetic utterances: generate pairs, train a
small network for a few epochs, then compare noisy, enhanced and oracle
scores on held-out items.  Takes well under a minute on one core.
"""
import numpy as np

from pcs_enhance import EstimatorConfig, EstimatorModel, enhance, oracle_enhance
from pcs_enhance.audio_io import SynthSpec, synth_pair
from pcs_enhance.estimator import TrainConfig, train
from pcs_enhance.metrics import si_sdr, stoi

###############################################################################
# Data
# ----
# Twelve pairs for training and four for testing, one second each, at SNRs
# from 0 to 10 dB.

train_spec = SynthSpec(n_items=12, clip_seconds=1.0, snr_db=(0.0, 5.0, 10.0), seed=1)
test_spec = SynthSpec(n_items=4, clip_seconds=1.0, snr_db=(0.0, 5.0, 10.0), seed=2)
pairs = [synth_pair(train_spec, i)[:2] for i in range(train_spec.n_items)]
held_out = [synth_pair(test_spec, i)[:2] for i in range(test_spec.n_items)]

###############################################################################
# Training
# --------
# A two-layer network, Adam at a larger step size than the default so a few
# epochs suffice.

model = EstimatorModel.init(EstimatorConfig(hidden=(64, 64), seed=0))
result = train(model, pairs, TrainConfig(epochs=15, learning_rate=1e-3, seed=0))
for row in result.log[::5] + result.log[-1:]:
    print(f"epoch {row['epoch']:3d}  total loss {row['total']:+.4f}")

###############################################################################
# Scores
# ------

print(f"{'item':>4} {'noisy':>14} {'enhanced':>14} {'oracle':>14}   (SI-SDR dB / STOI)")
for i, (noisy, clean) in enumerate(held_out):
    cells = []
    for y in (noisy, enhance(noisy, result.best_model), oracle_enhance(noisy, clean)):
        cells.append(f"{si_sdr(clean, y):6.2f}/{stoi(clean, y):.3f}")
    print(f"{i:>4} " + " ".join(f"{c:>14}" for c in cells))
