"""Regenerate the golden fixtures in this directory.

The committed files are the reference; rerunning this script should leave
them byte-for-byte unchanged.  If it does not, the serialization changed.

    python3 tests/data/make_golden.py
"""

import hashlib
from pathlib import Path

import numpy as np

from pcs_enhance.audio_io import write_wav
from pcs_enhance.estimator import EstimatorConfig, EstimatorModel, forward, save_model

HERE = Path(__file__).parent


def golden_samples() -> np.ndarray:
    """Exactly representable samples, including both clamp edges and +-0.5 LSB ties."""
    ramp = ((np.arange(300) * 37) % 201 - 100) / 128.0
    edges = np.array([0.0, 0.5, -1.0, 1.5, -1.5, 1.0, 1 - 2.0**-15, 0.5 / 32768, -0.5 / 32768, 1.5 / 32768])
    return np.concatenate([edges, ramp])


def golden_model() -> EstimatorModel:
    model = EstimatorModel.init(EstimatorConfig(hidden=(16,), context=1, seed=2024))
    rng = np.random.default_rng(99)
    for b in model.params[1::2]:
        b[:] = rng.uniform(-0.5, 0.5, b.shape)
    return model


def golden_features(model: EstimatorModel) -> np.ndarray:
    rng = np.random.default_rng(7)
    return rng.uniform(0.0, 3.0, (12, model.config.input_dim))


def main():
    samples = golden_samples()
    write_wav(samples, HERE / "golden_pcm16.wav", "pcm16")
    write_wav(samples / 2, HERE / "golden_float32.wav", "float32")
    model = golden_model()
    save_model(model, HERE / "golden_model.bin", metadata={"purpose": "golden fixture"})
    feats = golden_features(model)
    np.save(HERE / "golden_features.npy", feats)
    np.save(HERE / "golden_mask.npy", forward(model, feats))
    with open(HERE / "SHA256SUMS", "w") as fh:
        for name in ("golden_pcm16.wav", "golden_float32.wav", "golden_model.bin"):
            fh.write(f"{hashlib.sha256((HERE / name).read_bytes()).hexdigest()}  {name}\n")


if __name__ == "__main__":
    main()
