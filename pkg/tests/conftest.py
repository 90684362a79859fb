import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcs_enhance.audio_io import SynthSpec, synth_pair
from pcs_enhance.dsp import StftConfig

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

SR = 16000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cfg():
    return StftConfig()


def tone(freq, seconds=1.0, sr=SR, amp=0.5, phase=0.0):
    n = np.arange(int(round(seconds * sr)))
    return amp * np.sin(2 * np.pi * freq * n / sr + phase)


@pytest.fixture(scope="session")
def speech_pair():
    """A short (noisy, clean) pair from the synthetic generator at 5 dB SNR."""
    spec = SynthSpec(n_items=2, clip_seconds=0.5, seed=7, snr_db=(5.0,))
    noisy, clean, _ = synth_pair(spec, 0)
    return noisy, clean
