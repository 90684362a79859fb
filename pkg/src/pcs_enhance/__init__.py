"""Mask-based speech enhancement with perceptual contrast stretching and a
consistency-preserving training loss.

Submodules
----------
dsp        STFT/iSTFT, magnitude/phase split, log compression
pcs        perceptual contrast stretching and band-importance tables
masking    ideal ratio mask, mask application, inference chain
losses     wSDR, compressed-magnitude L1, consistency-preserving L1
estimator  feature assembly, MLP mask head, Adam training, model files
metrics    STOI, SI-SDR, segmental SNR, corpus evaluation
audio_io   WAV files, manifests, synthetic corpora
"""

from .dsp import (
    Spectrogram,
    StftConfig,
    Waveform,
    compress,
    consistency_project,
    decompose,
    decompress,
    istft,
    recompose,
    stft,
)
from .estimator import EstimatorConfig, EstimatorModel, TrainConfig, load_model, save_model, train
from .losses import LossBreakdown, combined_loss, cs_mag_l1_loss, loss_gradient, mag_l1_loss, wsdr_loss
from .masking import apply_mask, enhance, irm_oracle, oracle_enhance, reconstruct
from .metrics import evaluate_manifest, seg_snr, si_sdr, stoi
from .pcs import (BandImportanceWeights, PcsMode, apply_pcs, expand_bands, pcs_compress, pcs_spectrum,
                  pcs_stretch)

__version__ = "0.1.0"
