"""Compact trainable mask estimator.

Per-frame features are the compressed noisy magnitude (optionally joined by
external frame features, e.g. from a self-supervised speech model), stacked
with ``context`` neighbour frames on each side.  A ReLU MLP maps them to one
sigmoid output per frequency bin.  Gradients are computed by hand and the
parameters are updated with Adam.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import StftConfig, compress, decompose, stft
from .losses import DEFAULT_WEIGHTS, LOSS_NAMES, PairLoss

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"PCSEMDL\x00"
MODEL_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    n_bins: int = 201
    ext_dim: int = 0
    context: int = 1
    hidden: tuple[int, ...] = (256, 256)
    seed: int = 0
    sample_rate: int = 16000
    mask_domain: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_bins <= 0 or self.ext_dim < 0 or self.context < 0:
            raise ValueError("n_bins must be positive, ext_dim and context nonnegative")
        if not self.hidden or min(self.hidden) <= 0:
            raise ValueError("hidden layer widths must be positive")
        if self.mask_domain not in ("linear", "compressed"):
            raise ValueError(f"unknown mask_domain {self.mask_domain!r}")

    @property
    def input_dim(self) -> int:
        return (self.n_bins + self.ext_dim) * (2 * self.context + 1)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.n_bins)


def assemble_features(noisy_mag_c, ext=None, context: int = 0) -> np.ndarray:
    """Stack each frame with ``context`` neighbours per side (edge frames repeat).

    Returns an ``(n_frames, (n_bins + ext_dim) * (2 * context + 1))`` matrix,
    ordered from the earliest to the latest frame of the window.
    """
    base = np.asarray(noisy_mag_c, dtype=np.float64)
    if base.ndim != 2:
        raise ValueError(f"expected (frames, bins) magnitudes, got shape {base.shape}")
    if ext is not None:
        ext = np.asarray(ext, dtype=np.float64)
        if ext.ndim != 2 or ext.shape[0] != base.shape[0]:
            raise ValueError(
                f"external features have {ext.shape[0] if ext.ndim else 0} frames, "
                f"spectrogram has {base.shape[0]}"
            )
        base = np.concatenate([base, ext], axis=1)
    if context == 0:
        return base
    n = base.shape[0]
    padded = np.pad(base, ((context, context), (0, 0)), mode="edge")
    return np.concatenate([padded[k:k + n] for k in range(2 * context + 1)], axis=1)


# float64 sigmoid rounds to exactly 0 or 1 for |z| beyond ~37 (resp. ~745);
# clamping keeps every mask strictly inside the open unit interval
_MASK_LO = np.finfo(np.float64).tiny
_MASK_HI = 1.0 - np.finfo(np.float64).epsneg


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _MASK_LO, _MASK_HI, out=out)


class EstimatorModel:
    """ReLU MLP with a sigmoid output layer; ``params`` is ``[W1, b1, W2, b2, ...]``."""

    def __init__(self, config: EstimatorConfig, params: list[np.ndarray]):
        self.config = config
        sizes = config.layer_sizes
        expected = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            expected += [(fan_in, fan_out), (fan_out,)]
        if [p.shape for p in params] != expected:
            raise ValueError(f"parameter shapes {[p.shape for p in params]} != {expected}")
        self.params = [np.ascontiguousarray(p, dtype=np.float64) for p in params]

    @classmethod
    def init(cls, config: EstimatorConfig | None = None, **kwargs) -> "EstimatorModel":
        """Xavier-uniform weights, zero biases, seeded by ``config.seed``."""
        config = config or EstimatorConfig(**kwargs)
        rng = np.random.default_rng(config.seed)
        params = []
        sizes = config.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
        return cls(config, params)

    @property
    def sample_rate(self) -> int:
        return self.config.sample_rate

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def copy(self) -> "EstimatorModel":
        return EstimatorModel(self.config, [p.copy() for p in self.params])

    def features(self, noisy_mag_c, ext=None) -> np.ndarray:
        if (ext is None) != (self.config.ext_dim == 0):
            raise ValueError(
                f"model expects {self.config.ext_dim}-dim external features, got "
                f"{'none' if ext is None else np.shape(ext)}"
            )
        return assemble_features(noisy_mag_c, ext, self.config.context)

    def predict_mask(self, noisy_mag_c, ext=None) -> np.ndarray:
        return forward(self, self.features(noisy_mag_c, ext))

    def __call__(self, frames):
        return forward(self, frames)


def forward(model: EstimatorModel, frames, return_cache: bool = False):
    """Mask of shape ``(n_frames, n_bins)``, strictly inside (0, 1)."""
    h = np.asarray(frames, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.config.input_dim:
        raise ValueError(f"expected (n_frames, {model.config.input_dim}) features, got {h.shape}")
    acts = [h]
    n_layers = model.n_layers
    for i in range(n_layers):
        z = h @ model.params[2 * i] + model.params[2 * i + 1]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else _sigmoid(z)
        acts.append(h)
    if return_cache:
        return h, acts
    return h


def backward(model: EstimatorModel, frames, upstream, cache=None) -> list[np.ndarray]:
    """Parameter gradients given ``d loss / d mask``, in ``model.params`` order."""
    if cache is None:
        _, cache = forward(model, frames, return_cache=True)
    mask = cache[-1]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != mask.shape:
        raise ValueError(f"upstream gradient shape {upstream.shape} != mask shape {mask.shape}")
    grads: list[np.ndarray] = [None] * len(model.params)
    delta = upstream * mask * (1.0 - mask)
    for i in reversed(range(model.n_layers)):
        grads[2 * i] = cache[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.params[2 * i].T) * (cache[i] > 0)
    return grads


class Adam:
    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    max_seconds: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.max_seconds <= 0:
            raise ValueError("epochs must be >= 0, batch_size and max_seconds positive")
        if self.learning_rate < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.adam_eps <= 0:
            raise ValueError("invalid optimizer hyperparameters")


@dataclass
class Utterance:
    id: str
    noisy: np.ndarray
    clean: np.ndarray
    ext: np.ndarray | None = None


def load_dataset(data) -> list[Utterance]:
    """Accept a manifest, or a sequence of ``(noisy, clean[, ext])`` tuples."""
    from .audio_io import Manifest, read_ext_features, read_wav

    if isinstance(data, (str, Path)):
        data = Manifest.load(data)
    if isinstance(data, Manifest):
        out = []
        for e in data:
            noisy, clean = read_wav(e.noisy), read_wav(e.clean)
            ext = read_ext_features(e.ext) if e.ext is not None else None
            out.append(Utterance(e.id, noisy.samples, clean.samples, ext))
    else:
        out = []
        for i, item in enumerate(data):
            if isinstance(item, Utterance):
                out.append(item)
                continue
            noisy, clean, *rest = item
            out.append(Utterance(f"item{i}", np.asarray(noisy, float), np.asarray(clean, float),
                                 rest[0] if rest else None))
    for u in out:
        if u.noisy.shape != u.clean.shape:
            raise ValueError(f"{u.id}: noisy and clean lengths differ ({u.noisy.size} vs {u.clean.size})")
    return out


class _Example:
    """Cached features and loss for one (possibly cropped) utterance."""

    def __init__(self, utt: Utterance, model: EstimatorModel, stft_cfg: StftConfig, weights, start=0, length=None):
        stop = utt.noisy.size if length is None else start + length
        noisy, clean = utt.noisy[start:stop], utt.clean[start:stop]
        ext = utt.ext
        if ext is not None and (start or stop != utt.noisy.size):
            f0 = start // stft_cfg.hop
            ext = ext[f0:f0 + stft_cfg.n_frames(stop - start)]
        self.id = utt.id
        self.loss = PairLoss(noisy, clean, stft_cfg, weights, model.config.mask_domain)
        self.frames = model.features(compress(self.loss.noisy_mag), ext)


@dataclass
class TrainResult:
    model: EstimatorModel
    best_model: EstimatorModel
    log: list[dict] = field(default_factory=list)
    optimizer: Adam | None = None


LOG_COLUMNS = ("epoch",) + LOSS_NAMES + ("total", "val_total")


class Trainer:
    """Stateful training loop; can be checkpointed and resumed bit-exactly."""

    def __init__(self, model: EstimatorModel, data, cfg: TrainConfig | None = None,
                 weights=DEFAULT_WEIGHTS, stft_cfg: StftConfig | None = None, validation=None):
        self.model = model
        self.cfg = cfg or TrainConfig()
        self.weights = tuple(float(w) for w in weights)
        self.stft_cfg = stft_cfg or StftConfig()
        if model.config.n_bins != self.stft_cfg.n_bins:
            raise ValueError(
                f"model outputs {model.config.n_bins} bins, STFT has {self.stft_cfg.n_bins}"
            )
        self.data = load_dataset(data)
        if not self.data:
            raise ValueError("training set is empty")
        self.validation = load_dataset(validation) if validation is not None else []
        self.optimizer = Adam(model.params, self.cfg.learning_rate, self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps)
        self.epoch = 0
        self.log: list[dict] = []
        self.best_model = model.copy()
        self.best_score = np.inf
        self._max_len = int(round(self.cfg.max_seconds * model.config.sample_rate))
        self._cache: dict[str, _Example] = {}
        self._val_cache: dict[str, _Example] = {}

    def _example(self, utt: Utterance, rng: np.random.Generator) -> _Example:
        if utt.noisy.size <= self._max_len:
            if utt.id not in self._cache:
                self._cache[utt.id] = _Example(utt, self.model, self.stft_cfg, self.weights)
            return self._cache[utt.id]
        start = int(rng.integers(0, utt.noisy.size - self._max_len + 1))
        return _Example(utt, self.model, self.stft_cfg, self.weights, start, self._max_len)

    def _step(self, batch: list[_Example]):
        grads = [np.zeros_like(p) for p in self.model.params]
        rows = []
        for ex in batch:
            mask, cache = forward(self.model, ex.frames, return_cache=True)
            breakdown, g_mask = ex.loss(mask)
            if not np.isfinite(breakdown.total) or not np.all(np.isfinite(g_mask)):
                raise FloatingPointError(
                    f"non-finite loss at epoch {self.epoch + 1} on utterance {ex.id}: {breakdown}"
                )
            for acc, g in zip(grads, backward(self.model, ex.frames, g_mask, cache)):
                acc += g
            rows.append(breakdown)
        for g in grads:
            g /= len(batch)
        self.optimizer.step(self.model.params, grads)
        return rows

    def validation_loss(self, model: EstimatorModel | None = None) -> float:
        model = model or self.model
        if not self.validation:
            return float("nan")
        totals = []
        for utt in self.validation:
            if utt.id not in self._val_cache:
                self._val_cache[utt.id] = _Example(utt, model, self.stft_cfg, self.weights)
            ex = self._val_cache[utt.id]
            totals.append(ex.loss(forward(model, ex.frames), need_grad=False)[0].total)
        return float(np.mean(totals))

    def run_epoch(self) -> dict:
        rng = np.random.default_rng([self.cfg.seed, self.epoch])
        order = rng.permutation(len(self.data))
        rows = []
        bs = self.cfg.batch_size
        for s in range(0, len(order), bs):
            batch = [self._example(self.data[i], rng) for i in order[s:s + bs]]
            rows += self._step(batch)
        self.epoch += 1
        entry = {"epoch": self.epoch}
        for name in LOSS_NAMES + ("total",):
            entry[name] = float(np.mean([getattr(r, name) for r in rows]))
        entry["val_total"] = self.validation_loss()
        score = entry["val_total"] if self.validation else entry["total"]
        if score < self.best_score:
            self.best_score = score
            self.best_model = self.model.copy()
        self.log.append(entry)
        logger.info("epoch %d: %s", self.epoch, {k: round(v, 5) for k, v in entry.items() if k != "epoch"})
        return entry

    def fit(self, epochs: int | None = None, checkpoint=None) -> TrainResult:
        """Train until ``epochs`` (default ``cfg.epochs``) epochs are done in total."""
        target = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target:
            self.run_epoch()
            if checkpoint is not None:
                self.save_checkpoint(checkpoint)
        return TrainResult(self.model, self.best_model, list(self.log), self.optimizer)

    def save_checkpoint(self, path) -> None:
        n = len(self.model.params)
        arrays = {f"adam_m{i}": self.optimizer.m[i] for i in range(n)}
        arrays.update({f"adam_v{i}": self.optimizer.v[i] for i in range(n)})
        arrays.update({f"best{i}": p for i, p in enumerate(self.best_model.params)})
        meta = {
            "train_config": asdict(self.cfg),
            "weights": list(self.weights),
            "stft": self.stft_cfg.to_dict(),
            "epoch": self.epoch,
            "adam_t": self.optimizer.t,
            "best_score": self.best_score if np.isfinite(self.best_score) else None,
            "log": self.log,
        }
        save_model(self.model, path, extra=arrays, metadata=meta)

    @classmethod
    def resume(cls, path, data, validation=None) -> "Trainer":
        model, extra, meta = load_model(path, with_extra=True)
        if "train_config" not in meta:
            raise ModelFileError(f"{path}: not a training checkpoint")
        trainer = cls(model, data, TrainConfig(**meta["train_config"]), meta["weights"],
                      StftConfig(**meta["stft"]), validation)
        n = len(model.params)
        trainer.optimizer.m = [extra[f"adam_m{i}"] for i in range(n)]
        trainer.optimizer.v = [extra[f"adam_v{i}"] for i in range(n)]
        trainer.optimizer.t = meta["adam_t"]
        trainer.best_model = EstimatorModel(model.config, [extra[f"best{i}"] for i in range(n)])
        trainer.best_score = np.inf if meta["best_score"] is None else meta["best_score"]
        trainer.epoch = meta["epoch"]
        trainer.log = [{k: row[k] for k in LOG_COLUMNS} for row in meta["log"]]
        return trainer


def train(model: EstimatorModel, data, cfg: TrainConfig | None = None, weights=DEFAULT_WEIGHTS,
          stft_cfg: StftConfig | None = None, validation=None, checkpoint=None) -> TrainResult:
    """Train ``model`` in place on a manifest or list of pairs.

    Deterministic for a fixed ``cfg.seed``.  Each epoch visits the data in a
    seeded random order, ``cfg.batch_size`` utterances per Adam step; longer
    clips are cropped to ``cfg.max_seconds`` at a seeded offset.
    """
    return Trainer(model, data, cfg, weights, stft_cfg, validation).fit(checkpoint=checkpoint)


def write_log(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
    return path


def save_model(model: EstimatorModel, path, extra: dict | None = None, metadata: dict | None = None) -> None:
    """Binary container: magic, version, JSON header, float64 LE blob, CRC32."""
    extra = extra or {}
    arrays = [(f"param{i}", p) for i, p in enumerate(model.params)] + list(extra.items())
    header = {
        "config": asdict(model.config),
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(head)) + head
    body += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path, with_extra: bool = False):
    """Read a model file; with ``with_extra`` also return extra arrays and metadata."""
    raw = Path(path).read_bytes()
    fixed = len(MODEL_MAGIC) + 8
    if len(raw) < fixed + 4:
        raise ModelFileError(f"{path}: truncated model file ({len(raw)} bytes)")
    if raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    version, head_len = struct.unpack_from("<II", raw, len(MODEL_MAGIC))
    if version != MODEL_VERSION:
        raise ModelFileError(f"{path}: unsupported model file version {version} (expected {MODEL_VERSION})")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if len(body) < fixed + head_len:
        raise ModelFileError(f"{path}: truncated model file")
    try:
        header = json.loads(body[fixed:fixed + head_len])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt header ({exc})") from None
    n_values = sum(int(np.prod(shape)) for _, shape in header["arrays"])
    if len(body) != fixed + head_len + 8 * n_values:
        raise ModelFileError(f"{path}: truncated model file")
    if zlib.crc32(body) != crc:
        raise ModelFileError(f"{path}: checksum mismatch")
    arrays = {}
    offset = fixed + head_len
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    config = EstimatorConfig(**header["config"])
    n_params = 2 * (len(config.hidden) + 1)
    model = EstimatorModel(config, [arrays.pop(f"param{i}") for i in range(n_params)])
    if with_extra:
        return model, arrays, header["metadata"]
    return model


def masks_for(model: EstimatorModel, noisy, stft_cfg: StftConfig | None = None, ext=None) -> np.ndarray:
    """Convenience: predicted mask for a raw waveform."""
    mag, _ = decompose(stft(noisy, stft_cfg))
    return model.predict_mask(compress(mag), ext)
