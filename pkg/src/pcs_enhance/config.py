"""Run configuration: an INI file with one section per subsystem.

A bare file (or no file at all) reproduces the reference setup: 400-point
FFT, hop 160, window 400, Adam at 1e-4 for 50 epochs, 10 s crops.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dsp import StftConfig
from .estimator import EstimatorConfig, TrainConfig
from .losses import DEFAULT_WEIGHTS
from .pcs import PcsMode, default_bif_path, expand_bands, load_bif


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending ``section.key``."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class SynthSettings:
    n_train: int = 200
    n_test: int = 20
    clip_seconds: float = 1.5
    noise_kind: str = "white"
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    pcs_mode: PcsMode = field(default_factory=PcsMode)
    bif: Path = field(default_factory=default_bif_path)
    sample_rate: int = 16000
    loss_weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    train: TrainConfig = field(default_factory=TrainConfig)
    model: EstimatorConfig = field(default_factory=EstimatorConfig)
    synth: SynthSettings = field(default_factory=SynthSettings)
    paths: dict = field(default_factory=dict)

    def pcs_weights(self):
        return expand_bands(load_bif(self.bif), self.stft, self.sample_rate)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["stft"] = {k: str(v) for k, v in self.stft.to_dict().items()}
        cp["pcs"] = {"mode": self.pcs_mode.name, "bif": str(self.bif), "sample_rate": str(self.sample_rate)}
        cp["loss"] = dict(zip(("wsdr", "mag_l1", "cs_mag_l1"), map(repr, self.loss_weights)))
        cp["train"] = {f.name: repr(getattr(self.train, f.name)) for f in fields(self.train)}
        m = self.model
        cp["model"] = {"context": str(m.context), "hidden": ",".join(map(str, m.hidden)),
                       "ext_dim": str(m.ext_dim), "seed": str(m.seed), "mask_domain": m.mask_domain}
        s = self.synth
        cp["synth"] = {"n_train": str(s.n_train), "n_test": str(s.n_test), "clip_seconds": repr(s.clip_seconds),
                       "noise_kind": s.noise_kind, "snr_db": ",".join(map(repr, s.snr_db)), "seed": str(s.seed)}
        cp["paths"] = {k: str(v) for k, v in self.paths.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_SCHEMA = {
    "stft": {"n_fft": int, "hop": int, "win_length": int, "window": str},
    "pcs": {"mode": str, "bif": str, "sample_rate": int},
    "loss": {"wsdr": float, "mag_l1": float, "cs_mag_l1": float},
    "train": {"epochs": int, "learning_rate": float, "beta1": float, "beta2": float,
              "adam_eps": float, "batch_size": int, "max_seconds": float, "seed": int},
    "model": {"context": int, "hidden": str, "ext_dim": int, "seed": int, "mask_domain": str},
    "synth": {"n_train": int, "n_test": int, "clip_seconds": float, "noise_kind": str,
              "snr_db": str, "seed": int},
    "paths": None,  # free-form
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _parse_sections(sections: dict[str, dict[str, str]]) -> RunConfig:
    values: dict[str, dict] = {}
    for section, items in sections.items():
        if section not in _SCHEMA:
            raise ConfigError(section, "unknown section")
        spec = _SCHEMA[section]
        values[section] = {}
        for key, raw in items.items():
            name = f"{section}.{key}"
            if spec is None:
                values[section][key] = raw
                continue
            if key not in spec:
                raise ConfigError(name, "unknown key")
            try:
                values[section][key] = spec[key](raw)
            except ValueError:
                raise ConfigError(name, f"cannot parse {raw!r} as {spec[key].__name__}") from None

    def build(name, factory, kwargs):
        try:
            return factory(**kwargs)
        except ValueError as exc:
            raise ConfigError(name, str(exc)) from None

    stft = build("stft", StftConfig, values.get("stft", {}))
    pcs = values.get("pcs", {})
    mode = build("pcs.mode", PcsMode.from_name, {"name": pcs.get("mode", "both")})
    bif = Path(pcs["bif"]) if pcs.get("bif") else default_bif_path()
    sample_rate = pcs.get("sample_rate", 16000)
    if sample_rate <= 0:
        raise ConfigError("pcs.sample_rate", "must be positive")
    loss = values.get("loss", {})
    weights = tuple(loss.get(k, d) for k, d in zip(("wsdr", "mag_l1", "cs_mag_l1"), DEFAULT_WEIGHTS))
    for k, w in zip(("wsdr", "mag_l1", "cs_mag_l1"), weights):
        if not w >= 0:
            raise ConfigError(f"loss.{k}", "weights must be nonnegative")
    train = build("train", TrainConfig, values.get("train", {}))

    model_kw = dict(values.get("model", {}))
    if "hidden" in model_kw:
        try:
            model_kw["hidden"] = tuple(int(h) for h in model_kw["hidden"].replace(",", " ").split())
        except ValueError:
            raise ConfigError("model.hidden", "expected comma-separated integers") from None
    model = build("model", EstimatorConfig, {"n_bins": stft.n_bins, "sample_rate": sample_rate, **model_kw})

    synth_kw = dict(values.get("synth", {}))
    if "snr_db" in synth_kw:
        try:
            synth_kw["snr_db"] = _floats(synth_kw["snr_db"])
        except ValueError:
            raise ConfigError("synth.snr_db", "expected comma-separated numbers") from None
    synth = build("synth", SynthSettings, synth_kw)

    cfg = RunConfig(stft, mode, bif, sample_rate, weights, train, model, synth, values.get("paths", {}))
    _check_consistency(cfg)
    return cfg


def _check_consistency(cfg: RunConfig) -> None:
    if cfg.model.n_bins != cfg.stft.n_bins:
        raise ConfigError("model.n_bins", f"{cfg.model.n_bins} != STFT bins {cfg.stft.n_bins}")
    if not cfg.bif.is_file():
        raise ConfigError("pcs.bif", f"file not found: {cfg.bif}")
    try:
        w = cfg.pcs_weights()
    except ValueError as exc:
        raise ConfigError("pcs.bif", str(exc)) from None
    if len(w) != cfg.stft.n_bins:
        raise ConfigError("pcs.bif", f"expands to {len(w)} bins, STFT has {cfg.stft.n_bins}")


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse an INI file and apply ``{"section.key": value}`` overrides."""
    cp = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("--config", f"file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError("--config", str(exc)) from None
    sections = {s: dict(cp[s]) for s in cp.sections()}
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(dotted, "override keys must look like section.key")
        section, key = dotted.split(".", 1)
        sections.setdefault(section, {})[key] = str(value)
    return _parse_sections(sections)


def with_pcs_mode(cfg: RunConfig, mode: PcsMode) -> RunConfig:
    return replace(cfg, pcs_mode=mode)
