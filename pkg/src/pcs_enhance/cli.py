"""Command-line entry point: ``pcs-enhance <command> [options]``.

Commands: synth, pcs, train, enhance, eval, ablate, gradcheck.  Exit status
is 0 on success, 1 on data or runtime failure, 2 on configuration errors.
Set ``PCS_ENHANCE_LOG_LEVEL`` (DEBUG, INFO, ...) to change verbosity.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audio_io import Manifest, ManifestEntry, SynthSpec, generate_synthetic, read_wav, write_wav
from .config import ConfigError, RunConfig, load_config
from .dsp import StftConfig, Waveform
from .estimator import EstimatorModel, ModelFileError, Trainer, load_model, save_model, write_log
from .gradcheck import check_mask_gradient, check_param_gradients
from .losses import PairLoss
from .masking import enhance
from .metrics import EvalReport, evaluate_manifest
from .pcs import BandImportanceWeights, PcsMode, apply_pcs, bif_digest, expand_bands, load_bif

logger = logging.getLogger("pcs_enhance")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
ABLATION_MODES = ("both", "input", "target", "none")


class CommandFailed(RuntimeError):
    """Some inputs failed; outputs for the rest were still written."""


def cmd_synth(cfg: RunConfig, out_dir, n_items: int | None = None, seed: int | None = None) -> Manifest:
    s = cfg.synth
    spec = SynthSpec(
        n_items=s.n_train if n_items is None else n_items,
        clip_seconds=s.clip_seconds, noise_kind=s.noise_kind, snr_db=s.snr_db,
        seed=s.seed if seed is None else seed, sample_rate=cfg.sample_rate,
    )
    return generate_synthetic(spec, out_dir)


def cmd_pcs(in_manifest, bif, mode, out_dir, stft_cfg: StftConfig | None = None,
            sample_rate: int = 16000) -> Manifest:
    """Stretch the noisy and/or clean side of a corpus; writes a new manifest."""
    manifest = in_manifest if isinstance(in_manifest, Manifest) else Manifest.load(in_manifest)
    mode = mode if isinstance(mode, PcsMode) else PcsMode.from_name(mode)
    stft_cfg = stft_cfg or StftConfig()
    bif_path = Path(bif) if bif is not None else None
    weights = expand_bands(load_bif(bif_path), stft_cfg, sample_rate)
    if manifest.pcs_mode != "none":
        logger.warning("input manifest was already produced with PCS mode %r", manifest.pcs_mode)
    out_dir = Path(out_dir)
    entries, failures = [], []
    for e in manifest:
        try:
            new = {}
            for role, flag in (("noisy", mode.apply_to_input), ("clean", mode.apply_to_target)):
                wav = read_wav(getattr(e, role), sample_rate)
                samples = apply_pcs(wav.samples, weights, stft_cfg) if flag else wav.samples
                path = out_dir / role / f"{e.id}.wav"
                write_wav(Waveform(samples, wav.sample_rate), path, "float32")
                new[role] = path
            entries.append(ManifestEntry(e.id, new["noisy"], new["clean"], e.ext))
        except Exception as exc:
            logger.error("pcs failed for %s: %s", e.id, exc)
            failures.append(e.id)
    provenance = dict(manifest.provenance)
    provenance.update({
        "pcs_mode": mode.name,
        "bif_sha256": bif_digest(bif_path),
        "bif_bands": [list(b) for b in weights.source_bands],
        "source_manifest": str(manifest.path) if manifest.path else None,
    })
    out = Manifest(entries, provenance)
    out.write(out_dir / "manifest.jsonl")
    if failures:
        raise CommandFailed(f"PCS failed for {len(failures)} utterance(s): {', '.join(failures)}")
    return out


def _model_metadata(cfg: RunConfig, manifest: Manifest) -> dict:
    mode = manifest.pcs_mode
    if mode != cfg.pcs_mode.name:
        logger.warning("config says PCS mode %r but training data was produced with %r; recording %r",
                       cfg.pcs_mode.name, mode, mode)
    bands = manifest.provenance.get("bif_bands")
    return {"pcs_mode": mode, "bif_bands": bands, "stft": cfg.stft.to_dict(),
            "loss_weights": list(cfg.loss_weights)}


def cmd_train(cfg: RunConfig, train_manifest, out_dir, valid_manifest=None, resume=None) -> dict:
    """Train and write ``model.bin`` (best), ``checkpoint.bin`` (last) and ``train_log.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = train_manifest if isinstance(train_manifest, Manifest) else Manifest.load(train_manifest)
    if not len(manifest):
        raise ValueError("training manifest is empty")
    valid = None
    if valid_manifest is not None:
        valid = valid_manifest if isinstance(valid_manifest, Manifest) else Manifest.load(valid_manifest)
    (out_dir / "effective_config.ini").write_text(cfg.to_ini())
    checkpoint = out_dir / "checkpoint.bin"
    if resume is not None:
        trainer = Trainer.resume(resume, manifest, valid)
        # optimizer settings come from the checkpoint; only the epoch target follows this run
        trainer.cfg = replace(trainer.cfg, epochs=cfg.train.epochs)
        logger.info("resumed from %s at epoch %d", resume, trainer.epoch)
    else:
        model = EstimatorModel.init(cfg.model)
        trainer = Trainer(model, manifest, cfg.train, cfg.loss_weights, cfg.stft, valid)
    result = trainer.fit(checkpoint=checkpoint)
    if not trainer.log:
        trainer.save_checkpoint(checkpoint)
    meta = _model_metadata(cfg, manifest)
    save_model(result.best_model, out_dir / "model.bin", metadata=meta)
    log_path = write_log(result.log, out_dir / "train_log.csv")
    return {"model": out_dir / "model.bin", "checkpoint": checkpoint, "log": log_path, "result": result}


def _load_for_inference(model_path):
    model, _, meta = load_model(model_path, with_extra=True)
    stft_cfg = StftConfig(**meta["stft"]) if "stft" in meta else StftConfig()
    weights = None
    trained_mode = PcsMode.from_name(meta.get("pcs_mode", "none"))
    if trained_mode.apply_to_target:
        logger.warning("model was trained on contrast-stretched targets; its output stays in that domain")
    if trained_mode.at_test_time().apply_to_input:
        bands = meta.get("bif_bands")
        weights = (expand_bands(bands, stft_cfg, model.sample_rate) if bands
                   else expand_bands(load_bif(), stft_cfg, model.sample_rate))
    return model, stft_cfg, weights


def _enhance_one(model, stft_cfg, weights: BandImportanceWeights | None, noisy: Waveform, ext=None) -> Waveform:
    x = noisy.samples
    if weights is not None:
        x = apply_pcs(x, weights, stft_cfg)
    out = enhance(Waveform(x, noisy.sample_rate), model, stft_cfg, ext, model.config.mask_domain)
    return out


def cmd_enhance(model_path, input_path, out, fmt: str = "float32") -> list[Path]:
    """Enhance one WAV file, or every noisy file of a manifest into directory ``out``."""
    from .audio_io import read_ext_features

    model, stft_cfg, weights = _load_for_inference(model_path)
    input_path, out = Path(input_path), Path(out)
    if input_path.suffix == ".jsonl":
        manifest = Manifest.load(input_path)
        written, failures = [], []
        for e in manifest:
            try:
                ext = read_ext_features(e.ext) if e.ext is not None else None
                y = _enhance_one(model, stft_cfg, weights, read_wav(e.noisy, model.sample_rate), ext)
                dest = out / Path(e.noisy).name
                write_wav(y, dest, fmt)
                written.append(dest)
            except Exception as exc:
                logger.error("enhance failed for %s: %s", e.id, exc)
                failures.append(e.id)
        if failures:
            raise CommandFailed(f"enhancement failed for {len(failures)} utterance(s)")
        return written
    y = _enhance_one(model, stft_cfg, weights, read_wav(input_path, model.sample_rate))
    write_wav(y, out, fmt)
    return [out]


def cmd_eval(manifest, system, out=None, stft_cfg: StftConfig | None = None, n_jobs: int = 1) -> EvalReport:
    manifest = manifest if isinstance(manifest, Manifest) else Manifest.load(manifest)
    weights = None
    if system not in ("identity", "oracle"):
        system, stft_cfg, weights = _load_for_inference(system)
    report = evaluate_manifest(manifest, system, stft_cfg, weights, n_jobs)
    if out is not None:
        report.to_csv(out)
    return report


def cmd_ablate(cfg: RunConfig, out_dir, modes=ABLATION_MODES, train_manifest=None, test_manifest=None) -> list[dict]:
    """Train one model per PCS mode and score each on the same held-out set.

    Writes ``ablation.csv`` with one row per mode.  Test inputs are stretched
    only for modes that stretched training inputs; scores are always against
    the unprocessed clean reference.
    """
    out_dir = Path(out_dir)
    if train_manifest is None:
        train_manifest = cmd_synth(cfg, out_dir / "data" / "train", cfg.synth.n_train, cfg.synth.seed)
    if test_manifest is None:
        test_manifest = cmd_synth(cfg, out_dir / "data" / "test", cfg.synth.n_test, cfg.synth.seed + 1)
    train_manifest = train_manifest if isinstance(train_manifest, Manifest) else Manifest.load(train_manifest)
    test_manifest = test_manifest if isinstance(test_manifest, Manifest) else Manifest.load(test_manifest)

    rows = []
    for name in modes:
        mode = PcsMode.from_name(name)
        cell = out_dir / name
        row = {"mode": mode.name, "stoi": float("nan"), "si_sdr_db": float("nan"),
               "seg_snr_db": float("nan"), "failed": 0, "status": "ok"}
        try:
            data = cmd_pcs(train_manifest, cfg.bif, mode, cell / "train_pcs", cfg.stft, cfg.sample_rate)
            trained = cmd_train(replace(cfg, pcs_mode=mode), data, cell / "model")
            report = cmd_eval(test_manifest, trained["model"], cell / "eval.csv")
            row.update(report.means)
            row["failed"] = len(report.errors)
            if report.errors:
                row["status"] = "partial"
        except Exception as exc:
            logger.error("ablation cell %s failed: %s", name, exc)
            row["status"] = f"error: {exc}"
        logger.info("ablation %s: %s", name, row)
        rows.append(row)

    path = out_dir / "ablation.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["mode", "stoi", "si_sdr_db", "seg_snr_db", "failed", "status"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    if any(r["status"] != "ok" for r in rows):
        raise CommandFailed(f"ablation table incomplete, see {path}")
    return rows


def cmd_gradcheck(cfg: RunConfig, seed: int = 0, n_coords: int = 100, seconds: float = 0.5) -> dict[str, float]:
    """Finite-difference audit of the loss and estimator gradients on a synthetic pair."""
    from .audio_io import synth_pair

    spec = SynthSpec(n_items=1, clip_seconds=seconds, seed=seed, sample_rate=cfg.sample_rate)
    noisy, clean, _ = synth_pair(spec, 0)
    loss = PairLoss(noisy, clean, cfg.stft, cfg.loss_weights, cfg.model.mask_domain)
    rng = np.random.default_rng(seed)
    results = {}
    mask = rng.uniform(0.05, 0.95, loss.shape)
    results["loss/mask"] = check_mask_gradient(loss, mask, n_coords, seed=seed).max_rel_error
    model = EstimatorModel.init(replace(cfg.model, seed=seed))
    frames = model.features(np.log1p(loss.noisy_mag))
    upstream = rng.standard_normal(loss.shape)
    for c in check_param_gradients(model, frames, upstream=upstream, n_coords=n_coords // 2, seed=seed):
        results[f"estimator/{c.name}"] = c.max_rel_error
    for c in check_param_gradients(model, frames, loss=loss, n_coords=n_coords // 2, seed=seed):
        results[f"end_to_end/{c.name}"] = c.max_rel_error
    return results


def _parse_set(values) -> dict[str, str]:
    out = {}
    for item in values or ():
        if "=" not in item:
            raise ConfigError(item, "expected section.key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcs-enhance", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run-config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="shortcut for train.seed / synth.seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic noisy/clean corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-items", type=int)

    p = sub.add_parser("pcs", parents=[common], help="contrast-stretch a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", help="both, input, target or none (default: config pcs.mode)")
    p.add_argument("--bif", help="band-importance table (default: config pcs.bif)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train a mask estimator")
    p.add_argument("--manifest", required=True, help="training manifest")
    p.add_argument("--valid", help="validation manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("enhance", parents=[common], help="enhance a WAV file or manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="WAV file or .jsonl manifest")
    p.add_argument("--out", required=True, help="output WAV file or directory")
    p.add_argument("--format", default="float32", choices=("float32", "pcm16"))

    p = sub.add_parser("eval", parents=[common], help="score a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--system", default="identity", help="identity, oracle, or a model file")
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("ablate", parents=[common], help="train and score every PCS mode")
    p.add_argument("--out", required=True)
    p.add_argument("--train-manifest")
    p.add_argument("--test-manifest")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    p.add_argument("--coords", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-3)
    return parser


def _run(args) -> int:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides.setdefault("train.seed", str(args.seed))
        overrides.setdefault("synth.seed", str(args.seed))
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = str(args.epochs)
    if getattr(args, "lr", None) is not None:
        overrides["train.learning_rate"] = str(args.lr)
    cfg = load_config(args.config, overrides)
    logger.info("effective config:\n%s", cfg.to_ini())

    if args.command == "synth":
        m = cmd_synth(cfg, args.out, args.n_items)
        print(f"wrote {len(m)} pairs to {m.path}")
    elif args.command == "pcs":
        mode = args.mode if args.mode is not None else cfg.pcs_mode.name
        try:
            mode = PcsMode.from_name(mode)
        except ValueError as exc:
            raise ConfigError("--mode", str(exc)) from None
        m = cmd_pcs(args.manifest, args.bif or cfg.bif, mode, args.out, cfg.stft, cfg.sample_rate)
        print(f"wrote {len(m)} pairs (PCS mode {mode.name}) to {m.path}")
    elif args.command == "train":
        res = cmd_train(cfg, args.manifest, args.out, args.valid, args.resume)
        print(f"model: {res['model']}\nlog: {res['log']}")
    elif args.command == "enhance":
        for p in cmd_enhance(args.model, args.input, args.out, args.format):
            print(p)
    elif args.command == "eval":
        report = cmd_eval(args.manifest, args.system, args.out, cfg.stft, args.jobs)
        means = report.means
        print(f"{report.system}: n={len(report.rows)} " + " ".join(f"{k}={v:.4f}" for k, v in means.items()))
        if report.errors:
            raise CommandFailed(f"{len(report.errors)} utterance(s) failed")
    elif args.command == "ablate":
        rows = cmd_ablate(cfg, args.out, train_manifest=args.train_manifest, test_manifest=args.test_manifest)
        for r in rows:
            print(f"{r['mode']:>6}  stoi={r['stoi']:.4f}  si_sdr={r['si_sdr_db']:.2f} dB")
    elif args.command == "gradcheck":
        results = cmd_gradcheck(cfg, cfg.train.seed, args.coords)
        worst = max(results.values())
        for k, v in results.items():
            print(f"{k:<20} max rel err {v:.3e}")
        if worst >= args.tol:
            raise CommandFailed(f"gradient check failed: worst relative error {worst:.3e} >= {args.tol:g}")
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("PCS_ENHANCE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CommandFailed, ModelFileError, ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
