"""Command-line interface: pretraining, joint training, embedding,
verification, localization, robustness evaluation, and reporting.

Every run directory follows one layout:

    config.json          frozen copy of the run config (with its hash)
    checkpoints/         immutable model checkpoints
    logs/train.jsonl     append-only training log
    results/*.csv|*.json evaluation tables (byte-stable under fixed seed)
    plots/               report figures

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from . import degradations, evaluation, metrics, synthesis, training
from .bits import bits_to_hex, hex_to_bits, sample_bits
from .checkpointing import load_models, model_meta, save_models
from .configs import ConfigError, RunConfig, config_hash, run_config_from_dict, to_dict
from .datasets import generate_corpus, list_images, load_folder, load_image, save_image
from .forensic import ForensicNetwork


def _load_run_config(path: str) -> tuple[RunConfig, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    cfg = run_config_from_dict(data)
    return cfg, config_hash(cfg)


def _artifact_header(cfg_hash: str) -> str:
    return f"config_hash={cfg_hash} version={__version__}"


def _prepare_run_dir(cfg: RunConfig, cfg_hash: str) -> Path:
    run_dir = Path(cfg.out_dir)
    for sub in ("checkpoints", "logs", "results", "plots"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"config_hash": cfg_hash, "version": __version__,
                   "config": to_dict(cfg)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir


def _write_rows(run_dir: Path, name: str, rows: list[dict], cfg_hash: str,
                columns=metrics.CSV_COLUMNS) -> None:
    csv_text = metrics.rows_to_csv(rows, columns=columns,
                                   header_comment=_artifact_header(cfg_hash))
    (run_dir / "results" / f"{name}.csv").write_text(csv_text)
    json_text = metrics.rows_to_json(rows, meta={"config_hash": cfg_hash,
                                                 "version": __version__})
    (run_dir / "results" / f"{name}.json").write_text(json_text)


def _check_hash(payload: dict, cfg_hash: str) -> None:
    stored = payload.get("config_hash", "")
    if stored and cfg_hash and stored != cfg_hash:
        click.echo(f"warning: checkpoint config hash {stored} does not match "
                   f"current config {cfg_hash}", err=True)


def _load_corpus(path: str, what: str) -> torch.Tensor:
    if not path:
        raise ConfigError(f"{what} directory not set in config")
    folder = Path(path)
    if not folder.is_dir():
        raise ConfigError(f"{what} directory not found: {folder}")
    return load_folder(folder)


@click.group()
def cli():
    """Holistic watermarking and tamper-localization toolkit."""


@cli.command("synth-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", default=2000, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_synth_corpus(out_dir, count, size, seed):
    """Generate a deterministic synthetic image corpus."""
    paths = generate_corpus(out_dir, count, size, seed)
    click.echo(f"wrote {len(paths)} images to {out_dir}")


@cli.command("pretrain")
@click.option("--config", "config_path", required=True, type=click.Path())
def cmd_pretrain(config_path):
    """Pretrain the toy autoencoder on the reconstruction objective."""
    cfg, cfg_hash = _load_run_config(config_path)
    run_dir = _prepare_run_dir(cfg, cfg_hash)
    corpus = _load_corpus(cfg.data_dir, "data")
    result = training.pretrain_autoencoder(corpus, cfg.pretrain, cfg.autoencoder,
                                           log_fn=click.echo)
    ckpt = run_dir / "checkpoints" / "autoencoder.pt"
    save_models(ckpt, result.autoencoder, None, cfg_hash,
                model_meta(cfg.autoencoder, image_size=cfg.image_size),
                extra={"achieved_psnr_db": result.achieved_psnr_db,
                       "met_criterion": result.met_criterion})
    if not result.met_criterion:
        click.echo(f"warning: reconstruction PSNR {result.achieved_psnr_db:.2f} dB "
                   f"below criterion {cfg.pretrain.min_psnr_db} dB", err=True)
    click.echo(f"autoencoder checkpoint: {ckpt}")
    click.echo(f"run dir: {run_dir}")


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--no-resume", is_flag=True, default=False)
def cmd_train(config_path, no_resume):
    """Joint training of the watermark adapters and the forensic network."""
    cfg, cfg_hash = _load_run_config(config_path)
    if not cfg.pretrained_checkpoint:
        raise ConfigError("config.pretrained_checkpoint must point to a pretrained autoencoder")
    if not Path(cfg.pretrained_checkpoint).is_file():
        raise ConfigError(f"pretrained checkpoint not found: {cfg.pretrained_checkpoint}")
    run_dir = _prepare_run_dir(cfg, cfg_hash)
    corpus = _load_corpus(cfg.data_dir, "data")
    ae, _, payload = load_models(cfg.pretrained_checkpoint)
    _check_hash(payload, cfg_hash)
    torch.manual_seed(cfg.train.seed)
    forensic = ForensicNetwork(cfg.autoencoder.bit_length, cfg.moe, cfg.unet,
                               image_size=cfg.image_size)
    meta = model_meta(cfg.autoencoder, cfg.moe, cfg.unet, cfg.image_size)
    final = training.train(cfg.train, corpus, ae, forensic, run_dir,
                           config_hash=cfg_hash, model_cfg=meta,
                           log_fn=click.echo, resume=not no_resume)
    click.echo(f"final checkpoint: {final}")

    if cfg.val_dir:
        val = _load_corpus(cfg.val_dir, "val")
        fid = evaluation.fidelity_rows(ae, val, seed=cfg.seed)
        fid_rows = [{"run_id": cfg_hash, "split": "val", "attack": "identity",
                     "param": 0, **r} for r in fid]
        _write_rows(run_dir, "fidelity",
                    metrics.aggregate(fid_rows, ("run_id", "split", "attack", "param")),
                    cfg_hash)
        samples = evaluation.build_eval_samples(ae, val, cfg.train.splice, seed=cfg.seed)
        rows = evaluation.forensic_rows(forensic, samples)
        clean_rows = [{"run_id": cfg_hash, "split": "val", "attack": "clean",
                       "param": 0, **{k: r[k] for k in ("bit_acc", "f1", "iou", "auc")}}
                      for r in rows]
        _write_rows(run_dir, "clean",
                    metrics.aggregate(clean_rows, ("run_id", "split", "attack", "param")),
                    cfg_hash)
        click.echo(f"val fidelity/clean tables written under {run_dir / 'results'}")
    click.echo(f"run dir: {run_dir}")


def _load_bundle(checkpoint):
    if not Path(checkpoint).is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    return load_models(checkpoint)


@cli.command("embed")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--images", "image_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--bits", "bits_hex", default=None, help="hex message applied to every image")
@click.option("--random", "random_bits", is_flag=True, help="draw fresh bits per image")
@click.option("--seed", default=0, show_default=True)
def cmd_embed(checkpoint, image_dir, out_dir, bits_hex, random_bits, seed):
    """Watermark every image in a directory through the adapter decoder."""
    if (bits_hex is None) == (not random_bits):
        raise ConfigError("exactly one of --bits or --random is required")
    ae, _, payload = _load_bundle(checkpoint)
    length = ae.cfg.bit_length
    fixed = hex_to_bits(bits_hex, length) if bits_hex else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = out / "manifest.jsonl"
    manifest.write_text("")
    cfg_hash = payload.get("config_hash", "")
    with torch.no_grad():
        for path in list_images(image_dir):
            img = load_image(path)
            bits = fixed if fixed is not None else sample_bits(rng, length)
            marked = ae.decode_watermarked(ae.encode(img), bits)
            dest = out / path.name
            save_image(marked, dest, metadata={"config_hash": cfg_hash,
                                               "version": __version__})
            with open(manifest, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"image_path": str(dest),
                                     "bits_hex": bits_to_hex(bits)}) + "\n")
    click.echo(f"watermarked images in {out} (manifest: {manifest})")


@cli.command("verify")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--images", "image_dir", required=True, type=click.Path())
@click.option("--bits", "bits_hex", default=None)
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--out", "out_csv", required=True, type=click.Path())
def cmd_verify(checkpoint, image_dir, bits_hex, manifest_path, out_csv):
    """Extract watermark bits and report per-image bit accuracy."""
    if (bits_hex is None) == (manifest_path is None):
        raise ConfigError("exactly one of --bits or --manifest is required")
    ae, forensic, payload = _load_bundle(checkpoint)
    if forensic is None:
        raise ConfigError("checkpoint has no forensic network; train first")
    length = ae.cfg.bit_length
    expected = {}
    if manifest_path:
        for rec in synthesis.read_manifest(manifest_path):
            expected[Path(rec["image_path"]).name] = rec["bits_hex"]
    rows = []
    cfg_hash = payload.get("config_hash", "")
    with torch.no_grad():
        for path in list_images(image_dir):
            hexval = bits_hex or expected.get(path.name)
            if hexval is None:
                raise ConfigError(f"no bits in manifest for {path.name}")
            bits = hex_to_bits(hexval, length)
            _, wm_logits = forensic(load_image(path))
            rows.append({"run_id": path.name, "split": "verify", "attack": "identity",
                         "param": 0, "bit_acc": metrics.bit_accuracy(bits, wm_logits)})
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(metrics.rows_to_csv(rows, header_comment=_artifact_header(cfg_hash)))
    mean_acc = float(np.mean([r["bit_acc"] for r in rows]))
    click.echo(f"bit accuracy mean {mean_acc:.3f}% over {len(rows)} images -> {out}")


@cli.command("localize")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--images", "image_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_localize(checkpoint, image_dir, out_dir):
    """Predict tamper masks; writes binary masks and red overlays."""
    ae, forensic, payload = _load_bundle(checkpoint)
    del ae
    if forensic is None:
        raise ConfigError("checkpoint has no forensic network; train first")
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    cfg_hash = payload.get("config_hash", "")
    meta = {"config_hash": cfg_hash, "version": __version__}
    with torch.no_grad():
        for path in list_images(image_dir):
            img = load_image(path)
            mask_logits, _ = forensic(img)
            pred = (mask_logits >= 0.0).float()
            synthesis.save_mask_png(pred, out / "masks" / path.name)
            red = torch.tensor([1.0, 0.0, 0.0]).view(3, 1, 1)
            overlay = img * (1 - 0.5 * pred) + red * (0.5 * pred)
            save_image(overlay, out / "overlays" / path.name, metadata=meta)
    click.echo(f"masks and overlays in {out}")


_COVERAGE_BINS = ((0.05, 0.15), (0.15, 0.25), (0.25, 0.35), (0.35, 0.45), (0.45, 0.55))


@cli.command("attack")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--images", "image_dir", required=True, type=click.Path())
@click.option("--suite", "suite_path", required=True, type=click.Path())
@click.option("--out", "run_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--coverage-sweep/--no-coverage-sweep", default=True, show_default=True)
def cmd_attack(checkpoint, image_dir, suite_path, run_dir, seed, coverage_sweep):
    """Robustness protocol: attack spliced images, score bit accuracy and F1."""
    ae, forensic, payload = _load_bundle(checkpoint)
    if forensic is None:
        raise ConfigError("checkpoint has no forensic network; train first")
    if not Path(suite_path).is_file():
        raise ConfigError(f"suite spec not found: {suite_path}")
    specs = degradations.load_suite(suite_path)
    images = _load_corpus(image_dir, "images")
    cfg_hash = payload.get("config_hash", "")
    run = Path(run_dir)
    (run / "results").mkdir(parents=True, exist_ok=True)
    rows = degradations.run_suite(ae, forensic, images, specs, seed=seed)
    for row in rows:
        row.update({"run_id": cfg_hash, "split": "attack"})
    _write_rows(run, "robustness", rows, cfg_hash)
    click.echo(f"robustness table: {run / 'results' / 'robustness.csv'}")

    if coverage_sweep:
        from .configs import SpliceConfig
        cov_rows = []
        for lo, hi in _COVERAGE_BINS:
            cfg = SpliceConfig(coverage_range=(lo, hi))
            samples = evaluation.build_eval_samples(ae, images, cfg, seed=seed)
            per_image = evaluation.forensic_rows(forensic, samples)
            cov_rows.append({"run_id": cfg_hash, "split": "coverage",
                             "attack": "coverage", "param": (lo + hi) / 2,
                             "bit_acc": evaluation.mean_of(per_image, "bit_acc"),
                             "f1": evaluation.mean_of(per_image, "f1"),
                             "iou": evaluation.mean_of(per_image, "iou"),
                             "auc": evaluation.mean_of(per_image, "auc")})
        _write_rows(run, "coverage", cov_rows, cfg_hash)
        click.echo(f"coverage sweep: {run / 'results' / 'coverage.csv'}")


def _read_results_csv(path: Path) -> list[dict]:
    import csv as _csv

    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(_csv.DictReader(lines))


@cli.command("report")
@click.option("--run-dir", "run_dir", required=True, type=click.Path())
def cmd_report(run_dir):
    """Summarize a run directory: fidelity/robustness tables and line plots."""
    run = Path(run_dir)
    if not run.is_dir():
        raise ConfigError(f"run dir not found: {run}")
    results = run / "results"
    robustness_csv = results / "robustness.csv"
    if not robustness_csv.is_file():
        raise ConfigError(f"missing artifact: {robustness_csv}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots = run / "plots"
    plots.mkdir(parents=True, exist_ok=True)

    rob = _read_results_csv(robustness_csv)
    fig, ax = plt.subplots(figsize=(6, 4))
    by_kind: dict[str, list] = {}
    for row in rob:
        if row["attack"] in ("identity", "clean"):
            continue
        by_kind.setdefault(row["attack"], []).append(
            (float(row["param"]), float(row["bit_acc"])))
    for kind, pts in sorted(by_kind.items()):
        pts.sort()
        ax.plot([p for p, _ in pts], [a for _, a in pts], marker="o", label=kind)
    ax.set_xlabel("attack strength")
    ax.set_ylabel("bit accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(plots / "bit_acc_vs_attack.png")
    plt.close(fig)

    coverage_csv = results / "coverage.csv"
    if coverage_csv.is_file():
        cov = _read_results_csv(coverage_csv)
        fig, ax = plt.subplots(figsize=(6, 4))
        pts = sorted((float(r["param"]), float(r["f1"])) for r in cov)
        ax.plot([p for p, _ in pts], [f for _, f in pts], marker="o", color="tab:red")
        ax.set_xlabel("tamper coverage")
        ax.set_ylabel("F1")
        fig.tight_layout()
        fig.savefig(plots / "f1_vs_coverage.png")
        plt.close(fig)

    summary_lines = ["run summary", "==========="]
    for name in ("fidelity", "clean", "robustness", "coverage"):
        path = results / f"{name}.csv"
        if path.is_file():
            summary_lines.append(f"\n[{name}]")
            summary_lines.extend(ln.rstrip() for ln in path.read_text().splitlines())
    summary_lines.append("\nlpips: n/a (learned metric out of scope)")
    summary_lines.append("fid: n/a (learned metric out of scope)")
    (run / "results" / "summary.txt").write_text("\n".join(summary_lines) + "\n")
    click.echo(f"plots in {plots}, summary in {results / 'summary.txt'}")


def entrypoint(argv=None) -> int:
    """CLI wrapper mapping errors to documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except (ConfigError, click.UsageError, click.BadParameter, FileNotFoundError) as e:
        msg = e.format_message() if isinstance(e, click.UsageError) else str(e)
        click.echo(f"error: {msg}", err=True)
        return 1
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.Abort:
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures end with code 2
        click.echo(f"runtime failure: {e}", err=True)
        return 2


def main():
    sys.exit(entrypoint())


if __name__ == "__main__":
    main()
