"""Command-line entry point.

Subcommands: synth, train, generate, predict, evaluate, experiment.
Option precedence is flag > config file > default; every command honors
--seed and is bit-reproducible for equal invocations.  The default
output root is $VADEERS_RUN_ROOT (falling back to the current
directory).  Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import gmm
from .data import (
    DESK_SPEC,
    Dataset,
    SynthSpec,
    apply_scaler,
    derive_guiding_labels,
    generate_synthetic,
    load_csv,
    save_csv,
)
from .exceptions import CheckpointError, DataError, NumericError, VadeersError
from .metrics import evaluate, pca2
from .model import LossWeights, ModelConfig, PRIOR_VARIANTS
from .training import (
    Checkpoint,
    Split,
    SplitSpec,
    TrainResult,
    TrainingAborted,
    TrainSchedule,
    load_checkpoint,
    save_checkpoint,
    train,
)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file {p} does not exist")
    with open(p, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {p}: invalid JSON: {exc}") from None


def _merged(defaults: dict, config_section: dict | None, flags: dict) -> dict:
    """flag > config file > default, skipping unset (None) flags."""
    out = dict(defaults)
    for k, v in (config_section or {}).items():
        if k not in out:
            raise DataError(f"unknown config key {k!r}")
        out[k] = v
    for k, v in flags.items():
        if v is not None:
            out[k] = v
    return out


def _pick(config: dict, key: str, flag, default):
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _out_dir(out: str | None, default_name: str) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get("VADEERS_RUN_ROOT", ".")) / default_name


@click.group()
def cli():
    """Generative drug-sensitivity recommender toolkit."""


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--scale", type=click.Choice(["paper", "desk"]), default=None)
@click.option("--n-drugs", type=int, default=None)
@click.option("--n-profiled", type=int, default=None)
@click.option("--n-cells", type=int, default=None)
@click.option("--observance", type=float, default=None)
def synth(config_path, out, seed, scale, n_drugs, n_profiled, n_cells, observance):
    """Generate a synthetic dataset directory (CSV files + manifest)."""
    config = _load_config(config_path)
    seed = int(_pick(config, "seed", seed, 0))
    scale = _pick(config, "scale", scale, "desk")
    base = asdict(DESK_SPEC if scale == "desk" else SynthSpec())
    spec = SynthSpec(**_merged(base, config.get("synth"), {
        "n_drugs": n_drugs, "n_profiled": n_profiled,
        "n_cells": n_cells, "observance": observance,
    }))
    out_dir = _out_dir(out, f"synth-seed{seed}")
    dataset = generate_synthetic(spec, seed=seed)
    save_csv(dataset, out_dir, seed=seed, generator_spec=spec)
    click.echo(f"wrote {len(dataset.drugs)} drugs, {len(dataset.cells)} cells, "
               f"{len(dataset.sensitivities)} pairs to {out_dir}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _model_config_for(dataset: Dataset, config: dict, variant: str,
                      flags: dict) -> ModelConfig:
    defaults = {
        "smiles_dim": dataset.smiles_dim,
        "ip_dim": dataset.ip_dim,
        "bio_dim": dataset.bio_dim,
        "latent_dim": 10,
        "dvae_encoder_dims": (128, 64),
        "decoder_dims": (64, 128),
        "dspn_dims": (512, 256, 128),
        "dspn_dropout": 0.5,
        "n_components": 3,
        "n_guiding_labels": 3,
        "prior_variant": variant,
        "dspn_input": "mean",
    }
    merged = _merged(defaults, config.get("model"), flags)
    merged["prior_variant"] = variant
    for key in ("dvae_encoder_dims", "decoder_dims", "dspn_dims"):
        merged[key] = tuple(merged[key])
    return ModelConfig(**merged)


def _run_training(dataset: Dataset, config: dict, variant: str, seed: int,
                  model_flags: dict, schedule_flags: dict,
                  split_flags: dict) -> tuple[TrainResult, ModelConfig, SplitSpec]:
    model_config = _model_config_for(dataset, config, variant, model_flags)
    schedule_kwargs = _merged(
        {f: getattr(TrainSchedule(), f) for f in
         ("joint_epochs", "dspn_epochs", "lr_joint", "lr_dspn",
          "dspn_lr_decay", "dspn_lr_decay_every", "batch_size",
          "dvae_break_every_steps", "dvae_break_epochs", "dvae_break_batch")},
        config.get("schedule"), schedule_flags)
    schedule = TrainSchedule(seed=seed, **schedule_kwargs)
    split_kwargs = _merged({"n_val_cells": 100, "n_test_cells": 100},
                           config.get("split"), split_flags)
    split_spec = SplitSpec(seed=seed, **split_kwargs)
    weights = LossWeights(**_merged(
        {f: 1.0 for f in ("smiles_recon", "ip_recon", "prior", "entropy",
                          "cae", "dspn")},
        config.get("weights"), {}))
    if model_config.uses_gmm:
        dataset = derive_guiding_labels(
            dataset, n_labels=model_config.n_guiding_labels, seed=seed)
    result = train(dataset, model_config, schedule, weights, split_spec)
    return result, model_config, split_spec


def _write_run_dir(out_dir: Path, result: TrainResult, dataset: Dataset,
                   seed: int) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = {d.id: d.guiding_label for d in result.dataset_std.drugs
              if d.guiding_label is not None}
    checkpoint = Checkpoint(
        model=result.model,
        scaler=result.scaler,
        guiding_labels=labels or None,
        split_cells={
            "train": result.split.train_cells,
            "val": result.split.val_cells,
            "test": result.split.test_cells,
        },
        seed=seed,
    )
    ckpt_path = out_dir / "checkpoint.bin"
    save_checkpoint(checkpoint, ckpt_path)
    result.runlog.export_jsonl(out_dir / "runlog.jsonl")
    report = evaluate(result.model, dataset, result.dataset_std, result.split,
                      result.scaler, labels=labels or None, seed=seed,
                      pairs="val")
    (out_dir / "report_val.json").write_text(report.to_json() + "\n")
    return ckpt_path


@cli.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--variant", type=click.Choice(PRIOR_VARIANTS), default=None)
@click.option("--latent-dim", type=int, default=None)
@click.option("--n-components", type=int, default=None)
@click.option("--n-guiding-labels", type=int, default=None)
@click.option("--joint-epochs", type=int, default=None)
@click.option("--dspn-epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--break-every", "dvae_break_every_steps", type=int, default=None)
@click.option("--break-epochs", "dvae_break_epochs", type=int, default=None)
@click.option("--n-val-cells", type=int, default=None)
@click.option("--n-test-cells", type=int, default=None)
def train_cmd(config_path, data_dir, out, seed, variant, latent_dim,
              n_components, n_guiding_labels, joint_epochs, dspn_epochs,
              batch_size, dvae_break_every_steps, dvae_break_epochs,
              n_val_cells, n_test_cells):
    """Train one prior variant end to end and write a run directory."""
    config = _load_config(config_path)
    seed = int(_pick(config, "seed", seed, 0))
    variant = _pick(config, "variant", variant, "gmm_constrained")
    dataset = load_csv(data_dir)
    out_dir = _out_dir(out, f"train-{variant}-seed{seed}")
    try:
        result, model_config, _ = _run_training(
            dataset, config, variant, seed,
            model_flags={"latent_dim": latent_dim, "n_components": n_components,
                         "n_guiding_labels": n_guiding_labels},
            schedule_flags={"joint_epochs": joint_epochs,
                            "dspn_epochs": dspn_epochs,
                            "batch_size": batch_size,
                            "dvae_break_every_steps": dvae_break_every_steps,
                            "dvae_break_epochs": dvae_break_epochs},
            split_flags={"n_val_cells": n_val_cells,
                         "n_test_cells": n_test_cells},
        )
    except TrainingAborted as exc:
        # label the partial artifacts, then surface the numeric failure
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(Checkpoint(model=exc.model, seed=seed),
                        out_dir / "checkpoint_last_good.ABORTED.bin")
        exc.runlog.export_jsonl(out_dir / "runlog.ABORTED.jsonl")
        raise
    _write_run_dir(out_dir, result, dataset, seed)
    (out_dir / "config_echo.json").write_text(
        json.dumps({"variant": variant, "seed": seed,
                    "model": asdict(model_config)}, sort_keys=True, indent=2)
        + "\n")
    click.echo(f"run directory: {out_dir}")


cli.add_command(train_cmd, name="train")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--checkpoint", "checkpoint_path", type=str, required=True)
@click.option("--component", type=int, default=None)
@click.option("--n", "n_samples", type=int, default=300)
@click.option("--out", type=str, default=None)
@click.option("--seed", type=int, default=0)
def generate(checkpoint_path, component, n_samples, out, seed):
    """Decode latent samples into embedding + profile rows (CSV).

    With --component K the samples come from mixture component K (GMM
    checkpoints only); without it, the vanilla prior or the full mixture
    is sampled."""
    ckpt = load_checkpoint(checkpoint_path)
    model = ckpt.model
    config = model.config
    gmm_params = model.gmm_params()
    rng = np.random.Generator(np.random.PCG64(seed))
    if component is not None:
        if gmm_params is None:
            raise DataError(
                "component-conditioned generation is unsupported for the "
                "vanilla prior; rerun without --component"
            )
        if not (0 <= component < gmm_params.n_components):
            raise DataError(
                f"component {component} out of range "
                f"[0, {gmm_params.n_components})"
            )
        z = gmm.sample_component(component, gmm_params, n_samples, rng)
        comp_col = [component] * n_samples
    elif gmm_params is not None:
        z = gmm.sample_mixture(gmm_params, n_samples, rng)
        comp_col = [-1] * n_samples
    else:
        z = rng.standard_normal((n_samples, config.latent_dim))
        comp_col = [-1] * n_samples
    recon, ip_pred = model.decode_drug(z)
    emb = recon.data
    ip = ip_pred.data
    if ckpt.scaler is not None:
        emb = ckpt.scaler.inverse_embedding(emb)
        ip = ckpt.scaler.inverse_ip(ip)
    out_path = Path(out) if out else _out_dir(None, "generated.csv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["component"]
                   + [f"e{i}" for i in range(config.smiles_dim)]
                   + [f"k{i}" for i in range(config.ip_dim)])
        for c, e_row, k_row in zip(comp_col, emb, ip):
            w.writerow([c] + [repr(float(x)) for x in e_row]
                       + [repr(float(x)) for x in k_row])
    click.echo(f"wrote {n_samples} generated rows to {out_path}")


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def _read_feature_csv(path: str, width: int, what: str) -> tuple[list[str], np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing file {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows) < 2:
        raise DataError(f"{p.name}: no data rows")
    got = len(rows[0]) - 1
    if got != width:
        raise DataError(
            f"{p.name}: {what} width {got} does not match checkpoint width {width}"
        )
    ids, values = [], []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != width + 1:
            raise DataError(f"{p.name}: row {r} has {len(row)} fields, "
                            f"expected {width + 1}")
        ids.append(row[0])
        try:
            values.append([float(tok) for tok in row[1:]])
        except ValueError:
            raise DataError(f"{p.name}: row {r}: non-numeric value") from None
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{p.name}: non-finite values")
    return ids, arr


@cli.command()
@click.option("--checkpoint", "checkpoint_path", type=str, required=True)
@click.option("--drugs", "drugs_path", type=str, required=True)
@click.option("--cells", "cells_path", type=str, required=True)
@click.option("--out", type=str, default=None)
def predict(checkpoint_path, drugs_path, cells_path, out):
    """Predict sensitivity for row-aligned (drug, cell) pairs."""
    ckpt = load_checkpoint(checkpoint_path)
    model = ckpt.model
    drug_ids, emb = _read_feature_csv(drugs_path, model.config.smiles_dim,
                                      "drug embedding")
    cell_ids, feats = _read_feature_csv(cells_path, model.config.bio_dim,
                                        "cell feature")
    if len(drug_ids) != len(cell_ids):
        raise DataError(
            f"{len(drug_ids)} drug rows vs {len(cell_ids)} cell rows; "
            f"the files pair row-by-row"
        )
    if ckpt.scaler is not None:
        emb = ckpt.scaler.transform_embedding(emb)
        feats = ckpt.scaler.transform_cell(feats)
    mu = model.drug_latent_means(emb)
    lat = model.cell_latents(feats)
    preds = model.predict_sensitivity(mu, lat)
    if ckpt.scaler is not None:
        preds = ckpt.scaler.inverse_ic50(preds)
    out_path = Path(out) if out else _out_dir(None, "predictions.csv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["drug_id", "cell_id", "prediction"])
        for d, c, y in zip(drug_ids, cell_ids, preds):
            w.writerow([d, c, repr(float(y))])
    click.echo(f"wrote {len(preds)} predictions to {out_path}")


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _rebuild_split(dataset: Dataset, split_cells: dict) -> Split:
    known = {c.id for c in dataset.cells}
    stored = set().union(*(set(v) for v in split_cells.values()))
    if stored != known:
        raise DataError(
            "split reconstruction mismatch: the dataset's cell lines differ "
            "from those recorded at training time"
        )
    val_set = set(split_cells["val"])
    test_set = set(split_cells["test"])
    train_pairs, val_pairs, test_pairs = [], [], []
    for pair in dataset.sensitivities.pairs():
        if pair[1] in val_set:
            val_pairs.append(pair)
        elif pair[1] in test_set:
            test_pairs.append(pair)
        else:
            train_pairs.append(pair)
    return Split(train_cells=split_cells["train"], val_cells=split_cells["val"],
                 test_cells=split_cells["test"], train_pairs=train_pairs,
                 val_pairs=val_pairs, test_pairs=test_pairs)


@cli.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", type=str, required=True)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", type=str, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--n-gen", type=int, default=300)
def evaluate_cmd(checkpoint_path, data_dir, out, seed, n_gen):
    """Full metric report plus 2-D projection CSVs for plotting."""
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.scaler is None or ckpt.split_cells is None:
        raise CheckpointError("checkpoint lacks scaler/split records")
    dataset = load_csv(data_dir)
    split = _rebuild_split(dataset, ckpt.split_cells)
    dataset_std = apply_scaler(dataset, ckpt.scaler)
    report = evaluate(ckpt.model, dataset, dataset_std, split, ckpt.scaler,
                      labels=ckpt.guiding_labels, n_gen_per_component=n_gen,
                      seed=seed)
    out_dir = _out_dir(out, f"eval-seed{seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n")

    labels = ckpt.guiding_labels or {}
    profiled = [d for d in dataset_std.drugs if d.id in labels]
    if len(profiled) >= 3:
        mu = ckpt.model.drug_latent_means(
            np.stack([d.smiles_embedding for d in profiled]))
        proj, _ = pca2(mu)
        with open(out_dir / "latent_pca.csv", "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["drug_id", "label", "pc1", "pc2"])
            for d, row in zip(profiled, proj):
                w.writerow([d.id, labels[d.id], repr(float(row[0])),
                            repr(float(row[1]))])

    rng = np.random.Generator(np.random.PCG64(seed))
    gmm_params = ckpt.model.gmm_params()
    if gmm_params is not None:
        zs, comps = [], []
        for k in range(gmm_params.n_components):
            zs.append(gmm.sample_component(k, gmm_params, n_gen, rng))
            comps.extend([k] * n_gen)
    else:
        zs = [rng.standard_normal((3 * n_gen, ckpt.model.config.latent_dim))]
        comps = [-1] * (3 * n_gen)
    _, ip_gen = ckpt.model.decode_drug(np.concatenate(zs))
    proj, _ = pca2(ip_gen.data)
    with open(out_dir / "generated_ip_pca.csv", "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "pc1", "pc2"])
        for c, row in zip(comps, proj):
            w.writerow([c, repr(float(row[0])), repr(float(row[1]))])
    click.echo(f"report: {out_dir / 'report.json'}")


# ---------------------------------------------------------------------------
# experiment grid
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", type=str, default=None)
@click.option("--seeds", type=str, default="0,1,2,3,4")
@click.option("--variants", type=str, default=",".join(PRIOR_VARIANTS))
@click.option("--joint-epochs", type=int, default=None)
@click.option("--dspn-epochs", type=int, default=None)
def experiment(config_path, data_dir, out, seeds, variants, joint_epochs,
               dspn_epochs):
    """Run the variant x seed grid and aggregate mean +- std per metric."""
    config = _load_config(config_path)
    seed_list = [int(s) for s in seeds.split(",") if s != ""]
    variant_list = [v.strip() for v in variants.split(",") if v.strip()]
    for v in variant_list:
        if v not in PRIOR_VARIANTS:
            raise DataError(f"unknown variant {v!r}")
    dataset = load_csv(data_dir)
    out_dir = _out_dir(out, "experiment")
    out_dir.mkdir(parents=True, exist_ok=True)

    metric_names = ("ic50_rmse", "ic50_pearson", "ip_rmse",
                    "silhouette_latent", "silhouette_generated",
                    "centroid_pearson", "std_rmse")
    grid: dict[str, dict[str, list[float]]] = {
        v: {m: [] for m in metric_names} for v in variant_list}
    for variant in variant_list:
        for seed in seed_list:
            result, _, _ = _run_training(
                dataset, config, variant, seed, model_flags={},
                schedule_flags={"joint_epochs": joint_epochs,
                                "dspn_epochs": dspn_epochs},
                split_flags={})
            run_dir = out_dir / f"{variant}-seed{seed}"
            _write_run_dir(run_dir, result, dataset, seed)
            labels = {d.id: d.guiding_label for d in result.dataset_std.drugs
                      if d.guiding_label is not None}
            report = evaluate(result.model, dataset, result.dataset_std,
                              result.split, result.scaler,
                              labels=labels or None, seed=seed, pairs="test")
            (run_dir / "report_test.json").write_text(report.to_json() + "\n")
            for m in metric_names:
                v = getattr(report, m)
                if v is not None:
                    grid[variant][m].append(float(v))

    summary = {}
    for variant, metrics_ in grid.items():
        summary[variant] = {}
        for m, vals in metrics_.items():
            if vals:
                summary[variant][m] = {
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals)),
                    "n": len(vals),
                }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "metric", "mean", "std", "n"])
        for variant in variant_list:
            for m in metric_names:
                if m in summary[variant]:
                    s = summary[variant][m]
                    w.writerow([variant, m, repr(s["mean"]), repr(s["std"]),
                                s["n"]])
    click.echo(f"summary: {out_dir / 'summary.json'}")


# ---------------------------------------------------------------------------
# entry point with exit-code mapping
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except (DataError, CheckpointError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except (NumericError, TrainingAborted) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 2
    except VadeersError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
