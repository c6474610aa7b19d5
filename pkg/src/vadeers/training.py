"""Training protocol: joint phase with periodic DVAE-only breaks, then a
DSPN-only phase with frozen DVAE/CAE and a decayed learning rate; plus
the cell-line-held-out split, run logging, and checkpoint round-trips.

Step accounting: the break counter counts joint-phase optimizer steps
only; the steps taken inside a break do not advance it.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import Dataset, Scaler, standardize
from .exceptions import CheckpointError, ContractViolation, DataError, NumericError
from .model import Batch, LossWeights, ModelConfig, VadeersModel
from .nnkernel import (
    AdamState,
    GradientTape,
    Tensor,
    adam_step,
    mul,
    square,
    sub,
    tmean,
    wrap,
)

CHECKPOINT_MAGIC = b"VADEERS\x01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainSchedule:
    """Defaults are the reference protocol: 150 joint + 50 predictor-only
    epochs, lr 0.005 then 0.001 decaying x0.1 every 10 epochs, batch 128,
    a DVAE-only break of 100 epochs (batch 8) every 1000 joint steps."""

    joint_epochs: int = 150
    dspn_epochs: int = 50
    total_epochs: int | None = None  # auto: joint + dspn (200 by default)
    lr_joint: float = 0.005
    lr_dspn: float = 0.001
    dspn_lr_decay: float = 0.1
    dspn_lr_decay_every: int = 10
    batch_size: int = 128
    dvae_break_every_steps: int = 1000
    dvae_break_epochs: int = 100
    dvae_break_batch: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.total_epochs is None:
            object.__setattr__(self, "total_epochs",
                               self.joint_epochs + self.dspn_epochs)
        if self.total_epochs != self.joint_epochs + self.dspn_epochs:
            raise ContractViolation(
                f"total_epochs ({self.total_epochs}) != joint_epochs + "
                f"dspn_epochs ({self.joint_epochs} + {self.dspn_epochs})"
            )
        for name in ("batch_size", "dvae_break_every_steps",
                     "dvae_break_epochs", "dvae_break_batch",
                     "dspn_lr_decay_every"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive")
        if self.joint_epochs < 0 or self.dspn_epochs < 0:
            raise ContractViolation("epoch counts must be non-negative")

    def dspn_lr_at(self, epoch: int) -> float:
        """Effective phase-2 learning rate at 0-indexed phase-2 epoch."""
        return self.lr_dspn * self.dspn_lr_decay ** (epoch // self.dspn_lr_decay_every)


@dataclass(frozen=True)
class SplitSpec:
    n_val_cells: int = 100
    n_test_cells: int = 100
    seed: int = 0


@dataclass
class Split:
    train_cells: list[str]
    val_cells: list[str]
    test_cells: list[str]
    train_pairs: list[tuple[str, str]]
    val_pairs: list[tuple[str, str]]
    test_pairs: list[tuple[str, str]]

    def cell_sets(self) -> tuple[set[str], set[str], set[str]]:
        return set(self.train_cells), set(self.val_cells), set(self.test_cells)


def split_by_cell_line(dataset: Dataset, spec: SplitSpec) -> Split:
    """Partition by cell line: every observed pair lands in the partition
    owning its cell line, and no cell line appears in two partitions."""
    cell_ids = [c.id for c in dataset.cells]
    held_out = spec.n_val_cells + spec.n_test_cells
    if len(cell_ids) <= held_out:
        raise DataError(
            f"need more than {held_out} distinct cell lines, have {len(cell_ids)}"
        )
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    order = list(np.array(sorted(cell_ids))[rng.permutation(len(cell_ids))])
    val = order[: spec.n_val_cells]
    test = order[spec.n_val_cells: held_out]
    train = order[held_out:]
    val_set, test_set = set(val), set(test)
    train_pairs, val_pairs, test_pairs = [], [], []
    for pair in dataset.sensitivities.pairs():
        if pair[1] in val_set:
            val_pairs.append(pair)
        elif pair[1] in test_set:
            test_pairs.append(pair)
        else:
            train_pairs.append(pair)
    return Split(train_cells=train, val_cells=val, test_cells=test,
                 train_pairs=train_pairs, val_pairs=val_pairs,
                 test_pairs=test_pairs)


# ---------------------------------------------------------------------------
# run log
# ---------------------------------------------------------------------------

@dataclass
class RunLog:
    """Per-epoch loss breakdowns and protocol events (phase transitions,
    breaks, freezes, lr changes)."""

    seed: int = 0
    events: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    cells_touched: set[str] = field(default_factory=set)
    wall_clock_seconds: float = 0.0

    def event(self, kind: str, **payload):
        self.events.append({"event": kind, **payload})

    def comparable(self) -> dict:
        """Everything except wall-clock, for determinism comparisons."""
        return {
            "seed": self.seed,
            "events": self.events,
            "epochs": self.epochs,
            "cells_touched": sorted(self.cells_touched),
        }

    def export_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"record": "meta", "seed": self.seed,
                                 "wall_clock_seconds": self.wall_clock_seconds})
                     + "\n")
            for e in self.events:
                fh.write(json.dumps({"record": "event", **e}) + "\n")
            for e in self.epochs:
                fh.write(json.dumps({"record": "epoch", **e}) + "\n")


def check_schedule_conformance(runlog: RunLog, schedule: TrainSchedule) -> list[str]:
    """Cross-check a run log against its schedule; returns violations."""
    problems: list[str] = []
    joint = [e for e in runlog.epochs if e["phase"] == 1]
    dspn = [e for e in runlog.epochs if e["phase"] == 2]
    if len(joint) != schedule.joint_epochs:
        problems.append(f"{len(joint)} joint epochs, expected {schedule.joint_epochs}")
    if len(dspn) != schedule.dspn_epochs:
        problems.append(f"{len(dspn)} dspn epochs, expected {schedule.dspn_epochs}")

    breaks = [e for e in runlog.events if e["event"] == "break_start"]
    total_joint_steps = joint[-1]["joint_step"] if joint else 0
    expected_breaks = total_joint_steps // schedule.dvae_break_every_steps
    if len(breaks) != expected_breaks:
        problems.append(f"{len(breaks)} breaks, expected {expected_breaks}")
    for i, b in enumerate(breaks, start=1):
        want = i * schedule.dvae_break_every_steps
        if b["at_joint_step"] != want:
            problems.append(f"break {i} at step {b['at_joint_step']}, expected {want}")

    freezes = [e for e in runlog.events if e["event"] == "freeze_check"]
    hashes = {e["hash"] for e in freezes}
    if schedule.dspn_epochs and len(freezes) != schedule.dspn_epochs:
        problems.append(f"{len(freezes)} freeze checks, "
                        f"expected {schedule.dspn_epochs}")
    if len(hashes) > 1:
        problems.append("frozen-parameter hash changed during phase 2")

    for e in dspn:
        want = schedule.dspn_lr_at(e["phase_epoch"])
        if abs(e["lr"] - want) > 1e-15 * max(1.0, want):
            problems.append(
                f"phase-2 epoch {e['phase_epoch']} lr {e['lr']}, expected {want}"
            )
    return problems


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

def _label_of(drug) -> int:
    return -1 if drug.guiding_label is None else int(drug.guiding_label)


def build_pair_batch(dataset: Dataset, pairs: list[tuple[str, str]],
                     ip_dim: int) -> Batch:
    """Batch over the unique drugs/cells touched by the given observed pairs."""
    didx = dataset.drug_index()
    cidx = dataset.cell_index()
    drug_ids = sorted({p[0] for p in pairs}, key=lambda i: didx[i])
    cell_ids = sorted({p[1] for p in pairs}, key=lambda i: cidx[i])
    dmap = {d: i for i, d in enumerate(drug_ids)}
    cmap = {c: i for i, c in enumerate(cell_ids)}
    drugs = [dataset.drugs[didx[d]] for d in drug_ids]
    cells = [dataset.cells[cidx[c]] for c in cell_ids]
    ip = np.zeros((len(drugs), ip_dim))
    mask = np.zeros(len(drugs))
    for i, d in enumerate(drugs):
        if d.has_profile:
            ip[i] = d.inhibition_profile
            mask[i] = 1.0
    observed = [p for p in pairs if p in dataset.sensitivities]
    return Batch(
        x_smiles=np.stack([d.smiles_embedding for d in drugs]),
        ip=ip,
        ip_mask=mask,
        labels=np.array([_label_of(d) for d in drugs], dtype=np.int64),
        x_bio=np.stack([c.features for c in cells]),
        pair_drug=np.array([dmap[p[0]] for p in observed], dtype=np.intp),
        pair_cell=np.array([cmap[p[1]] for p in observed], dtype=np.intp),
        y=np.array([dataset.sensitivities.value(*p) for p in observed]),
    )


def _drug_minibatch(drugs, ip_dim: int):
    ip = np.zeros((len(drugs), ip_dim))
    mask = np.zeros(len(drugs))
    for i, d in enumerate(drugs):
        if d.has_profile:
            ip[i] = d.inhibition_profile
            mask[i] = 1.0
    return (np.stack([d.smiles_embedding for d in drugs]), ip, mask,
            np.array([_label_of(d) for d in drugs], dtype=np.int64))


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

def _params_hash(model: VadeersModel, groups: tuple[str, ...]) -> str:
    h = hashlib.sha256()
    for group in groups:
        for name in model.group_names(group):
            h.update(name.encode())
            h.update(model.params[name].tobytes())
    return h.hexdigest()


class TrainingAborted(NumericError):
    """Raised when the loss goes non-finite; carries the last model state
    that completed an epoch with finite losses."""

    def __init__(self, message: str, model: VadeersModel, runlog: RunLog):
        super().__init__(message)
        self.model = model
        self.runlog = runlog


@dataclass
class TrainResult:
    model: VadeersModel
    runlog: RunLog
    scaler: Scaler
    split: Split
    dataset_std: Dataset  # standardized copy used for training/eval


def _batched(indices: np.ndarray, size: int):
    for start in range(0, len(indices), size):
        yield indices[start: start + size]


def train(dataset: Dataset, config: ModelConfig, schedule: TrainSchedule,
          weights: LossWeights, split_spec: SplitSpec) -> TrainResult:
    """Run the full two-phase protocol on ``dataset``.

    The dataset must already carry guiding labels when a GMM variant is
    trained.  Standardization is fitted on the training split inside.
    """
    if config.uses_gmm:
        labels = [d.guiding_label for d in dataset.drugs
                  if d.guiding_label is not None]
        if not labels:
            raise DataError("GMM variants need guiding labels; derive them first")
        if max(labels) >= config.n_guiding_labels:
            raise DataError(
                f"guiding label {max(labels)} out of range for "
                f"n_guiding_labels={config.n_guiding_labels}"
            )
    started = time.monotonic()
    split = split_by_cell_line(dataset, split_spec)
    data_std, scaler = standardize(dataset, set(split.train_cells))

    root = np.random.SeedSequence(schedule.seed)
    init_ss, order_ss, step_ss, break_ss = root.spawn(4)
    rng_init = np.random.Generator(np.random.PCG64(init_ss))
    rng_order = np.random.Generator(np.random.PCG64(order_ss))
    rng_step = np.random.Generator(np.random.PCG64(step_ss))
    rng_break = np.random.Generator(np.random.PCG64(break_ss))

    model = VadeersModel.initialize(config, rng_init)
    runlog = RunLog(seed=schedule.seed)
    frozen_groups = ("dvae", "cae", "gmm") if config.uses_gmm else ("dvae", "cae")
    runlog.event("init", hash=_params_hash(model, frozen_groups))
    runlog.event("phase_start", phase=1, joint_step=0)

    profiled = [d for d in data_std.drugs if d.has_profile]
    train_pairs = list(split.train_pairs)
    last_good = model.copy()

    adam = AdamState()
    break_adam = AdamState()
    joint_step = 0
    ip_dim = config.ip_dim

    def run_break():
        nonlocal break_adam
        runlog.event("break_start", at_joint_step=joint_step)
        for _ in range(schedule.dvae_break_epochs):
            order = rng_break.permutation(len(profiled))
            for chunk in _batched(order, schedule.dvae_break_batch):
                batch_drugs = [profiled[i] for i in chunk]
                xs, ip, mask, labels = _drug_minibatch(batch_drugs, ip_dim)
                tape = GradientTape()
                binder = model.binder(tape)
                try:
                    loss, _, _ = model.dvae_loss_batch(
                        binder, xs, ip, mask, labels, weights, rng_break)
                except NumericError as exc:
                    raise _abort(f"break diverged: {exc}") from None
                if not np.isfinite(loss.data):
                    raise _abort("break loss non-finite")
                grads = tape.gradient(loss)
                model.params, break_adam = adam_step(
                    model.params, grads, break_adam, schedule.lr_joint)
        runlog.event("break_end", at_joint_step=joint_step)

    def _abort(message: str) -> TrainingAborted:
        runlog.event("aborted", reason=message)
        runlog.wall_clock_seconds = time.monotonic() - started
        return TrainingAborted(message, last_good, runlog)

    # phase 1: joint training over observed train pairs
    for epoch in range(schedule.joint_epochs):
        order = rng_order.permutation(len(train_pairs))
        sums: dict[str, float] = {}
        n_batches = 0
        for chunk in _batched(order, schedule.batch_size):
            pairs = [train_pairs[i] for i in chunk]
            batch = build_pair_batch(data_std, pairs, ip_dim)
            runlog.cells_touched.update(p[1] for p in pairs)
            tape = GradientTape()
            binder = model.binder(tape)
            try:
                loss, parts, _ = model.total_loss(binder, batch, weights,
                                                  rng_step, mode="train")
            except NumericError as exc:
                raise _abort(f"joint step {joint_step + 1} diverged: {exc}") \
                    from None
            if not np.isfinite(loss.data):
                raise _abort(f"joint loss non-finite at step {joint_step + 1}")
            grads = tape.gradient(loss)
            model.params, adam = adam_step(model.params, grads, adam,
                                           schedule.lr_joint)
            joint_step += 1
            sums["total"] = sums.get("total", 0.0) + float(loss.data)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.data)
            n_batches += 1
            if joint_step % schedule.dvae_break_every_steps == 0:
                run_break()
        runlog.epochs.append({
            "phase": 1, "phase_epoch": epoch, "joint_step": joint_step,
            "lr": schedule.lr_joint,
            **{f"loss_{k}": v / max(n_batches, 1) for k, v in sums.items()},
        })
        last_good = model.copy()

    # phase 2: freeze everything but the predictor
    freeze_hash = _params_hash(model, frozen_groups)
    runlog.event("phase_start", phase=2, joint_step=joint_step,
                 frozen_hash=freeze_hash)

    drug_mu = model.drug_latent_means(data_std.embedding_matrix())
    cell_lat = model.cell_latents(data_std.feature_matrix())
    didx = data_std.drug_index()
    cidx = data_std.cell_index()
    pd_idx = np.array([didx[p[0]] for p in train_pairs], dtype=np.intp)
    pc_idx = np.array([cidx[p[1]] for p in train_pairs], dtype=np.intp)
    y = np.array([data_std.sensitivities.value(*p) for p in train_pairs])

    dspn_adam = AdamState()  # fresh moments: the lr regime changes
    current_lr = None
    for epoch in range(schedule.dspn_epochs):
        lr = schedule.dspn_lr_at(epoch)
        if lr != current_lr:
            runlog.event("lr_change", phase=2, phase_epoch=epoch, lr=lr)
            current_lr = lr
        order = rng_order.permutation(len(train_pairs))
        sums = {}
        n_batches = 0
        for chunk in _batched(order, schedule.batch_size):
            runlog.cells_touched.update(train_pairs[i][1] for i in chunk)
            dl = drug_mu[pd_idx[chunk]]
            cl = cell_lat[pc_idx[chunk]]
            tape = GradientTape()
            binder = model.binder(tape)
            try:
                preds = model.dspn_predict(dl, cl, binder, mode="train",
                                           rng=rng_step)
            except NumericError as exc:
                raise _abort(f"phase-2 epoch {epoch} diverged: {exc}") from None
            loss = mul(wrap(weights.dspn),
                       tmean(square(sub(preds, Tensor(y[chunk])))))
            if not np.isfinite(loss.data):
                raise _abort(f"dspn loss non-finite in phase-2 epoch {epoch}")
            grads = tape.gradient(loss)
            model.params, dspn_adam = adam_step(model.params, grads, dspn_adam,
                                                lr)
            sums["dspn"] = sums.get("dspn", 0.0) + float(loss.data)
            n_batches += 1
        runlog.epochs.append({
            "phase": 2, "phase_epoch": epoch, "joint_step": joint_step,
            "lr": lr,
            **{f"loss_{k}": v / max(n_batches, 1) for k, v in sums.items()},
        })
        check = _params_hash(model, frozen_groups)
        runlog.event("freeze_check", phase_epoch=epoch, hash=check)
        if check != freeze_hash:
            raise _abort("frozen parameters changed during phase 2")
        last_good = model.copy()

    runlog.wall_clock_seconds = time.monotonic() - started
    return TrainResult(model=model, runlog=runlog, scaler=scaler, split=split,
                       dataset_std=data_std)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to use a trained model later: parameters, config,
    the fitted scaler, guiding labels, and the split cell ids."""

    model: VadeersModel
    scaler: Scaler | None = None
    guiding_labels: dict[str, int] | None = None
    split_cells: dict[str, list[str]] | None = None
    seed: int | None = None


def save_checkpoint(checkpoint: Checkpoint, path):
    """Deterministic container: magic, JSON header (sorted keys), raw
    little-endian float64 arrays in sorted-name order.  Saving the same
    checkpoint twice produces byte-identical files."""
    model = checkpoint.model
    names = sorted(model.params)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "prior_variant": model.config.prior_variant,
        "scaler": checkpoint.scaler.to_dict() if checkpoint.scaler else None,
        "guiding_labels": checkpoint.guiding_labels,
        "split_cells": checkpoint.split_cells,
        "seed": checkpoint.seed,
        "arrays": [
            {"name": n, "shape": list(model.params[n].shape)} for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n],
                                          dtype="<f8").tobytes())


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    size = int.from_bytes(raw[offset: offset + 8], "little")
    offset += 8
    try:
        header = json.loads(raw[offset: offset + size])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    offset += size
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')!r} "
            f"!= supported {CHECKPOINT_VERSION}"
        )
    cfg_dict = dict(header["config"])
    for key in ("dvae_encoder_dims", "decoder_dims", "dspn_dims"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = ModelConfig(**cfg_dict)
    if expected_config is not None:
        for dim in ("smiles_dim", "ip_dim", "bio_dim", "latent_dim"):
            got, want = getattr(config, dim), getattr(expected_config, dim)
            if got != want:
                raise CheckpointError(
                    f"{path}: checkpoint {dim}={got} does not match "
                    f"expected {dim}={want}"
                )
    params: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = raw[offset: offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after arrays")
    model = VadeersModel(config, params)
    labels = header.get("guiding_labels")
    return Checkpoint(
        model=model,
        scaler=Scaler.from_dict(header["scaler"]) if header.get("scaler") else None,
        guiding_labels={k: int(v) for k, v in labels.items()} if labels else None,
        split_cells=header.get("split_cells"),
        seed=header.get("seed"),
    )
