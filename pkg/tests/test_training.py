"""Training-protocol tests: the cell-line-held-out split, batch assembly,
break/freeze/lr-decay accounting, determinism, divergence handling, and
checkpoint round-trips."""

import numpy as np
import pytest

from vadeers.data import (
    CellLineRecord,
    Dataset,
    DrugRecord,
    SensitivityTable,
    SynthSpec,
    derive_guiding_labels,
    generate_synthetic,
)
from vadeers.exceptions import CheckpointError, DataError
from vadeers.model import LossWeights, ModelConfig, VadeersModel
from vadeers.training import (
    Checkpoint,
    SplitSpec,
    TrainSchedule,
    TrainingAborted,
    build_pair_batch,
    check_schedule_conformance,
    load_checkpoint,
    save_checkpoint,
    split_by_cell_line,
    train,
)

TINY_SPEC = SynthSpec(smiles_dim=10, ip_dim=8, bio_dim=6, n_drugs=16,
                      n_profiled=8, n_cells=14, n_binary_features=2)
TINY_CONFIG = ModelConfig(
    smiles_dim=10, ip_dim=8, bio_dim=6, latent_dim=3,
    dvae_encoder_dims=(8,), decoder_dims=(8,), dspn_dims=(12, 8, 6),
    prior_variant="gmm_constrained",
)


def tiny_dataset(seed=0):
    ds = generate_synthetic(TINY_SPEC, seed=seed)
    return derive_guiding_labels(ds, n_labels=3, seed=seed)


def tiny_train(seed=0, **schedule_kw):
    kw = dict(joint_epochs=2, dspn_epochs=2, batch_size=16,
              dvae_break_every_steps=5, dvae_break_epochs=1,
              dvae_break_batch=4, seed=seed)
    kw.update(schedule_kw)
    return train(tiny_dataset(), TINY_CONFIG, TrainSchedule(**kw),
                 LossWeights(), SplitSpec(n_val_cells=3, n_test_cells=3,
                                          seed=seed))


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def _cells_only_dataset(n_cells):
    drugs = [DrugRecord("D0", np.zeros(2), np.ones(3))]
    cells = [CellLineRecord(f"C{j:04d}", np.zeros(2)) for j in range(n_cells)]
    table = SensitivityTable()
    rng = np.random.default_rng(0)
    for j in range(0, n_cells, 2):
        table.add("D0", f"C{j:04d}", float(rng.standard_normal()))
    return Dataset(drugs=drugs, cells=cells, sensitivities=table)


def test_split_reference_cell_counts():
    dataset = _cells_only_dataset(922)
    split = split_by_cell_line(dataset, SplitSpec(seed=0))
    assert (len(split.train_cells), len(split.val_cells),
            len(split.test_cells)) == (722, 100, 100)


def test_split_partitions_pairs_completely():
    dataset = _cells_only_dataset(50)
    split = split_by_cell_line(dataset, SplitSpec(n_val_cells=10,
                                                  n_test_cells=10, seed=1))
    total = (len(split.train_pairs) + len(split.val_pairs)
             + len(split.test_pairs))
    assert total == len(dataset.sensitivities)
    train_set, val_set, test_set = split.cell_sets()
    assert not train_set & val_set
    assert not train_set & test_set
    assert not val_set & test_set
    for p in split.val_pairs:
        assert p[1] in val_set


def test_split_deterministic_and_seed_sensitive():
    dataset = _cells_only_dataset(40)
    spec = SplitSpec(n_val_cells=8, n_test_cells=8, seed=5)
    a = split_by_cell_line(dataset, spec)
    b = split_by_cell_line(dataset, spec)
    assert a.val_cells == b.val_cells and a.test_cells == b.test_cells
    c = split_by_cell_line(dataset, SplitSpec(n_val_cells=8, n_test_cells=8,
                                              seed=6))
    assert a.val_cells != c.val_cells


def test_split_too_few_cells():
    dataset = _cells_only_dataset(12)
    with pytest.raises(DataError):
        split_by_cell_line(dataset, SplitSpec(n_val_cells=6, n_test_cells=6,
                                              seed=0))


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

def test_build_pair_batch_filters_unobserved_pairs():
    dataset = tiny_dataset()
    observed = dataset.sensitivities.pairs()[:6]
    drug_ids = [d.id for d in dataset.drugs]
    cell_ids = [c.id for c in dataset.cells]
    fake = [(drug_ids[0], cell_ids[1]), (drug_ids[2], cell_ids[3])]
    fake = [p for p in fake if p not in dataset.sensitivities]
    batch_a = build_pair_batch(dataset, observed, TINY_SPEC.ip_dim)
    batch_b = build_pair_batch(dataset, observed + fake, TINY_SPEC.ip_dim)
    assert batch_a.n_pairs == batch_b.n_pairs == 6
    assert np.array_equal(batch_a.y, batch_b.y)


def test_build_pair_batch_masks_and_labels():
    dataset = tiny_dataset()
    pairs = dataset.sensitivities.pairs()[:10]
    batch = build_pair_batch(dataset, pairs, TINY_SPEC.ip_dim)
    idx = dataset.drug_index()
    drugs = sorted({p[0] for p in pairs}, key=lambda i: idx[i])
    for row, drug_id in enumerate(drugs):
        d = dataset.drugs[idx[drug_id]]
        assert batch.ip_mask[row] == (1.0 if d.has_profile else 0.0)
        expected = -1 if d.guiding_label is None else d.guiding_label
        assert batch.labels[row] == expected


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

def test_freeze_only_run_keeps_initial_weights():
    result = tiny_train(joint_epochs=0, dspn_epochs=1)
    init_hash = next(e["hash"] for e in result.runlog.events
                     if e["event"] == "init")
    freeze_hashes = [e["hash"] for e in result.runlog.events
                     if e["event"] == "freeze_check"]
    assert freeze_hashes and all(h == init_hash for h in freeze_hashes)


def test_breaks_fire_at_exact_multiples():
    result = tiny_train(joint_epochs=3, dvae_break_every_steps=4)
    breaks = [e["at_joint_step"] for e in result.runlog.events
              if e["event"] == "break_start"]
    total = max(e["joint_step"] for e in result.runlog.epochs)
    assert breaks == [4 * (i + 1) for i in range(total // 4)]


def test_conformance_checker_passes_and_detects_tampering():
    result = tiny_train(joint_epochs=3, dspn_epochs=2,
                        dvae_break_every_steps=4)
    schedule = TrainSchedule(joint_epochs=3, dspn_epochs=2, batch_size=16,
                             dvae_break_every_steps=4, dvae_break_epochs=1,
                             dvae_break_batch=4, seed=0)
    assert check_schedule_conformance(result.runlog, schedule) == []
    tampered = result.runlog
    tampered.epochs[-1]["lr"] *= 2.0
    assert check_schedule_conformance(tampered, schedule)


def test_phase2_lr_decay_schedule():
    schedule = TrainSchedule()
    assert schedule.dspn_lr_at(0) == 0.001
    assert abs(schedule.dspn_lr_at(10) - 0.0001) < 1e-18
    assert abs(schedule.dspn_lr_at(25) - 1e-5) < 1e-18
    assert abs(schedule.dspn_lr_at(49) - 1e-7) < 1e-20


def test_total_epochs_invariant():
    with pytest.raises(Exception):
        TrainSchedule(joint_epochs=5, dspn_epochs=2, total_epochs=10)
    assert TrainSchedule(joint_epochs=5, dspn_epochs=2).total_epochs == 7


def test_equal_seeds_give_equal_runlogs():
    a = tiny_train(seed=9)
    b = tiny_train(seed=9)
    assert a.runlog.comparable() == b.runlog.comparable()
    for name in a.model.params:
        assert np.array_equal(a.model.params[name], b.model.params[name])


def test_different_seeds_differ():
    a = tiny_train(seed=1)
    b = tiny_train(seed=2)
    assert a.runlog.comparable() != b.runlog.comparable()


def test_no_heldout_cells_touch_gradients():
    result = tiny_train(seed=4)
    _, val_set, test_set = result.split.cell_sets()
    assert not result.runlog.cells_touched & val_set
    assert not result.runlog.cells_touched & test_set


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_lr_aborts_with_last_good_model():
    with pytest.raises(TrainingAborted) as err:
        tiny_train(joint_epochs=4, lr_joint=1e12)
    aborted = err.value
    assert isinstance(aborted.model, VadeersModel)
    assert any(e["event"] == "aborted" for e in aborted.runlog.events)
    for arr in aborted.model.params.values():
        assert np.all(np.isfinite(arr))


def test_gmm_variant_requires_labels():
    ds = generate_synthetic(TINY_SPEC, seed=0)  # no labels derived
    with pytest.raises(DataError):
        train(ds, TINY_CONFIG, TrainSchedule(joint_epochs=1, dspn_epochs=1,
                                             seed=0),
              LossWeights(), SplitSpec(n_val_cells=3, n_test_cells=3, seed=0))


def test_labels_out_of_range_rejected():
    ds = derive_guiding_labels(generate_synthetic(TINY_SPEC, seed=0),
                               n_labels=3, seed=0)
    narrow = ModelConfig(**{
        **{f: getattr(TINY_CONFIG, f) for f in TINY_CONFIG.__dataclass_fields__},
        "n_guiding_labels": 2,
    })
    with pytest.raises(DataError):
        train(ds, narrow, TrainSchedule(joint_epochs=1, dspn_epochs=1, seed=0),
              LossWeights(), SplitSpec(n_val_cells=3, n_test_cells=3, seed=0))


def test_constrained_covariances_stay_identity_after_training():
    result = tiny_train(joint_epochs=3, dspn_epochs=1)
    assert np.array_equal(result.model.params["gmm.log_scales"],
                          np.zeros_like(result.model.params["gmm.log_scales"]))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _checkpoint_for(result, labels=None):
    return Checkpoint(
        model=result.model,
        scaler=result.scaler,
        guiding_labels=labels,
        split_cells={"train": result.split.train_cells,
                     "val": result.split.val_cells,
                     "test": result.split.test_cells},
        seed=0,
    )


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    result = tiny_train()
    ckpt = _checkpoint_for(result)
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    save_checkpoint(ckpt, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    result = tiny_train()
    path = tmp_path / "model.bin"
    save_checkpoint(_checkpoint_for(result), path)
    loaded = load_checkpoint(path)
    assert sorted(loaded.model.params) == sorted(result.model.params)
    for name, arr in result.model.params.items():
        assert np.array_equal(loaded.model.params[name], arr)
    rng = np.random.default_rng(0)
    dl = rng.standard_normal((4, TINY_CONFIG.latent_dim))
    cl = rng.standard_normal((4, TINY_CONFIG.latent_dim))
    a = result.model.predict_sensitivity(dl, cl)
    b = loaded.model.predict_sensitivity(dl, cl)
    assert np.array_equal(a, b)


def test_checkpoint_wrong_dim_names_both(tmp_path):
    result = tiny_train()
    path = tmp_path / "model.bin"
    save_checkpoint(_checkpoint_for(result), path)
    wrong = ModelConfig(**{
        **{f: getattr(TINY_CONFIG, f) for f in TINY_CONFIG.__dataclass_fields__},
        "smiles_dim": 99,
    })
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(path, expected_config=wrong)
    msg = str(err.value)
    assert "10" in msg and "99" in msg


def test_vanilla_checkpoint_has_no_gmm_block(tmp_path):
    config = ModelConfig(**{
        **{f: getattr(TINY_CONFIG, f) for f in TINY_CONFIG.__dataclass_fields__},
        "prior_variant": "vanilla",
    })
    model = VadeersModel.initialize(config, np.random.default_rng(0))
    path = tmp_path / "vanilla.bin"
    save_checkpoint(Checkpoint(model=model), path)
    loaded = load_checkpoint(path)
    assert not any(n.startswith("gmm.") for n in loaded.model.params)
    assert loaded.model.gmm_params() is None


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
