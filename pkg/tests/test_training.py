import json

import pytest
import torch
from torch.utils.data import DataLoader

from gat_transfer.checkpoint import (
    CHECKPOINT_SCHEMA,
    load_checkpoint,
    load_generator,
    resolve_checkpoint,
)
from gat_transfer.data import DatasetManifest
from gat_transfer.dataset import UnpairedDataset
from gat_transfer.errors import CheckpointError, DatasetError, NonFiniteLossError
from gat_transfer.losses import LossWeights
from gat_transfer.state import StateManager
from gat_transfer.training import (
    ABLATION_VARIANTS,
    AblationFlag,
    TrainConfig,
    Trainer,
    epoch_stats_from_log,
    lr_schedule,
    run_ablation_suite,
    train_loop,
    variant_config,
)


def first_batch(manifest, cache) -> dict:
    dataset = UnpairedDataset(manifest, cache, augment_cfg=None, dilation_px=1)
    return next(iter(DataLoader(dataset, batch_size=1)))


def make_trainer(network, extractor, **overrides) -> Trainer:
    cfg = TrainConfig(device="cpu", **overrides)
    return Trainer(cfg, network, extractor=extractor)


# ---- schedule ----

def test_lr_schedule_examples():
    cfg = TrainConfig()
    assert lr_schedule(0, cfg) == pytest.approx(1e-4)
    assert lr_schedule(99, cfg) == pytest.approx(1e-4)
    assert lr_schedule(150, cfg) == pytest.approx(5e-5)
    assert lr_schedule(200, cfg) == 0.0


def test_lr_schedule_is_non_increasing():
    cfg = TrainConfig(epochs=40, decay_start_fraction=0.25)
    rates = [lr_schedule(e, cfg) for e in range(41)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_lr_schedule_rejects_out_of_range_epochs():
    with pytest.raises(ValueError):
        lr_schedule(-1, TrainConfig())
    with pytest.raises(ValueError):
        lr_schedule(201, TrainConfig())


# ---- single steps ----

def test_every_generator_parameter_gets_gradient(prepared, tiny_network, toy_extractor):
    _, manifest, cache = prepared
    trainer = make_trainer(tiny_network, toy_extractor)
    report = trainer.train_step(first_batch(manifest, cache))
    assert report.land is not None and report.head is not None
    dead = [name for name, norm in trainer.last_generator_grad_norms.items() if not norm > 0]
    assert dead == []
    assert len(trainer.last_generator_grad_norms) == len(list(trainer.generator.parameters()))


def test_all_flags_leave_only_cycle_loss(prepared, tiny_network):
    _, manifest, cache = prepared
    trainer = make_trainer(
        tiny_network, None, ablation_flags=set(AblationFlag), loss_weights=LossWeights(lambda_adv=0)
    )
    assert trainer.extractor is None
    report = trainer.train_step(first_batch(manifest, cache))
    assert report.land is None and report.head is None
    assert report.style is None and report.content is None and report.adversarial_g is None
    assert report.generator_total == pytest.approx(50 * report.cycle, rel=1e-5)


def test_identical_seeds_give_identical_first_step(prepared, tiny_network, toy_extractor):
    _, manifest, cache = prepared
    batch = first_batch(manifest, cache)
    first = make_trainer(tiny_network, toy_extractor).train_step(batch)
    second = make_trainer(tiny_network, toy_extractor).train_step(batch)
    assert first == second


def test_non_finite_loss_names_the_batch(prepared, tiny_network, toy_extractor):
    _, manifest, cache = prepared
    batch = first_batch(manifest, cache)
    batch["x"]["image"] = torch.full_like(batch["x"]["image"], float("nan"))
    with pytest.raises(NonFiniteLossError) as e:
        make_trainer(tiny_network, toy_extractor).train_step(batch)
    assert batch["x"]["id"][0] in str(e.value)


# ---- checkpoints ----

def test_checkpoint_round_trip_is_bitwise(prepared, tiny_network, toy_extractor, tmp_path):
    _, manifest, cache = prepared
    trainer = make_trainer(tiny_network, toy_extractor)
    trainer.train_step(first_batch(manifest, cache))
    trainer.completed_epochs = 3
    path = trainer.save(tmp_path / "ckpt.pt")

    restored = load_generator(path)
    live = trainer.generator.eval()
    x, y = torch.rand(1, 3, 32, 32) * 2 - 1, torch.rand(1, 3, 32, 32) * 2 - 1
    with torch.no_grad():
        assert torch.equal(live(x, y).x_y, restored(x, y).x_y)

    other = make_trainer(tiny_network, toy_extractor, seed=5)
    other.load(path)
    assert other.completed_epochs == 3
    for a, b in zip(trainer.generator.parameters(), other.generator.parameters()):
        assert torch.equal(a, b)


def test_resumed_trainer_continues_the_schedule(tiny_network, toy_extractor, tmp_path):
    trainer = make_trainer(tiny_network, toy_extractor, epochs=10)
    trainer.completed_epochs = 7
    path = trainer.save(tmp_path / "ckpt.pt")

    resumed = make_trainer(tiny_network, toy_extractor, epochs=10)
    resumed.load(path)
    assert resumed.set_lr(resumed.completed_epochs) == lr_schedule(7, resumed.cfg)
    assert resumed.opt_g.param_groups[0]["lr"] == pytest.approx(1e-4 * 3 / 5)


def test_checkpoint_errors(tmp_path, tiny_network, toy_extractor):
    with pytest.raises(CheckpointError) as missing:
        load_checkpoint(tmp_path / "missing.pt")
    assert missing.value.exit_code == 3

    torch.save({"schema": "something-else"}, tmp_path / "foreign.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "foreign.pt")

    (tmp_path / "garbage.pt").write_bytes(b"\x00\x01")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "garbage.pt")

    (tmp_path / "run").mkdir()
    with pytest.raises(CheckpointError):
        resolve_checkpoint(tmp_path / "run")

    wider = make_trainer(tiny_network.model_copy(update={"base_channels": 8}), toy_extractor)
    path = wider.save(tmp_path / "wide.pt")
    assert load_checkpoint(path)["schema"] == CHECKPOINT_SCHEMA
    with pytest.raises(CheckpointError):
        make_trainer(tiny_network, toy_extractor).load(path)


# ---- training loop ----

def test_train_loop_writes_checkpoints_state_and_log(prepared, toy_extractor):
    app, manifest, cache = prepared
    run_dir = app.runs_dir / "run"
    result = train_loop(app, manifest, cache, run_dir, extractor=toy_extractor)

    assert [s.epoch for s in result.epochs] == [0, 1]
    assert [p.name for p in result.checkpoints] == ["epoch_0001.pt", "final.pt"]
    assert resolve_checkpoint(run_dir).name == "final.pt"

    state = json.loads((run_dir / "state.json").read_text())
    assert state["completed_epochs"] == 2
    assert state["config_hash"] == app.fingerprint()

    epochs = epoch_stats_from_log(run_dir / "training_log.jsonl")
    assert [r["epoch"] for r in epochs] == [0, 1]
    steps = [json.loads(line) for line in (run_dir / "training_log.jsonl").read_text().splitlines()]
    assert sum(1 for r in steps if r["kind"] == "step") == 2 * len(manifest.train_x)


def test_train_loop_resumes_from_recorded_checkpoint(prepared, toy_extractor):
    app, manifest, cache = prepared
    app = app.model_copy(update={"training": app.training.model_copy(update={"epochs": 4, "checkpoint_every": 2})})
    run_dir = app.runs_dir / "resume"
    train_loop(app, manifest, cache, run_dir, extractor=toy_extractor)

    # Pretend the run stopped right after the epoch-2 checkpoint
    state = StateManager(run_dir / "state.json", config_hash=app.fingerprint())
    state.update_after_checkpoint(2, run_dir / "checkpoints" / "epoch_0002.pt")

    result = train_loop(app, manifest, cache, run_dir, extractor=toy_extractor)
    assert [s.epoch for s in result.epochs] == [2, 3]
    assert result.epochs[0].lr == lr_schedule(2, app.training)
    assert result.epochs[1].lr == pytest.approx(5e-5)

    records = [json.loads(line) for line in (run_dir / "training_log.jsonl").read_text().splitlines()]
    resumed_steps = [r["step"] for r in records if r["kind"] == "step"][4 * len(manifest.train_x):]
    assert resumed_steps == list(range(2 * len(manifest.train_x), 4 * len(manifest.train_x)))


def test_changed_config_starts_fresh(prepared, toy_extractor):
    app, manifest, cache = prepared
    run_dir = app.runs_dir / "changed"
    train_loop(app, manifest, cache, run_dir, extractor=toy_extractor)
    changed = app.model_copy(update={"training": app.training.model_copy(update={"lr0": 2e-4})})
    result = train_loop(changed, manifest, cache, run_dir, extractor=toy_extractor)
    assert [s.epoch for s in result.epochs] == [0, 1]

    assert epoch_stats_from_log(run_dir / "training_log.1.jsonl")[-1]["epoch"] == 1
    assert [r["epoch"] for r in epoch_stats_from_log(run_dir / "training_log.jsonl")] == [0, 1]
    state = json.loads((run_dir / "state.json").read_text())
    assert state["config_hash"] == changed.fingerprint()
    assert state["completed_epochs"] == 2


def test_head_ablation_never_reports_head_loss(prepared, toy_extractor):
    app, manifest, cache = prepared
    app = variant_config(app, frozenset({AblationFlag.DROP_LH}))
    run_dir = app.runs_dir / "wo_Lh"
    train_loop(app, manifest, cache, run_dir, extractor=toy_extractor)
    records = [json.loads(line) for line in (run_dir / "training_log.jsonl").read_text().splitlines()]
    assert records and all(r["head"] is None for r in records)
    assert all(r["land"] is not None for r in records)


def test_empty_training_split_is_rejected(prepared, toy_extractor):
    app, _, cache = prepared
    with pytest.raises(DatasetError):
        train_loop(app, DatasetManifest(test_x=["a"], test_y=["b"]), cache, app.runs_dir / "empty", extractor=toy_extractor)


# ---- ablation suite ----

def test_variants_differ_from_base_in_one_flag():
    assert list(ABLATION_VARIANTS) == ["wo_Lc", "wo_Ls", "wo_Ll", "wo_Lh", "L_Total"]
    assert ABLATION_VARIANTS["L_Total"] == frozenset()
    singles = [flags for label, flags in ABLATION_VARIANTS.items() if label != "L_Total"]
    assert all(len(flags) == 1 for flags in singles)
    assert frozenset().union(*singles) == frozenset(AblationFlag)


def test_variants_share_initialisation(tiny_network, toy_extractor):
    trainers = [make_trainer(tiny_network, toy_extractor, ablation_flags=set(flags)) for flags in ABLATION_VARIANTS.values()]
    reference = trainers[0].generator.state_dict()
    for trainer in trainers[1:]:
        for name, tensor in trainer.generator.state_dict().items():
            assert torch.equal(tensor, reference[name])


def test_ablation_suite_trains_five_runs(prepared, toy_extractor):
    app, manifest, cache = prepared
    app = app.model_copy(update={"training": app.training.model_copy(update={"epochs": 1})})
    results = run_ablation_suite(app, manifest, cache, app.runs_dir / "ablation", extractor=toy_extractor)
    assert list(results) == list(ABLATION_VARIANTS)
    for label, result in results.items():
        assert (app.runs_dir / "ablation" / label / "checkpoints" / "final.pt").exists()
        assert result.trainer.flags == set(ABLATION_VARIANTS[label])
