import math

import numpy as np
import pytest

import sonomesh.harness as harness_mod
from sonomesh.errors import DivergenceError, ValidationError
from sonomesh.harness import (
    RunConfig,
    TrialRecord,
    expand_grid,
    report,
    report_csv,
    run_trial,
    select_threshold,
)
from sonomesh.synth import make_pipe_dataset
from sonomesh.volume_io import Volume

TINY_KW = dict(
    nf=2,
    max_epochs=2,
    patience=2,
    thresholds=(0.3, 0.6),
    train_ids=(1,),
    val_id=2,
    test_id=3,
    lr0=0.003,
)


@pytest.fixture(scope="module")
def tiny_dataset():
    data = make_pipe_dataset(n_volumes=3, dim_size=(32, 32, 12), spacing=(0.5, 0.5, 0.5), seed=1)
    return {vid: (vol, mesh) for vid, vol, mesh in data}


class TestRunConfig:
    def test_run_tag_roundtrip_default(self):
        cfg = RunConfig()
        assert RunConfig.from_run_tag(cfg.run_tag) == cfg

    def test_run_tag_roundtrip_randomized(self):
        rng = np.random.default_rng(0)
        archs = ["unet", "att_unet", "r2_unet", "se_unet", "unetpp", "wnet"]
        for _ in range(40):
            cfg = RunConfig(
                arch=str(rng.choice(archs)),
                nf=int(rng.integers(1, 33)),
                ac=str(rng.choice(["sigmoid", "hard_sigmoid", "tanh", "linear"])),
                nr=int(rng.integers(1, 4)),
                nc=int(rng.integers(1, 4)),
                loss=str(rng.choice(["bce", "bfce", "dice", "mse", "mae"])),
                lr0=float(rng.choice([0.0001, 0.008, 0.001, 0.1])),
                schedule=str(rng.choice(["cyclical", "cosine", "polynomial"])),
                batch_size=int(rng.integers(1, 17)),
                max_epochs=int(rng.integers(1, 301)),
                patience=int(rng.integers(1, 30)),
                seed=int(rng.integers(0, 1000)),
                max_translation=int(rng.integers(0, 12)),
                max_rotation=float(rng.choice([10.0, 15.0, 180.0])),
                mirror_x=bool(rng.integers(0, 2)),
                mirror_y=bool(rng.integers(0, 2)),
                combine_mode=str(rng.choice(["simultaneous", "exclusive"])),
                reorientation_start_epoch=int(rng.integers(0, 61)),
                use_augment=bool(rng.integers(0, 2)),
                ir=int(rng.integers(1, 4)),
                en=str(rng.choice(["binary", "soft", "solid"])),
                radius=int(rng.integers(0, 4)),
                scheme=str(rng.choice(["SE1", "SE2"])),
                agg=str(rng.choice(["mean", "max", "single"])),
                threshold_kind=str(rng.choice(["absolute", "fraction_of_max"])),
                thresholds=tuple(sorted(set(np.round(rng.uniform(0.05, 0.95, 3), 3)))),
                train_ids=(1, 2),
                val_id=3,
                test_id=4,
                extra_tags=("IT4", "DO0.2") if rng.integers(0, 2) else (),
            )
            assert RunConfig.from_run_tag(cfg.run_tag) == cfg

    def test_run_tag_readable(self):
        tag = RunConfig(arch="se_unet", nf=16, scheme="SE2").run_tag
        assert "ARseunet" in tag and "NF16" in tag and "SE2" in tag

    def test_extra_tag_collision_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig(extra_tags=("NF99",))

    def test_train_overlap_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig(train_ids=(1, 2, 4), val_id=4, test_id=5)


class TestExpandGrid:
    def test_product(self):
        configs = expand_grid({"nf": [8, 16], "ac": ["sigmoid", "tanh"]})
        assert len(configs) == 4
        assert {(c.nf, c.ac) for c in configs} == {(8, "sigmoid"), (8, "tanh"),
                                                   (16, "sigmoid"), (16, "tanh")}

    def test_single_point(self):
        assert len(expand_grid({"nf": [8]})) == 1

    def test_deterministic_order(self):
        a = expand_grid({"nf": [8, 16], "loss": ["bce", "dice"]})
        b = expand_grid({"loss": ["bce", "dice"], "nf": [8, 16]})
        assert [c.run_tag for c in a] == [c.run_tag for c in b]

    def test_empty_axis(self):
        with pytest.raises(ValidationError):
            expand_grid({"nf": []})


class TestSelectThreshold:
    def test_minimum_wins(self):
        cds = {0.2: {1: 9.0, 2: 5.0}, 0.4: {1: 1.0, 2: 3.0}}
        assert select_threshold(cds, val_id=2) == 0.4

    def test_tie_breaks_small(self):
        cds = {0.4: {1: 2.0}, 0.2: {1: 2.0}}
        assert select_threshold(cds, val_id=1) == 0.2

    def test_validation_only(self):
        cds = {0.2: {1: 1.0, 2: 50.0}, 0.4: {1: 2.0, 2: 0.01}}
        assert select_threshold(cds, val_id=1) == 0.2


class TestRunTrial:
    def test_record_contract(self, tiny_dataset, tmp_path):
        cfg = RunConfig(**TINY_KW)
        record = run_trial(cfg, tiny_dataset, workdir=tmp_path)
        assert record.status == "converged"
        assert record.run_tag == cfg.run_tag
        assert set(record.cds) == {0.3, 0.6}
        assert set(record.cds[0.3]) == {1, 2, 3}
        assert record.chosen_t == select_threshold(record.cds, 2)
        assert (tmp_path / cfg.run_tag / "checkpoint.bin").exists()

    def test_resume_from_checkpoint(self, tiny_dataset, tmp_path):
        cfg = RunConfig(**TINY_KW)
        first = run_trial(cfg, tiny_dataset, workdir=tmp_path)
        resumed = run_trial(cfg, tiny_dataset, workdir=tmp_path)
        assert resumed.cds == first.cds

    def test_validation_selection_invariant_to_test_volume(self, tiny_dataset):
        cfg = RunConfig(**TINY_KW)
        base = run_trial(cfg, dict(tiny_dataset))

        perturbed = dict(tiny_dataset)
        vol, mesh = perturbed[cfg.test_id]
        rng = np.random.default_rng(99)
        noisy = np.clip(
            vol.data.astype(np.int64) + rng.integers(-2000, 2000, vol.data.shape), 0, 65535
        ).astype(np.uint16)
        perturbed[cfg.test_id] = (Volume(data=noisy, spacing=vol.spacing, header=vol.header), mesh)
        other = run_trial(cfg, perturbed)

        assert other.chosen_t == base.chosen_t
        assert other.cds[0.3][cfg.val_id] == base.cds[0.3][cfg.val_id]

    def test_divergence_recorded_not_raised(self, tiny_dataset, monkeypatch):
        def exploding_fit(*args, **kwargs):
            raise DivergenceError("boom", train_curve=[1.0], val_curve=[math.inf])

        monkeypatch.setattr(harness_mod, "fit", exploding_fit)
        record = run_trial(RunConfig(**TINY_KW), tiny_dataset)
        assert record.status == "divergent"
        assert record.cds == {}
        assert record.chosen_t is None

    def test_plane_mismatch_rejected(self, tiny_dataset):
        bad = dict(tiny_dataset)
        vol, mesh = bad[1]
        half = Volume(data=vol.data[:, :16, :16].copy(), spacing=vol.spacing, header=vol.header)
        bad[1] = (half, mesh)
        with pytest.raises(ValidationError):
            run_trial(RunConfig(**TINY_KW), bad)


class TestReport:
    def _records(self):
        good = TrialRecord(
            run_tag="ARunet_demo", status="converged", val_id=2, test_id=3,
            threshold_values=(0.3, 0.6),
            cds={0.3: {1: 4.0, 2: 5.0, 3: 6.0}, 0.6: {1: 2.0, 2: 1.0, 3: math.inf}},
            chosen_t=0.6,
        )
        bad = TrialRecord(run_tag="ARwnet_demo", status="divergent", val_id=2, test_id=3)
        return [good, bad]

    def test_rows_and_marks(self):
        text = report(self._records())
        lines = text.splitlines()
        assert len(lines) == 4  # header + 2 thresholds + divergent row
        assert "(val)" in text and "(tst)" in text
        assert "NIL" in text
        assert "divergent" in text
        assert "*0.6" in text

    def test_empty(self):
        assert report([]).startswith("run_tag")

    def test_csv_sidecar(self):
        csv = report_csv(self._records())
        lines = csv.strip().splitlines()
        assert lines[0].startswith("run_tag,")
        assert len(lines) == 1 + 6 + 1
        assert any(line.endswith(",val,5.0") or ",val,5.0" in line for line in lines)
