import dataclasses
import json

import numpy as np
import pytest

from hybridmask.data import synthetic_dataset
from hybridmask.errors import ConfigError
from hybridmask.freq import MaskKey
from hybridmask.nn import ParamStore
from hybridmask.train import (
    RunRecord,
    TrainConfig,
    k_proportions,
    smoothed,
    train_adaptive,
    train_baseline,
    train_fixed,
)


@pytest.fixture(scope="module")
def tiny():
    return synthetic_dataset(4, 8, 16, 3)


def small_cfg(**kw):
    base = dict(epochs=3, batch_size=8, hidden=(16, 8), policy_hidden=(8,), arc_scale=16.0, lr=0.01)
    base.update(kw)
    return TrainConfig(**base)


class TestHelpers:
    def test_smoothed(self):
        np.testing.assert_allclose(smoothed([3, 1, 2, 6], window=2), [3, 2, 1.5, 4])
        np.testing.assert_allclose(smoothed([1, 2, 3], window=5), [1, 1.5, 2])

    def test_k_proportions(self):
        assert k_proportions([2, 2, 4, 3], (2, 3, 4)) == [0.5, 0.25, 0.25]
        assert k_proportions([], (2, 3)) == [0.0, 0.0]

    def test_config_round_trip(self):
        cfg = small_cfg(candidate_set=(2, 5))
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_config_unknown_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"lr": 0.1, "bogus": 1})

    @pytest.mark.parametrize("kw", [dict(candidate_set=()), dict(candidate_set=(3, 2)), dict(lr=0.0),
                                    dict(policy="greedy"), dict(policy_cadence="often")])
    def test_config_validate(self, kw):
        with pytest.raises(ConfigError):
            small_cfg(**kw).validate()


class TestLoops:
    def test_baseline(self, tiny, tmp_path):
        res = train_baseline(tiny, small_cfg(), tmp_path / "b")
        assert len(res.record.epoch_losses) == 3
        assert 0.0 <= res.record.accuracy <= 1.0
        assert (tmp_path / "b" / "checkpoints" / "fr.fmz").exists()
        assert RunRecord.load(tmp_path / "b" / "record.json").accuracy == res.record.accuracy

    def test_fixed_rejects_k1(self, tiny):
        with pytest.raises(ConfigError):
            train_fixed(tiny, 1, MaskKey.generate(0), small_cfg())

    def test_infeasible_weight(self, tiny):
        with pytest.raises(ConfigError):
            train_adaptive(tiny, MaskKey.generate(0), small_cfg(candidate_set=(2, 3), max_weight=0.5))

    def test_large_k_warns(self, tiny):
        with pytest.warns(UserWarning):
            train_fixed(tiny, 3, MaskKey.generate(0), small_cfg(epochs=1))

    def test_singleton_adaptive_equals_fixed(self, tiny):
        key = MaskKey.generate(1)
        cfg = small_cfg(candidate_set=(2,))
        a = train_adaptive(tiny, key, cfg)
        f = train_fixed(tiny, 2, key, cfg)
        assert a.params.identical(f.params)
        assert a.record.epoch_losses == f.record.epoch_losses

    def test_telemetry_order(self, tiny):
        res = train_adaptive(tiny, MaskKey.generate(1), small_cfg(candidate_set=(2,)))
        # Rewards for step t are computed against the FR network after t updates.
        assert [row["fr_version"] for row in res.telemetry] == list(range(len(res.telemetry)))
        assert all("L1" in row and "k" in row for row in res.telemetry)

    def test_adaptive_records(self, tiny, tmp_path):
        res = train_adaptive(tiny, MaskKey.generate(2), small_cfg(candidate_set=(2,)), tmp_path / "a")
        assert len(res.record.k_proportions) == 1
        lines = (tmp_path / "a" / "telemetry.jsonl").read_text().splitlines()
        assert len(lines) == len(res.telemetry)
        assert json.loads((tmp_path / "a" / "config.json").read_text())["mode"] == "adaptive"
        assert (tmp_path / "a" / "key.json").exists()
        policy = ParamStore.load(tmp_path / "a" / "checkpoints" / "policy.fmz")
        assert "policy.out.W" in policy

    def test_uniform_policy_never_updates(self, tiny):
        cfg = small_cfg(candidate_set=(2,), policy="uniform")
        res = train_adaptive(tiny, MaskKey.generate(2), cfg)
        fresh = TrainConfig(**{**dataclasses.asdict(cfg)})
        again = train_adaptive(tiny, MaskKey.generate(2), fresh)
        assert res.policy_params.identical(again.policy_params)
        assert np.all(res.policy_params["policy.out.W"] == 0.0)

    def test_deterministic(self, tiny):
        key = MaskKey.generate(3)
        big = synthetic_dataset(4, 16, 16, 3)
        cfg = small_cfg(candidate_set=(2, 3), batch_size=12, epochs=2)
        a = train_adaptive(big, key, cfg)
        b = train_adaptive(big, key, cfg)
        assert a.params.identical(b.params)
        assert a.policy_params.identical(b.policy_params)
        assert a.record.to_dict() == b.record.to_dict()

    def test_epoch_cadence_runs(self):
        big = synthetic_dataset(4, 16, 16, 3)
        cfg = small_cfg(candidate_set=(2, 3), batch_size=12, epochs=2, policy_cadence="epoch")
        res = train_adaptive(big, MaskKey.generate(0), cfg)
        assert not np.all(res.policy_params["policy.out.W"] == 0.0)
