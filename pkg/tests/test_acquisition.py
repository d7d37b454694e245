"""Tests for dataset campaigns, encoding and persistence."""

import numpy as np
import pytest

from softarm.acquisition import (
    Dataset,
    DatasetFormatError,
    DatasetValidationError,
    EncodingError,
    Sample,
    SessionMeta,
    ValveTimes,
    collect,
    decode_percent,
    encode_percent,
    generate_sample_times,
    load,
    merge,
    save,
)
from softarm.plant import PlantConfig, initial_state, tip_pose
from softarm.vision import default_stereo_rig


@pytest.fixture(scope="module")
def plant_config() -> PlantConfig:
    return PlantConfig()


@pytest.fixture(scope="module")
def rig():
    return default_stereo_rig()


@pytest.fixture(scope="module")
def clean_dataset(plant_config, rig) -> Dataset:
    """Small noiseless, failure-free campaign shared across tests."""
    return collect(
        plant_config, rig, n_samples=40, t_max_ms=1000.0, seed=101,
        failure_prob=0.0, pixel_noise_sd=0.0,
    )


class TestGenerateSampleTimes:
    def test_constraints_by_construction(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            times = generate_sample_times(rng, 800.0)
            times.validate(800.0)

    def test_deterministic_per_seed(self):
        a = generate_sample_times(np.random.default_rng(42), 1000.0)
        b = generate_sample_times(np.random.default_rng(42), 1000.0)
        assert a == b

    def test_marginal_means(self):
        # Each bladder is active in 2 of 3 pairs, so its marginal mean time
        # is (2/3) * (t_max / 2) = 333.3 ms.
        rng = np.random.default_rng(7)
        totals = np.zeros(9)
        n = 10_000
        for _ in range(n):
            totals += generate_sample_times(rng, 1000.0).values
        means = totals / n
        assert np.all(means >= 300.0) and np.all(means <= 366.0)

    def test_invalid_t_max(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            generate_sample_times(rng, 0.0)
        with pytest.raises(ValueError):
            generate_sample_times(rng, 1500.0)

    def test_valve_times_validation(self):
        with pytest.raises(ValueError, match="three positive"):
            ValveTimes((1.0, 1.0, 1.0, 0, 0, 0, 0, 0, 0)).validate(1000.0)
        with pytest.raises(ValueError, match="t_max"):
            ValveTimes((900.0,) + (0.0,) * 8).validate(800.0)


class TestPercentCodec:
    def test_simple_ratio(self):
        assert encode_percent(400.0, 800.0) == 50.0

    def test_zero(self):
        assert encode_percent(0.0, 123.0) == 0.0

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            t_max = rng.uniform(1.0, 1000.0)
            t = rng.uniform(0.0, t_max)
            assert abs(decode_percent(encode_percent(t, t_max), t_max) - t) < 1e-12 * max(t, 1.0)

    def test_out_of_range(self):
        with pytest.raises(EncodingError):
            encode_percent(900.0, 800.0)
        with pytest.raises(EncodingError):
            encode_percent(-1.0, 800.0)
        with pytest.raises(EncodingError):
            decode_percent(101.0, 800.0)


class TestCollect:
    def test_counts_without_failures(self, clean_dataset):
        assert len(clean_dataset.samples) == 40
        assert clean_dataset.discarded_count == 0

    def test_campaign_determinism(self, plant_config, rig, clean_dataset):
        again = collect(
            plant_config, rig, n_samples=40, t_max_ms=1000.0, seed=101,
            failure_prob=0.0, pixel_noise_sd=0.0,
        )
        assert again == clean_dataset

    def test_sample_streams_are_per_index(self, plant_config, rig, clean_dataset):
        shorter = collect(
            plant_config, rig, n_samples=10, t_max_ms=1000.0, seed=101,
            failure_prob=0.0, pixel_noise_sd=0.0,
        )
        assert shorter.samples == clean_dataset.samples[:10]

    def test_stored_samples_respect_valve_invariants(self, clean_dataset):
        for sample in clean_dataset.samples:
            decoded = ValveTimes(
                tuple(decode_percent(p, clean_dataset.t_max_ms) for p in sample.times_percent)
            )
            decoded.validate(clean_dataset.t_max_ms)

    def test_discard_rate_binomial(self, plant_config, rig):
        n, p = 10_000, 0.05
        ds = collect(
            plant_config, rig, n_samples=n, t_max_ms=1000.0, seed=5,
            failure_prob=p, pixel_noise_sd=0.0,
        )
        # 4-sigma binomial band around the expected discard count.
        sd = (n * p * (1 - p)) ** 0.5
        assert abs(ds.discarded_count - n * p) < 4 * sd
        assert len(ds.samples) + ds.discarded_count == n

    def test_zero_times_round_trip_to_straight_arm(self, plant_config, rig):
        # Force the all-zero valve combination through the full pipeline.
        ds = collect(
            plant_config, rig, n_samples=1, t_max_ms=1000.0, seed=12,
            failure_prob=0.0, pixel_noise_sd=0.0,
        )
        sample = ds.samples[0]
        state = initial_state(plant_config)
        truth = tip_pose(plant_config, state).position
        times = np.array([decode_percent(p, 1000.0) for p in sample.times_percent])
        # Not the zero sample, but the pipeline must agree with the plant:
        from softarm.plant import step_inflate

        for b, t in enumerate(times):
            state = step_inflate(plant_config, state, b, t)
        truth = tip_pose(plant_config, state).position
        assert np.linalg.norm(np.array(sample.position) - truth) < 1e-6

    def test_rejects_bad_parameters(self, plant_config, rig):
        with pytest.raises(ValueError):
            collect(plant_config, rig, n_samples=0, t_max_ms=1000.0, seed=1)
        with pytest.raises(ValueError):
            collect(plant_config, rig, n_samples=5, t_max_ms=1000.0, seed=1, failure_prob=1.0)
        with pytest.raises(ValueError):
            collect(plant_config, rig, n_samples=5, t_max_ms=1000.0, seed=-3)


class TestMerge:
    def test_merge_single_is_canonical_identity(self, clean_dataset):
        merged = merge(clean_dataset)
        assert merged == clean_dataset

    def test_re_encoding_to_common_t_max(self, plant_config, rig):
        a = collect(
            plant_config, rig, n_samples=5, t_max_ms=800.0, seed=21,
            failure_prob=0.0, pixel_noise_sd=0.0, session_id="a",
        )
        b = collect(
            plant_config, rig, n_samples=5, t_max_ms=1000.0, seed=22,
            failure_prob=0.0, pixel_noise_sd=0.0, session_id="b",
        )
        merged = merge(a, b)
        assert merged.t_max_ms == 1000.0
        # Session a's times keep their millisecond meaning under the new
        # scale, up to the 9-significant-digit storage granularity.
        for orig, re_enc in zip(a.samples, merged.samples[:5]):
            for p_old, p_new in zip(orig.times_percent, re_enc.times_percent):
                assert abs(p_new - p_old * 800.0 / 1000.0) < 1e-7

    def test_merge_is_order_independent(self, plant_config, rig):
        a = collect(
            plant_config, rig, n_samples=4, t_max_ms=800.0, seed=23,
            failure_prob=0.0, pixel_noise_sd=0.0, session_id="a",
        )
        b = collect(
            plant_config, rig, n_samples=6, t_max_ms=1000.0, seed=24,
            failure_prob=0.0, pixel_noise_sd=0.0, session_id="b",
        )
        assert merge(a, b) == merge(b, a)

    def test_merge_requires_input(self):
        with pytest.raises(ValueError):
            merge()


class TestPersistence:
    def test_round_trip_field_for_field(self, tmp_path, clean_dataset):
        path = tmp_path / "campaign.csv"
        save(clean_dataset, path)
        assert load(path) == clean_dataset

    def test_round_trip_after_merge(self, tmp_path, plant_config, rig):
        a = collect(
            plant_config, rig, n_samples=3, t_max_ms=800.0, seed=31,
            failure_prob=0.0, pixel_noise_sd=0.0, session_id="a",
        )
        b = collect(
            plant_config, rig, n_samples=3, t_max_ms=1000.0, seed=32,
            failure_prob=0.0, pixel_noise_sd=0.0, session_id="b",
        )
        merged = merge(a, b)
        path = tmp_path / "merged.csv"
        save(merged, path)
        assert load(path) == merged

    def test_save_is_byte_stable(self, tmp_path, clean_dataset):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save(clean_dataset, p1)
        save(clean_dataset, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.meta.json").read_bytes() == (tmp_path / "b.meta.json").read_bytes()

    def test_missing_column_named(self, tmp_path, clean_dataset):
        path = tmp_path / "broken.csv"
        save(clean_dataset, path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace("t9p,", "")
        rows = [",".join(line.split(",")[:15]) if i else lines[0] for i, line in enumerate(lines)]
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(DatasetFormatError, match="t9p"):
            load(path)

    def test_short_row_reports_line(self, tmp_path, clean_dataset):
        path = tmp_path / "short.csv"
        save(clean_dataset, path)
        lines = path.read_text().splitlines()
        lines[3] = ",".join(lines[3].split(",")[:-1])
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 4"):
            load(path)

    def test_percent_out_of_range_fails_validation(self, tmp_path, clean_dataset):
        path = tmp_path / "invalid.csv"
        save(clean_dataset, path)
        lines = path.read_text().splitlines()
        fields = lines[1].split(",")
        fields[1] = "101"
        lines[1] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetValidationError, match="line 2"):
            load(path)

    def test_missing_sidecar(self, tmp_path, clean_dataset):
        path = tmp_path / "nometa.csv"
        save(clean_dataset, path)
        (tmp_path / "nometa.meta.json").unlink()
        with pytest.raises(DatasetFormatError, match="sidecar"):
            load(path)

    def test_session_count_mismatch_rejected(self):
        sample = Sample(
            times_percent=(0.0,) * 9, position=(0.0, 0.0, 390.0), euler=(0.0, 0.0, 0.0)
        )
        session = SessionMeta(
            id="x", seed=1, t_max_ms=1000.0, n_samples=2, discarded_count=0,
            pressure_bar=1.2, temperature_c=20.0,
        )
        with pytest.raises(ValueError, match="counts"):
            Dataset(samples=(sample,), t_max_ms=1000.0, sessions=(session,))
