import numpy as np
import pytest

from ttsbeam import (
    ExperimentSpec,
    SweepSpec,
    apply_sweep,
    build_scsi,
    emit_csv,
    mrt_rate,
    run_experiment,
    sample_instantaneous,
    simulate_point,
    substream,
)
from ttsbeam.harness import ExperimentError, ResultRecord
import ttsbeam.harness as harness

from conftest import small_scenario


def quick_spec(scenario, schemes=("random-phase",), q_bits=(1,), slots=3, trials=4,
               seed=77, **kw):
    return ExperimentSpec(scenario=scenario, schemes=schemes, q_bits=q_bits,
                          slots=slots, trials=trials,
                          weights=np.ones(scenario.num_users), seed=seed, **kw)


class TestApplySweep:
    def test_distance_moves_users(self):
        scen = small_scenario()
        out = apply_sweep(scen, "ap_user_distance", 42.0)
        assert out.user_positions[0, 1] == 42.0
        assert scen.user_positions[0, 1] == 50.0  # original untouched

    def test_rician_beta_in_db(self):
        scen = small_scenario()
        out = apply_sweep(scen, "rician_beta", 10.0)
        assert out.rician.beta_ai == pytest.approx(10.0)
        assert out.rician.beta_iu == pytest.approx(10.0)
        assert out.rician.beta_au == scen.rician.beta_au

    def test_correlation_sweeps(self):
        scen = small_scenario()
        assert apply_sweep(scen, "r_r", 0.9).correlation.r_r == 0.9
        assert apply_sweep(scen, "r_rk", 0.7).correlation.r_rk == (0.7,)

    def test_power_in_dbm(self):
        scen = small_scenario()
        out = apply_sweep(scen, "transmit_power", 30.0)
        assert out.transmit_power == pytest.approx(1.0)

    def test_unknown_variable(self):
        with pytest.raises(ExperimentError):
            apply_sweep(small_scenario(), "bogus", 1.0)


class TestRunExperiment:
    def test_static_single_slot_matches_direct_evaluation(self):
        # deterministic channels, one trial, one slot: the record is one
        # closed-form rate evaluation
        scen = small_scenario(n_shape=(2, 2), m=2, betas_db=(120.0, 120.0, 120.0))
        spec = quick_spec(scen, schemes=("no-irs",), slots=1, trials=1, seed=5)
        records = run_experiment(spec)
        assert len(records) == 1
        scsi = build_scsi(scen, substream(5, "scsi", 0))
        ch = sample_instantaneous(scsi, substream(5, "samples", 0, 0))
        expected = mrt_rate(ch.h_d[0], scen.transmit_power, float(scen.noise_powers[0]))
        assert records[0].weighted_sum_rate == pytest.approx(expected, rel=1e-9)

    def test_deterministic_csv_bytes(self, tmp_path):
        scen = small_scenario(n_shape=(2, 2), m=2)
        spec = quick_spec(scen, schemes=("tts-pdd", "random-phase", "no-irs"),
                          q_bits=(1, 2), slots=3, trials=3, seed=9,
                          sweep=SweepSpec(variable="ap_user_distance", grid=(48.0, 52.0)))
        paths = []
        for i in range(2):
            records = run_experiment(spec)
            path = tmp_path / f"out{i}.csv"
            emit_csv(records, str(path))
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_thread_count_does_not_change_results(self):
        scen = small_scenario(n_shape=(2, 2), m=2)
        base = quick_spec(scen, schemes=("random-phase", "no-irs"), slots=2, trials=6, seed=3)
        stats1, _ = simulate_point(scen, base, threads=1)
        stats8, _ = simulate_point(scen, base, threads=8)
        for cell in stats1:
            assert np.array_equal(stats1[cell].weighted, stats8[cell].weighted)

    def test_multiuser_schemes_run(self):
        scen = small_scenario(users=2, n_shape=(2, 2), m=2)
        spec = quick_spec(scen, schemes=("random-phase", "no-irs", "icsi-per-slot"),
                          q_bits=(1,), slots=2, trials=2, seed=13)
        records = run_experiment(spec)
        assert {r.scheme for r in records} == {"random-phase", "no-irs", "icsi-per-slot"}
        for rec in records:
            assert rec.user_rates.shape == (2,)
            assert rec.weighted_sum_rate > 0

    def test_std_error_shrinks_with_trials(self):
        scen = small_scenario(n_shape=(2, 2), m=2)
        small = quick_spec(scen, schemes=("random-phase",), slots=2, trials=30, seed=21)
        big = quick_spec(scen, schemes=("random-phase",), slots=2, trials=120, seed=21)
        se_small = run_experiment(small)[0].std_error
        se_big = run_experiment(big)[0].std_error
        assert se_small / se_big == pytest.approx(2.0, rel=0.2)

    def test_failed_trials_excluded_and_capped(self, monkeypatch):
        scen = small_scenario(n_shape=(2, 2), m=2)
        spec = quick_spec(scen, schemes=("no-irs",), slots=1, trials=30, seed=2)
        real = harness._run_trial

        def flaky(scenario, sp, trial):
            if trial == 4:
                raise FloatingPointError("synthetic failure")
            return real(scenario, sp, trial)

        monkeypatch.setattr(harness, "_run_trial", flaky)
        stats, failures = simulate_point(scen, spec)
        assert failures == 1
        assert stats[("no-irs", 0)].weighted.size == 29

        def very_flaky(scenario, sp, trial):
            if trial % 3 == 0:
                raise FloatingPointError("synthetic failure")
            return real(scenario, sp, trial)

        monkeypatch.setattr(harness, "_run_trial", very_flaky)
        with pytest.raises(ExperimentError):
            simulate_point(scen, spec)

    def test_tts_pdd_rejects_multiuser(self):
        scen = small_scenario(users=2, n_shape=(2, 2), m=2)
        spec = quick_spec(scen, schemes=("tts-pdd",), slots=1, trials=1)
        with pytest.raises(ExperimentError):
            run_experiment(spec)


class TestEmitCsv:
    def test_empty_records(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv([], str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("sweep_value,scheme,q_bits")

    def test_roundtrip_single_record(self, tmp_path):
        rec = ResultRecord(sweep_value=50.0, scheme="no-irs", q_bits=0,
                           user_rates=np.array([1.234567]), weighted_sum_rate=1.234567,
                           std_error=0.01, wall_time=0.5, trials_used=10, failures=0)
        path = tmp_path / "one.csv"
        emit_csv([rec], str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        fields = lines[1].split(",")
        assert fields[1] == "no-irs"
        assert float(fields[3]) == pytest.approx(1.234567, rel=1e-5)

    def test_six_significant_digits(self, tmp_path):
        rec = ResultRecord(sweep_value=None, scheme="no-irs", q_bits=0,
                           user_rates=np.array([np.pi]), weighted_sum_rate=np.pi,
                           std_error=np.pi * 1e-4, wall_time=0.0, trials_used=1, failures=0)
        path = tmp_path / "digits.csv"
        emit_csv([rec], str(path))
        assert "3.14159" in path.read_text()

    def test_large_batch_byte_identical(self, tmp_path):
        rng = np.random.default_rng(17)
        records = [
            ResultRecord(sweep_value=float(i % 7), scheme="random-phase", q_bits=i % 3,
                         user_rates=rng.uniform(0, 5, 2), weighted_sum_rate=float(rng.uniform(0, 10)),
                         std_error=float(rng.uniform(0, 0.1)), wall_time=float(rng.uniform(0, 1)),
                         trials_used=200, failures=0)
            for i in range(1000)
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(records, str(a))
        emit_csv(records, str(b))
        assert a.read_bytes() == b.read_bytes()
        assert len(a.read_text().splitlines()) == 1001
