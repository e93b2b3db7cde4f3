import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from config import McsConfig, SimConfig, validate
from link_simulator import (DropOutcome, SweepAxes, goodput_se, run_drop, run_link, run_point, run_sweep,
                            to_record, transmit_amplitudes)
from utils.complexity import ComplexityCounters, ComplexityModel
from utils.error_handler import ConfigError, SimulationError

QPSK_HALF = McsConfig(modulation_order=4, code_rate='1/2')


def _validated(**fields):
    defaults = dict(n_drops=2, csi='genie', snr_db_list=(40.0,))
    defaults.update(fields)
    return validate(defaults)


class TestRunDrop:
    def test_sphere_noise_free_decodes_everyone(self):
        outcome = run_drop(_validated(detector='sphere', n_users=4, n_rx=2), 0, snr_db=60.0, mcs=QPSK_HALF)
        assert outcome.success.all()
        np.testing.assert_array_equal(outcome.info_bits, [570] * 4)
        assert outcome.counters.detected_res == 576

    @pytest.mark.parametrize("detector", ['exhaustive', 'mmse_sic', 'noma2_sic', 'idd'])
    def test_two_user_detectors_at_high_snr(self, detector):
        outcome = run_drop(_validated(detector=detector, n_users=2, n_rx=2), 0, snr_db=40.0, mcs=QPSK_HALF)
        assert outcome.success.all()

    def test_orthogonal_access_splits_symbols(self):
        outcome = run_drop(_validated(detector='oma', n_users=4), 0, snr_db=30.0, mcs=QPSK_HALF)
        np.testing.assert_array_equal(outcome.info_bits, [138] * 4)
        assert outcome.success.all()

    def test_idd_reports_every_iteration(self):
        outcome = run_drop(_validated(detector='idd', n_users=2, idd_iterations=3), 0, snr_db=40.0,
                           mcs=QPSK_HALF)
        assert outcome.iteration_success.shape == (3, 2)
        assert outcome.counters.detector_runs == 3

    def test_reproducible(self):
        validated = _validated(detector='sphere', n_users=2, csi='practical', dump_channel=True)
        first = run_drop(validated, 3, snr_db=4.0, mcs=QPSK_HALF)
        second = run_drop(validated, 3, snr_db=4.0, mcs=QPSK_HALF)
        np.testing.assert_array_equal(first.success, second.success)
        np.testing.assert_array_equal(first.channel, second.channel)
        assert first.counters.complex_mults == second.counters.complex_mults

    def test_drops_draw_different_channels(self):
        validated = _validated(n_users=2, dump_channel=True)
        assert not np.allclose(run_drop(validated, 0, mcs=QPSK_HALF).channel,
                               run_drop(validated, 1, mcs=QPSK_HALF).channel)

    def test_practical_csi_at_high_snr(self):
        point = run_point(_validated(detector='sphere', n_users=2, n_rx=2, csi='practical'), 30.0, QPSK_HALF)
        assert point.bler.mean() < 0.5

    def test_noma_amplitudes_keep_total_power(self):
        amplitudes = transmit_amplitudes(SimConfig(detector='noma2_sic', n_users=2, noma_power_split=0.8))
        assert np.sum(amplitudes ** 2) == pytest.approx(2.0)
        assert amplitudes[0] > amplitudes[1]
        np.testing.assert_array_equal(transmit_amplitudes(SimConfig(n_users=3)), np.ones(3))


class TestGoodput:
    @staticmethod
    def _outcome(drop, success):
        return DropOutcome(drop_index=drop, success=np.array(success), info_bits=np.array([570] * 4),
                           counters=ComplexityCounters())

    def test_all_users_decoded(self):
        value = goodput_se([self._outcome(0, [True] * 4)], SimConfig())
        assert value == pytest.approx(4 * 570 / 672)

    def test_nothing_decoded(self):
        assert goodput_se([self._outcome(0, [False] * 4)], SimConfig()) == 0.0

    def test_independent_of_drop_count(self):
        single = goodput_se([self._outcome(0, [True, False, True, False])], SimConfig())
        double = goodput_se([self._outcome(0, [True, False, True, False]),
                             self._outcome(1, [True, False, True, False])], SimConfig())
        assert single == pytest.approx(double)

    def test_empty(self):
        with pytest.raises(SimulationError):
            goodput_se([], SimConfig())


class TestRunPoint:
    def test_mmse_sic_reference_ratio(self):
        validated = _validated(detector='mmse_sic', n_users=2, n_rx=2)
        record = to_record(validated, run_point(validated, 20.0, QPSK_HALF))
        assert record.ratio_vs_sic == pytest.approx(1.0)
        assert record.overhead_fraction == pytest.approx(2 / 14)
        assert len(record.bler) == 2

    def test_idd_iteration_bler(self):
        validated = _validated(detector='idd', n_users=2, idd_iterations=2)
        record = to_record(validated, run_point(validated, 40.0, QPSK_HALF))
        assert len(record.iteration_bler) == 2
        assert all(len(row) == 2 for row in record.iteration_bler)

    def test_goodput_bounded_by_rate(self):
        validated = _validated(detector='sphere', n_users=2)
        point = run_point(validated, 10.0, QPSK_HALF)
        assert 0.0 <= point.goodput_se <= 2 * 570 / 672

    @pytest.mark.slow
    def test_worker_count_does_not_change_results(self):
        validated = _validated(detector='sphere', n_users=3, csi='practical', n_drops=4)
        serial = run_point(validated, 4.0, QPSK_HALF)
        with ProcessPoolExecutor(max_workers=2) as executor:
            parallel = run_point(validated, 4.0, QPSK_HALF, executor)
        np.testing.assert_array_equal(serial.bler, parallel.bler)
        assert serial.goodput_se == parallel.goodput_se
        assert serial.counters.complex_mults == parallel.counters.complex_mults
        assert serial.counters.nodes_visited == parallel.counters.nodes_visited


class TestMcsSelection:
    def test_picks_highest_goodput(self):
        validated = _validated(detector='sphere', n_users=2, n_rx=2)
        record, point = run_link(validated, 40.0, [QPSK_HALF, McsConfig(modulation_order=16, code_rate='3/4')])
        assert record.modulation == '16QAM'
        assert point.mcs.code_rate == '3/4'

    def test_first_candidate_wins_ties(self):
        validated = _validated(detector='sphere', n_users=2, n_drops=1)
        record, _ = run_link(validated, -30.0, [McsConfig(modulation_order=4, code_rate='1/4'), QPSK_HALF])
        assert record.goodput_se == 0.0
        assert record.code_rate == '1/4'


class TestSweep:
    def test_invalid_combinations_are_skipped(self, caplog):
        axes = SweepAxes(snr_db=(40.0,), n_users=(2, 4), speed_kmh=(5.0,), detector=('noma2_sic',),
                         mcs=(QPSK_HALF,))
        with caplog.at_level(logging.WARNING):
            result = run_sweep(SimConfig(n_drops=1, csi='genie'), axes)
        assert [r.n_users for r in result.records] == [2]
        assert any('Skipping K=4' in message for message in caplog.messages)

    def test_axes_order_and_channel_dumps(self):
        axes = SweepAxes(snr_db=(0.0, 20.0), n_users=(1,), speed_kmh=(5.0, 500.0), detector=('sphere',),
                         mcs=(QPSK_HALF,))
        result = run_sweep(SimConfig(n_drops=1, csi='genie', dump_channel=True), axes)
        assert [(r.speed_kmh, r.snr_db) for r in result.records] == [(5.0, 0.0), (5.0, 20.0),
                                                                      (500.0, 0.0), (500.0, 20.0)]
        assert sorted(result.channel_dumps) == ['K1_v5', 'K1_v500']

    def test_empty_axis(self):
        with pytest.raises(ConfigError, match="n_users"):
            SweepAxes(snr_db=(0.0,), n_users=(), speed_kmh=(5.0,), detector=('sphere',))


class TestOperatingPoints:
    @staticmethod
    def _se(mcs=QPSK_HALF, snr_db=4.0, **fields):
        validated = _validated(**fields)
        return run_point(validated, snr_db, mcs).goodput_se

    @pytest.mark.parametrize("csi", ['genie', 'practical'])
    def test_sphere_cost_stays_near_sic(self, csi):
        validated = _validated(detector='sphere', n_users=4, n_rx=1, csi=csi)
        record = to_record(validated, run_point(validated, 4.0, QPSK_HALF))
        assert record.ratio_vs_sic < 3.0
        assert record.mults_per_re > ComplexityModel.sphere_preprocessing_cost(1, 4, 4)

    def test_idd_cost_below_ten_times_sic(self):
        validated = _validated(detector='idd', n_users=4, n_rx=1, idd_iterations=3)
        record = to_record(validated, run_point(validated, 4.0, QPSK_HALF))
        assert record.ratio_vs_sic < 10.0

    @pytest.mark.parametrize("detector", ['sphere', 'oma', 'idd'])
    def test_records_carry_decoder_work(self, detector):
        validated = _validated(detector=detector, n_users=2, n_drops=1)
        record = to_record(validated, run_point(validated, 10.0, QPSK_HALF))
        assert record.decoder_ops_per_re > 0

    def test_sphere_at_least_matches_sic(self):
        quarter = McsConfig(modulation_order=4, code_rate='1/4')
        fields = dict(n_users=3, n_rx=1, n_drops=6)
        assert (self._se(quarter, 10.0, detector='sphere', **fields)
                >= self._se(quarter, 10.0, detector='mmse_sic', **fields))

    def test_goodput_grows_with_snr(self):
        values = [self._se(QPSK_HALF, snr_db, detector='sphere', n_users=2, n_rx=1, n_drops=4)
                  for snr_db in (0.0, 10.0, 20.0)]
        assert values[0] <= values[1] <= values[2]
        assert values[2] > 0

    def test_orthogonal_access_independent_of_user_count(self):
        single = self._se(QPSK_HALF, 30.0, detector='oma', n_users=1, csi='practical', n_drops=3)
        shared = self._se(QPSK_HALF, 30.0, detector='oma', n_users=4, csi='practical', n_drops=3)
        assert shared == pytest.approx(single, rel=0.1)

    def test_low_rate_survives_where_half_rate_fails(self):
        fields = dict(detector='sphere', n_users=4, n_rx=1, n_drops=4)
        eighth = McsConfig(modulation_order=4, code_rate='1/8')
        assert self._se(eighth, 4.0, **fields) > self._se(QPSK_HALF, 4.0, **fields)

    @pytest.mark.slow
    @pytest.mark.parametrize("speed_kmh", [5.0, 500.0])
    def test_idd_beats_orthogonal_access_with_estimated_channels(self, speed_kmh):
        fields = dict(n_users=2, n_rx=1, csi='practical', speed_kmh=speed_kmh, n_drops=6)
        assert (self._se(QPSK_HALF, 20.0, detector='idd', **fields)
                > self._se(QPSK_HALF, 20.0, detector='oma', **fields))
