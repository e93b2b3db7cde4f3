import numpy as np
import pytest

from config import McsConfig, PilotConfig
from transmitter import (DATA, NEXT_STATE, OUTPUT_BITS, PILOT, CodeConfig, build_grid, codeword_layout,
                         constellation, conv_encode, data_symbol_allocation, deinterleave, encode,
                         info_length, interleave, interleaver_permutation, map_qam, pilot_sequence)
from utils.error_handler import SimulationError

PILOTS_K4 = PilotConfig(pilot_symbol_indices=(2, 11), comb_size=4)


class TestConvolutionalCode:
    def test_zero_input_gives_zero_output(self):
        out = conv_encode(np.zeros(20, dtype=int))
        assert out.size == 2 * (20 + 6)
        assert not out.any()

    def test_impulse_response(self):
        out = conv_encode(np.array([1, 0, 0, 0, 0, 0, 0]))
        expected = [1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 0, 1, 1]
        np.testing.assert_array_equal(out[:14], expected)
        assert not out[14:].any()

    def test_matches_trellis_walk(self):
        rng = np.random.default_rng(4)
        info = rng.integers(0, 2, 40)
        state, walked = 0, []
        for u in np.concatenate([info, np.zeros(6, dtype=int)]):
            walked.extend(OUTPUT_BITS[state, u])
            state = NEXT_STATE[state, u]
        assert state == 0
        np.testing.assert_array_equal(conv_encode(info), walked)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        a, b = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
        np.testing.assert_array_equal(conv_encode(a ^ b), conv_encode(a) ^ conv_encode(b))

    def test_empty_input_rejected(self):
        with pytest.raises(SimulationError):
            conv_encode(np.array([], dtype=int))

    @pytest.mark.parametrize("code_rate,kept_fraction", [('1/2', 1.0), ('2/3', 0.75), ('3/4', 4 / 6)])
    def test_puncturing_lengths(self, code_rate, kept_fraction):
        out = encode(np.zeros(30, dtype=int), CodeConfig(code_rate=code_rate))
        assert out.size == int(2 * 36 * kept_fraction)


class TestRateMatching:
    @pytest.mark.parametrize("code_rate,n_info", [('1/8', 138), ('1/6', 186), ('1/4', 282),
                                                  ('1/3', 378), ('1/2', 570), ('2/3', 762),
                                                  ('3/4', 858)])
    def test_info_length(self, code_rate, n_info):
        assert info_length(1152, code_rate) == n_info

    def test_info_length_too_small(self):
        with pytest.raises(SimulationError):
            info_length(12, '1/4')

    def test_layout_sizes(self):
        layout = codeword_layout(576, McsConfig(modulation_order=4, code_rate='1/2'))
        assert (layout.n_info, layout.n_coded, layout.mother_length) == (570, 1152, 1152)
        bits = layout.transmit_bits(np.zeros(layout.n_info, dtype=int))
        assert bits.size == 1152 and not bits.any()

    def test_repetition_sums_copies(self):
        layout = codeword_layout(576, McsConfig(modulation_order=4, code_rate='1/4'))
        np.testing.assert_allclose(layout.recover(np.ones(layout.n_coded)), 2.0)

    def test_punctured_positions_are_neutral(self):
        layout = codeword_layout(576, McsConfig(modulation_order=4, code_rate='3/4'))
        mother = layout.recover(np.ones(layout.n_coded))
        pattern = np.resize([1, 1, 1, 0, 0, 1], layout.mother_length)
        np.testing.assert_array_equal(mother, pattern)

    def test_spread_removes_own_copy(self):
        layout = codeword_layout(48, McsConfig(modulation_order=4, code_rate='1/2'))
        llr = np.arange(layout.n_coded, dtype=float)
        posterior = layout.recover(llr)
        np.testing.assert_allclose(layout.spread(posterior, llr), 0.0)


class TestInterleaver:
    def test_length_eight(self):
        np.testing.assert_array_equal(interleaver_permutation(8), [0, 5, 2, 7, 4, 1, 6, 3])

    def test_is_permutation(self):
        assert sorted(interleaver_permutation(1152)) == list(range(1152))

    def test_inverse(self):
        values = np.arange(100) * 1.5
        np.testing.assert_array_equal(deinterleave(interleave(values)), values)

    def test_length_mismatch(self):
        with pytest.raises(SimulationError, match="length mismatch"):
            deinterleave(np.zeros(10), expected_length=12)


class TestModulation:
    def test_qpsk_first_point(self):
        np.testing.assert_allclose(map_qam(np.array([0, 0]), 4), [(1 + 1j) / np.sqrt(2)])

    def test_qpsk_sign_bits(self):
        np.testing.assert_allclose(map_qam(np.array([1, 0, 0, 1]), 4),
                                   np.array([-1 + 1j, 1 - 1j]) / np.sqrt(2))

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_unit_average_energy(self, order):
        points, _ = constellation(order)
        assert np.mean(np.abs(points) ** 2) == pytest.approx(1.0)
        assert len(np.unique(np.round(points, 9))) == order

    @pytest.mark.parametrize("order", [16, 64])
    def test_gray_neighbours_differ_in_one_bit(self, order):
        points, bits = constellation(order)
        distance = np.abs(points[:, None] - points[None, :])
        d_min = distance[distance > 1e-9].min()
        for i, j in zip(*np.nonzero(np.isclose(distance, d_min))):
            assert np.sum(bits[i] != bits[j]) == 1

    def test_unsupported_order(self):
        with pytest.raises(SimulationError):
            constellation(8)

    def test_bits_must_fill_symbols(self):
        with pytest.raises(SimulationError):
            map_qam(np.zeros(5, dtype=int), 16)


class TestResourceGrid:
    def test_pilot_sequence(self):
        pilots = pilot_sequence(2, 24)
        np.testing.assert_allclose(np.abs(pilots), 1.0)
        np.testing.assert_array_equal(pilots, pilot_sequence(2, 24))
        assert not np.allclose(pilots, pilot_sequence(3, 24))

    def test_comb_pilot_counts(self):
        grids = [build_grid(np.zeros(576), PILOTS_K4, k, 14, 48) for k in range(4)]
        for grid in grids:
            assert grid.own_pilot_mask.sum() == 24
            assert (grid.kind == PILOT).sum() == 96
            assert grid.data_cell_count() == 576
            np.testing.assert_allclose(np.abs(grid.cells[grid.own_pilot_mask]), 1.0)
            foreign = (grid.kind == PILOT) & ~grid.own_pilot_mask
            assert not grid.cells[foreign].any()
        owned = sum(grid.own_pilot_mask.astype(int) for grid in grids)
        assert owned.sum() == 96 and owned.max() == 1

    def test_comb_offsets(self):
        grid = build_grid(np.zeros(576), PILOTS_K4, 1, 14, 48)
        np.testing.assert_array_equal(np.flatnonzero(grid.own_pilot_mask[2]), np.arange(1, 48, 4))

    def test_data_cells_time_major(self):
        symbols = np.arange(576, dtype=complex)
        grid = build_grid(symbols, PILOTS_K4, 0, 14, 48)
        np.testing.assert_array_equal(grid.cells[0], symbols[:48])
        np.testing.assert_array_equal(grid.cells[3], symbols[96:144])
        assert (grid.kind[2] != DATA).all()

    def test_symbol_count_mismatch(self):
        with pytest.raises(SimulationError):
            build_grid(np.zeros(100), PILOTS_K4, 0, 14, 48)

    def test_orthogonal_allocation(self):
        allocation = data_symbol_allocation(14, PILOTS_K4, 4, orthogonal=True)
        assert [len(a) for a in allocation] == [3, 3, 3, 3]
        flat = sorted(t for a in allocation for t in a)
        assert flat == [0, 1, 3, 4, 5, 6, 7, 8, 9, 10, 12, 13]

        grid = build_grid(np.zeros(3 * 48), PILOTS_K4, 1, 14, 48, data_symbols=allocation[1])
        assert grid.data_cell_count() == 144

    def test_shared_allocation(self):
        allocation = data_symbol_allocation(14, PILOTS_K4, 4, orthogonal=False)
        assert all(len(a) == 12 for a in allocation)
