import pytest

from config import (Config, McsConfig, SimConfig, build_config, config_to_text, derive_seed,
                    load_config_file, parse_mcs_set, parse_number_list, validate, with_overrides)
from utils.error_handler import ConfigError


class TestValidate:
    def test_default_config_is_valid(self):
        validated = validate(SimConfig())
        assert validated.overhead_fraction == pytest.approx(2 / 14)
        assert validated.n_data_symbols == 12
        assert validated.doppler_hz == pytest.approx(9.27, abs=0.01)

    def test_slot_timing_follows_subcarrier_spacing(self):
        validated = validate(SimConfig())
        assert validated.symbol_duration_s == pytest.approx(0.5e-3 / 14)
        assert validated.slot_duration_s == pytest.approx(0.5e-3)

    def test_zero_users_rejected(self):
        with pytest.raises(ConfigError, match="n_users must be ≥ 1"):
            validate({'n_users': 0})

    def test_too_many_users_rejected(self):
        with pytest.raises(ConfigError, match="n_users must be ≤ 6"):
            validate({'n_users': 7})

    def test_noma_pair_requires_two_users(self):
        with pytest.raises(ConfigError) as info:
            validate({'detector': 'noma2_sic', 'n_users': 4})
        assert 'noma2_sic' in info.value.message
        assert 'n_users = 4' in info.value.message

    def test_error_names_field_and_value(self):
        with pytest.raises(ConfigError) as info:
            validate({'n_rx': 0})
        assert "n_rx" in info.value.message
        assert "0" in info.value.message

    @pytest.mark.parametrize("field,value", [
        ('scs_hz', 0.0),
        ('delay_spread_ns', -1.0),
        ('speed_kmh', -5.0),
        ('n_drops', 0),
        ('detector', 'zero_forcing'),
        ('csi', 'perfect'),
        ('noma_power_split', 1.0),
    ])
    def test_field_invariants(self, field, value):
        with pytest.raises(ConfigError):
            validate({field: value})

    def test_exhaustive_guard_covers_mcs_set(self):
        with pytest.raises(ConfigError, match="M\\^K"):
            validate({'detector': 'exhaustive', 'n_users': 5})

    def test_pilot_comb_follows_users(self):
        assert validate({'n_users': 3}).config.pilot.comb_size == 3

    def test_pilot_comb_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="comb_size"):
            validate({'n_users': 3, 'pilot': {'comb_size': 4}})

    def test_validation_is_idempotent(self):
        once = validate(SimConfig(n_users=2, detector='noma2_sic'))
        assert validate(once) == once
        assert validate(once.config) == once


class TestSeeds:
    def test_deterministic(self):
        assert derive_seed(7, "fading/ue0", 7) == derive_seed(7, "fading/ue0", 7)

    def test_labels_and_seeds_separate_streams(self):
        assert derive_seed(7, "fading/ue0", 7) != derive_seed(7, "fading/ue1", 7)
        assert derive_seed(7, "noise", 0) != derive_seed(8, "noise", 0)
        assert derive_seed(7, "noise", 0) != derive_seed(7, "noise", 1)

    def test_fits_in_64_bits(self):
        assert 0 <= derive_seed(2 ** 63, "bits/ue5", 10 ** 6) < 2 ** 64


class TestParsing:
    def test_plain_list(self):
        assert parse_number_list("-2,0,2,4") == [-2.0, 0.0, 2.0, 4.0]

    def test_range_is_inclusive(self):
        values = parse_number_list("-10..20")
        assert len(values) == 31
        assert values[0] == -10.0 and values[-1] == 20.0

    def test_range_with_step(self):
        assert parse_number_list("0..10:5") == [0.0, 5.0, 10.0]

    def test_integer_cast(self):
        assert parse_number_list("1..4", int) == [1, 2, 3, 4]

    def test_integer_cast_rejects_fractions(self):
        with pytest.raises(ConfigError, match="2.7"):
            parse_number_list("1,2.7", int)
        with pytest.raises(ConfigError):
            parse_number_list("1..3:0.5", int)
        assert parse_number_list("2.0,4", int) == [2, 4]

    def test_mcs_set(self):
        entries = parse_mcs_set("4:1/2, 16:3/4")
        assert [m.token for m in entries] == ["4:1/2", "16:3/4"]
        assert entries[1].bits_per_symbol == 4

    def test_unsupported_rate_rejected(self):
        with pytest.raises(ValueError):
            McsConfig(modulation_order=4, code_rate='5/6')


class TestConfigFile:
    def test_text_round_trip(self, tmp_path):
        original = SimConfig(n_users=3, snr_db_list=(-2.0, 0.5), speed_kmh=500.0, csi='genie')
        path = tmp_path / "scenario.txt"
        path.write_text("# comment line\n" + config_to_text(original))
        assert load_config_file(path) == original

    def test_overrides_win_over_file(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text(config_to_text(SimConfig()))
        assert load_config_file(path, {'n_drops': 5}).n_drops == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config_file(tmp_path / "absent.txt")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="Unknown config key"):
            build_config({'n_userz': '4'})

    def test_unparsable_value(self):
        with pytest.raises(ConfigError, match="n_users"):
            build_config({'n_users': 'four'})

    def test_string_values_are_parsed(self):
        config = build_config({'n_users': '2', 'snr_db_list': '-2..2:2', 'code_rate': '2/3',
                               'dump_channel': 'true'})
        assert config.n_users == 2
        assert config.snr_db_list == (-2.0, 0.0, 2.0)
        assert config.mcs.code_rate == '2/3'
        assert config.dump_channel is True

    def test_with_overrides_resets_pilot_comb(self):
        changed = with_overrides(SimConfig(), n_users=2, detector='noma2_sic')
        assert changed.pilot.comb_size == 2
        assert changed.detector == 'noma2_sic'


class TestRuntimeSettings:
    def test_defaults_validate(self):
        assert Config().validate_config()

    def test_bad_worker_count(self):
        settings = Config()
        settings.WORKERS = -1
        with pytest.raises(ValueError):
            settings.validate_config()

    def test_resolved_workers(self):
        assert Config().resolved_workers(3) == 3
        assert Config().resolved_workers(0) >= 1
