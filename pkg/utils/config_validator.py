from typing import Dict


class ScenarioValidator:
    """Cross-field scenario rules that single-field validators cannot express"""

    MAX_EXHAUSTIVE_CANDIDATES = 65_536
    MIN_PILOT_CELLS_PER_USER = 2

    @classmethod
    def validate_scenario(cls, config) -> Dict:
        """Check a scenario; returns {"valid": bool, "error": str | None} for the first violated rule"""
        k = config.n_users

        if config.detector == 'noma2_sic' and k != 2:
            return {"valid": False,
                    "error": f"detector 'noma2_sic' requires n_users = 2, got n_users = {k}"}

        if config.detector == 'noma2_sic' and config.noma_power_split == 0.5:
            return {"valid": False, "error": "noma_power_split must differ from 0.5 (detection order undefined)"}

        # Exhaustive guard over every MCS the scenario may run
        if config.detector == 'exhaustive':
            for mcs in (config.mcs,) + tuple(config.mcs_set):
                n_candidates = mcs.modulation_order ** k
                if n_candidates > cls.MAX_EXHAUSTIVE_CANDIDATES:
                    return {"valid": False,
                            "error": f"exhaustive detector needs M^K ≤ {cls.MAX_EXHAUSTIVE_CANDIDATES}, "
                                     f"got {mcs.modulation_order}^{k} = {n_candidates}"}

        pilot = config.pilot
        if pilot.comb_size != k:
            return {"valid": False,
                    "error": f"pilot comb_size must equal n_users ({k}), got {pilot.comb_size}"}

        if max(pilot.pilot_symbol_indices) >= config.n_symbols:
            return {"valid": False,
                    "error": f"pilot_symbol_indices must lie in [0, {config.n_symbols}), "
                             f"got {list(pilot.pilot_symbol_indices)}"}

        n_data_symbols = config.n_symbols - len(pilot.pilot_symbol_indices)
        if n_data_symbols < 1:
            return {"valid": False, "error": "slot has no data symbols left after pilots"}

        if config.detector == 'oma' and n_data_symbols < k:
            return {"valid": False,
                    "error": f"oma needs at least one data symbol per user, got {n_data_symbols} for {k} users"}

        if config.n_subcarriers // k < cls.MIN_PILOT_CELLS_PER_USER:
            return {"valid": False,
                    "error": f"each user needs ≥ {cls.MIN_PILOT_CELLS_PER_USER} pilot cells per pilot symbol; "
                             f"n_subcarriers = {config.n_subcarriers} is too small for {k} users"}

        return {"valid": True, "error": None}
