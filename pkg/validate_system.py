#!/usr/bin/env python3
"""
Simulator self-test
Oracle equivalence of the sphere detector and the BCJR decoder, fading statistics,
capacity against quadrature, LS estimation error, the complexity targets and the throughput ordering
"""

import importlib
import itertools
import logging
import sys

import numpy as np
from scipy import special

from capacity import ergodic_sum_capacity, quadrature_sum_capacity
from channel_model import PowerDelayProfile, doppler_from_speed, generate_fading, tdla_pdp
from config import Config, McsConfig, SimConfig, derive_seed, validate
from decoder import bcjr_decode
from detectors import exhaustive_maxlog, sphere_detect
from link_simulator import run_link, run_point
from transmitter import conv_encode
from utils.complexity import ComplexityModel

logger = logging.getLogger(__name__)

SELFTEST_SEED = 20240611


def brute_force_info_llr(coded_llr: np.ndarray, n_info: int) -> np.ndarray:
    """Max-log MAP info LLRs by enumerating all 2^k codewords"""
    best = np.full((n_info, 2), -np.inf)
    signs = 1 - 2 * np.arange(2)
    for word in itertools.product((0, 1), repeat=n_info):
        info = np.array(word)
        metric = 0.5 * np.sum(signs[conv_encode(info)] * coded_llr)
        for j, bit in enumerate(info):
            best[j, bit] = max(best[j, bit], metric)
    return best[:, 0] - best[:, 1]


class SelfTestValidator:
    """Runs the acceptance checks and collects passed / warnings / errors"""

    def __init__(self, trials: int = 1000, seed: int = SELFTEST_SEED):
        self.trials = trials
        self.seed = seed
        self.errors = []
        self.warnings = []
        self.passed = []

    def check_dependencies(self):
        logger.info("Checking dependencies...")
        for module_name, package_name in [('numpy', 'numpy'), ('scipy', 'scipy'), ('pandas', 'pandas'),
                                          ('numba', 'numba'), ('pydantic', 'pydantic'),
                                          ('dotenv', 'python-dotenv')]:
            try:
                importlib.import_module(module_name)
                self.passed.append(f"Required package: {package_name}")
            except ImportError:
                self.errors.append(f"Missing required package: {package_name}")

    def check_configuration(self):
        logger.info("Checking configuration...")
        try:
            Config().validate_config()
            self.passed.append("Runtime settings are valid")
        except ValueError as e:
            self.warnings.append(f"Runtime settings: {str(e)}")

    def check_sphere_oracle(self):
        logger.info(f"🔍 Sphere detector vs exhaustive oracle, {self.trials} trials...")
        rng = np.random.default_rng(derive_seed(self.seed, "selftest/sphere", 0))
        worst = 0.0
        for _ in range(self.trials):
            n_users = int(rng.choice([2, 3, 4]))
            order = int(rng.choice([4, 16]))
            n_rx = int(rng.choice([1, 2]))
            sigma2 = 10.0 ** (-rng.uniform(-5.0, 15.0) / 10.0)
            H = (rng.standard_normal((n_rx, n_users)) + 1j * rng.standard_normal((n_rx, n_users))) / np.sqrt(2)
            y = (rng.standard_normal(n_rx) + 1j * rng.standard_normal(n_rx)) * 1.5
            priors = rng.normal(0.0, 2.0, n_users * int(np.log2(order))) if rng.random() < 0.5 else None

            expected = exhaustive_maxlog(y, H, sigma2, priors, order, augmented=True)
            got = sphere_detect(y, H, sigma2, priors, order).llr
            worst = max(worst, float(np.max(np.abs(got - expected))))
        if worst <= 1e-9:
            self.passed.append(f"Sphere = augmented exhaustive oracle over {self.trials} trials "
                               f"(max |ΔLLR| = {worst:.2e})")
        else:
            self.errors.append(f"Sphere deviates from the exhaustive oracle: max |ΔLLR| = {worst:.3e}")

    def check_bcjr_oracle(self, n_vectors: int = 200):
        logger.info(f"🔍 BCJR vs codeword enumeration, {n_vectors} vectors...")
        rng = np.random.default_rng(derive_seed(self.seed, "selftest/bcjr", 0))
        worst = 0.0
        sign_mismatch = 0
        for _ in range(n_vectors):
            n_info = int(rng.integers(1, 13))
            coded_llr = rng.normal(0.0, 3.0, 2 * (n_info + 6))
            expected = brute_force_info_llr(coded_llr, n_info)
            got = bcjr_decode(coded_llr).info_llr
            worst = max(worst, float(np.max(np.abs(got - expected))))
            sign_mismatch += int(np.sum((got < 0) != (expected < 0)))
        if worst <= 1e-9 and sign_mismatch == 0:
            self.passed.append(f"BCJR = max-log MAP enumeration over {n_vectors} vectors (max |ΔLLR| = {worst:.2e})")
        else:
            self.errors.append(f"BCJR deviates from enumeration: max |ΔLLR| = {worst:.3e}, "
                               f"{sign_mismatch} sign mismatches")

    def check_fading(self, n_processes: int = 400):
        logger.info("🔍 Fading autocorrelation and tap powers...")
        single_tap = PowerDelayProfile(delays_s=np.array([0.0]), powers=np.array([1.0]))
        symbol_duration = 1e-3 / 28.0
        max_lag = int(np.ceil(5e-3 / symbol_duration))
        for speed_kmh in (5.0, 500.0):
            doppler = doppler_from_speed(speed_kmh, 2e9)
            gains = np.stack([
                generate_fading(single_tap, doppler, 2 * max_lag, symbol_duration,
                                derive_seed(self.seed, "selftest/fading", i)).gains[:, 0]
                for i in range(n_processes)])
            lags = np.arange(0, max_lag + 1, 4)
            empirical = np.array([np.mean(gains[:, :gains.shape[1] - lag] * np.conj(gains[:, lag:])).real
                                  for lag in lags])
            deviation = float(np.max(np.abs(empirical - special.j0(2 * np.pi * doppler * lags * symbol_duration))))
            if deviation <= 0.05:
                self.passed.append(f"Autocorrelation matches J0 at f_d = {doppler:.2f} Hz (max dev {deviation:.3f})")
            else:
                self.errors.append(f"Autocorrelation off J0 at f_d = {doppler:.2f} Hz: max dev {deviation:.3f}")

        pdp = tdla_pdp(100e-9)
        powers = np.mean([np.abs(generate_fading(pdp, 0.0, 1, symbol_duration,
                                                 derive_seed(self.seed, "selftest/taps", i)).gains[0]) ** 2
                          for i in range(20_000)], axis=0)
        total_error = abs(powers.sum() - 1.0)
        if total_error <= 0.02:
            self.passed.append(f"Total tap power within 2% of 1 ({powers.sum():.4f})")
        else:
            self.errors.append(f"Total tap power {powers.sum():.4f} is off by more than 2%")

    def check_capacity(self, n_draws: int = 100_000):
        logger.info("🔍 Ergodic capacity vs quadrature...")
        failures = []
        for snr_db in range(-10, 21, 5):
            means = []
            for n_users in (1, 2, 4, 6):
                mean, stderr = ergodic_sum_capacity(snr_db, n_users, n_draws, self.seed)
                oracle = quadrature_sum_capacity(snr_db, n_users)
                if abs(mean - oracle) > 3 * stderr:
                    failures.append(f"{snr_db} dB, K={n_users}: {mean:.4f} vs {oracle:.4f} ± {3 * stderr:.4f}")
                means.append(mean)
            if not all(b > a for a, b in zip(means, means[1:])):
                failures.append(f"{snr_db} dB: capacity not strictly increasing in K")
        if failures:
            self.errors.extend(f"Capacity: {f}" for f in failures)
        else:
            self.passed.append("Ergodic capacity within 3 standard errors of quadrature, increasing in K")

    def check_ls_mse(self, n_cells: int = 100_000, noise_var: float = 0.1):
        logger.info("🔍 LS estimation error...")
        rng = np.random.default_rng(derive_seed(self.seed, "selftest/ls", 0))
        h = 0.8 - 0.3j
        pilots = np.exp(1j * np.pi / 4 * (2 * rng.integers(0, 4, n_cells) + 1))
        noise = np.sqrt(noise_var / 2) * (rng.standard_normal(n_cells) + 1j * rng.standard_normal(n_cells))
        mse = float(np.mean(np.abs((h * pilots + noise) / pilots - h) ** 2))
        if abs(mse - noise_var) <= 0.05 * noise_var:
            self.passed.append(f"LS MSE {mse:.4f} within 5% of σ² = {noise_var}")
        else:
            self.errors.append(f"LS MSE {mse:.4f} is not within 5% of σ² = {noise_var}")

    def check_complexity_targets(self, n_drops: int = 20):
        logger.info("🔍 Complexity relative to MMSE-SIC at K=4, QPSK, 4 dB...")
        sic_reference = ComplexityModel.mmse_sic_cost(1, 4, 4)
        targets = {'sphere': 3.0, 'idd': 10.0}
        for detector, target in targets.items():
            validated = validate(SimConfig(detector=detector, n_users=4, n_drops=n_drops,
                                           master_seed=self.seed, snr_db_list=(4.0,)))
            point = run_point(validated, 4.0, McsConfig(modulation_order=4, code_rate='1/2'))
            ratio = point.counters.mults_per_re / sic_reference
            message = f"{detector}: {ratio:.2f}× SIC multiplies per RE (target < {target:g}×)"
            if ratio < target:
                self.passed.append(message)
            else:
                self.errors.append(message)

    def check_se_ordering(self, n_drops: int = 20, snr_db: float = 4.0):
        logger.info("🔍 Joint detection vs orthogonal access at K=4, estimated channels...")
        candidates = [McsConfig(modulation_order=4, code_rate=rate) for rate in ('1/8', '1/6', '1/4', '1/3', '1/2')]
        for speed_kmh in (5.0, 500.0):
            se = {}
            for detector in ('oma', 'sphere', 'idd'):
                validated = validate(SimConfig(detector=detector, n_users=4, n_drops=n_drops, csi='practical',
                                               speed_kmh=speed_kmh, master_seed=self.seed, snr_db_list=(snr_db,)))
                record, _ = run_link(validated, snr_db, candidates)
                se[detector] = record.goodput_se
            for detector in ('sphere', 'idd'):
                message = (f"{speed_kmh:g} km/h: {detector} SE {se[detector]:.3f} vs orthogonal {se['oma']:.3f} "
                           f"({n_drops} drops)")
                if se[detector] > se['oma']:
                    self.passed.append(message)
                else:
                    self.warnings.append(message)

    def run_validation(self) -> bool:
        logger.info("Starting simulator self-test...")

        self.check_dependencies()
        self.check_configuration()
        self.check_sphere_oracle()
        self.check_bcjr_oracle()
        self.check_fading()
        self.check_capacity()
        self.check_ls_mse()
        self.check_complexity_targets()
        self.check_se_ordering()

        print("\n" + "=" * 60)
        print("SELF-TEST RESULTS")
        print("=" * 60)

        if self.passed:
            print(f"\nPASSED ({len(self.passed)}):")
            for item in self.passed:
                print(f"   * {item}")

        if self.warnings:
            print(f"\nWARNINGS ({len(self.warnings)}):")
            for item in self.warnings:
                print(f"   ! {item}")

        if self.errors:
            print(f"\nERRORS ({len(self.errors)}):")
            for item in self.errors:
                print(f"   X {item}")

        print("\n" + "=" * 60)

        if self.errors:
            print("SELF-TEST FAILED - see the errors above")
            return False
        if self.warnings:
            print("SELF-TEST PASSED WITH WARNINGS")
            return True
        print("SELF-TEST PASSED")
        return True


def main():
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    print("NOMA uplink link simulator - Self-test")
    print("=" * 60)

    validator = SelfTestValidator(trials=Config().SELFTEST_TRIALS)
    if not validator.run_validation():
        sys.exit(1)


if __name__ == "__main__":
    main()
