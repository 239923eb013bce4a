"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line with the measured numbers; the lines are
repeated in the terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest

from gradcheck import KINDS, random_check
from synthetic import ar1_series, long_memory
from mobilifi.channel import LedConfig, PdConfig, default_scenario, los_gain, los_gain_vector, sample_channel_trace
from mobilifi.cli import MANIFEST, main
from mobilifi.coherence import CoherenceConfig, coherence_time
from mobilifi.estimation import (
    PilotConstraints,
    design_pilot,
    noise_variance_for_snr,
    pilot_grid_oracle,
    run_estimator,
    uniform_pilot,
)
from mobilifi.geometry import make_trajectory
from mobilifi.neural import (
    CdrnConfig,
    TrackerConfig,
    build_training_pairs,
    cdrn_forward,
    cdrn_train,
    naive_prediction,
    nmse,
    track_channel,
)
from mobilifi.rate import RateConfig, pam_uniform, rate_along_trace, rate_siso


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def sitting_trace(duration, seed, f_s=1000.0):
    return sample_channel_trace(default_scenario(), make_trajectory("sitting", duration, f_s, seed=seed))


def test_rate_asymptotics(acceptance):
    with Timer() as t:
        c = pam_uniform(2, 1.0, 0.5, 0.5)
        rc = RateConfig(B=20e6, mc_samples=100_000, seed=0)
        high = rate_siso(100 * math.sqrt(rc.B * rc.sigma2), c, rc)
        zero = rate_siso(0.0, c, rc)
        high_err = abs(high.rate - 40e6) / 40e6

        trace = sitting_trace(0.5, seed=1)
        small = RateConfig(B=20e6, mc_samples=2000, seed=0)
        simo = rate_along_trace(trace, "simo", c, small)
        gaps = []
        for n in range(2):
            siso = rate_along_trace(trace, "siso", c, small, pds=[n])
            gaps.append(np.min(simo.rate - siso.rate + 2 * np.hypot(simo.stderr, siso.stderr)))
    ok = high_err <= 0.01 and abs(zero.rate) <= 2 * zero.stderr and min(gaps) >= 0 and t.elapsed < 30
    acceptance(
        1,
        ok,
        f"R(a=100)={high.rate / 1e6:.4f} Mbit/s (rel err {high_err:.2e}), R(0)={zero.rate:.3g}+-{zero.stderr:.3g}, "
        f"SIMO-MRC minus SISO margin {min(gaps):.3g} b/s over {len(trace)} slots, {t.elapsed:.1f}s",
    )
    assert ok


def test_coherence_oracle(acceptance):
    with Timer() as t:
        h = ar1_series(200_000, 0.999, seed=0, level=10.0)
        ar = coherence_time(h, 1000.0, CoherenceConfig(eta_th=0.99))
        with_zero = h.copy()
        with_zero[1234] = 0.0
        outage = coherence_time(with_zero, 1000.0)
        band = []
        for seed in range(4):
            res = coherence_time(sitting_trace(60.0, seed).series(0, 0), 1000.0)
            if not res.outage:
                band.append(res.T_c)
    k = math.log(0.99) / math.log(0.999)
    ok = (
        abs(ar.n_c - k) <= 2
        and outage.T_c == 0.0
        and band
        and all(0.005 <= x <= 0.5 for x in band)
        and t.elapsed < 10
    )
    acceptance(
        2,
        ok,
        f"AR(1) n_c={ar.n_c} (analytic {k:.2f}), outage T_c={outage.T_c}, "
        f"sitting T_c={[round(x, 4) for x in band]} s, {t.elapsed:.1f}s",
    )
    assert ok


def pilot_matrix():
    pairs = [(1.0, 0.5), (1.0, 0.3), (2.0, 1.0), (2.0, 0.7), (1.5, 0.4),
             (1.0, 1.0), (0.8, 0.25), (2.0, 0.15), (1.2, 0.9), (1.7, 1.3)]
    return [PilotConstraints(rho, phi, L) for L in range(1, 6) for rho, phi in pairs]


def test_pilot_optimality(acceptance):
    with Timer() as t:
        cases = pilot_matrix()
        rng = np.random.default_rng(0)
        worst_gap, worst_var = math.inf, 0.0
        h, sigma2 = 7.96e-6, 1e-12
        for c in cases:
            d = design_pilot(c)
            worst_gap = min(worst_gap, d.energy - pilot_grid_oracle(c, 0.05)[0])
            y = h * d.a + math.sqrt(sigma2) * rng.standard_normal((10_000, c.L))
            est = y @ d.w
            worst_var = max(worst_var, abs(est.var(ddof=1) / (sigma2 / d.energy) - 1))
    ok = len(cases) == 50 and worst_gap >= -1e-12 and worst_var <= 0.1 and t.elapsed < 60
    acceptance(
        3,
        ok,
        f"{len(cases)} cases, min(design - grid) energy {worst_gap:.3g}, "
        f"max ZF variance deviation {worst_var:.3f}, {t.elapsed:.1f}s",
    )
    assert ok


def test_channel_fidelity(acceptance):
    with Timer() as t:
        led = LedConfig("L", (0.0, 0.0, 3.0))
        pd = PdConfig("P", (0.0, 0.0, 1.0))
        nadir = los_gain(led, [0, 0, 1], [0, 0, 1], pd)
        nadir_err = abs(nadir - 1e-4 / (4 * math.pi)) / (1e-4 / (4 * math.pi))
        rng = np.random.default_rng(1)
        worst, count = 0.0, 0
        while count < 10_000:
            pos = np.array([*rng.uniform(-2, 2, 2), rng.uniform(0, 2.5)])
            normal = rng.standard_normal(3)
            normal /= np.linalg.norm(normal)
            a = los_gain(led, pos, normal, pd)
            if a == 0:
                continue
            worst = max(worst, abs(a - los_gain_vector(led, pos, normal, pd)) / a)
            count += 1
        fov = math.radians(60)
        inside = los_gain(led, [0, 0, 1], [math.sin(fov - 1e-9), 0, math.cos(fov - 1e-9)], pd)
        outside = los_gain(led, [0, 0, 1], [math.sin(fov + 1e-9), 0, math.cos(fov + 1e-9)], pd)
        sideways = los_gain(led, [0, 0, 1], [0, 1, 0], pd)
    ok = nadir_err <= 1e-12 and worst <= 1e-12 and inside > 0 and outside == 0.0 and sideways == 0.0
    ok = ok and t.elapsed < 5
    acceptance(
        4,
        ok,
        f"nadir rel err {nadir_err:.2e}, angle/vector max rel diff {worst:.2e} on {count} geometries, "
        f"FOV cutoff exact zero {outside == 0.0 and sideways == 0.0}, {t.elapsed:.1f}s",
    )
    assert ok


def test_gradient_correctness(acceptance):
    with Timer() as t:
        rng = np.random.default_rng(2024)
        worst = {}
        for i in range(100):
            kind = KINDS[i % len(KINDS)]
            worst[kind] = max(worst.get(kind, 0.0), max(random_check(kind, rng).values()))
    top = max(worst.values())
    ok = top < 1e-4 and t.elapsed < 60
    acceptance(
        5,
        ok,
        f"100 checks over {len(KINDS)} layer/model kinds, max rel err {top:.2e} "
        f"({max(worst, key=worst.get)}), {t.elapsed:.1f}s",
    )
    assert ok


def test_estimator_ordering(acceptance):
    with Timer() as t:
        h = sitting_trace(30.0, seed=3).series(0, 0)
        coh = coherence_time(h, 1000.0)
        constraints = PilotConstraints(2.0, 1.0, 4)
        sigma2 = noise_variance_for_snr(float(np.sqrt(np.mean(h**2))), constraints.Phi_hat, 10.0)
        pairs = build_training_pairs(h, coh, uniform_pilot(constraints), sigma2, seed=1)
        n_train = int(0.8 * len(pairs))
        model, _ = cdrn_train(pairs[:n_train], CdrnConfig(epochs=20, seed=0))
        test = pairs[n_train:]
        X = np.stack([p.input for p in test])
        Y = np.stack([p.target for p in test])
        nmse_ls = nmse(X[:, 1], Y)
        nmse_cdrn = nmse(cdrn_forward(X, model)[:, 1], Y)
        slots = Y.ravel()
        zf_opt = run_estimator(slots, "zf_coding", constraints, sigma2, seed=2).nmse
        zf_uni = run_estimator(slots, "zf_uniform", constraints, sigma2, seed=2).nmse
    ok = nmse_cdrn < nmse_ls and zf_opt < zf_uni and t.elapsed < 300
    acceptance(
        6,
        ok,
        f"n_c={coh.n_c}, {len(pairs)} pairs; NMSE LS {nmse_ls:.4g} vs CDRN {nmse_cdrn:.4g}; "
        f"ZF optimal {zf_opt:.4g} vs uniform {zf_uni:.4g}, {t.elapsed:.1f}s",
    )
    assert ok


def test_tracking_ordering(acceptance):
    cfg = TrackerConfig(hidden_size=16, time_step=4, learning_rate=0.01, iterations=150, optimizer="adam")
    with Timer() as t:
        h = long_memory(600, period=100, noise=0.01, seed=0)
        lstm = track_channel(h, cfg, "lstm").mean_delta_h
        rnn = track_channel(h, cfg, "rnn").mean_delta_h
        naive = naive_prediction(h, cfg).mean_delta_h
    ok = lstm <= rnn and max(lstm, rnn) < naive and t.elapsed < 300
    acceptance(
        7,
        ok,
        f"mean dh LSTM {lstm:.4f}, RNN {rnn:.4f}, naive {naive:.4f} (hidden 16, time step 4, 150 passes), "
        f"{t.elapsed:.1f}s",
    )
    assert ok


def pipeline_runs(root, trace):
    common = ["--seed", "11"]
    return {
        "simulate": ["simulate", "--duration", "2", *common],
        "coherence": ["coherence", "--trace", str(trace), *common],
        "rate": ["rate", "--trace", str(trace), "--topology", "simo", "--mc-samples", "1000", *common],
        "estimate": ["estimate", "--trace", str(trace), "--trials", "200", *common],
        "denoise": ["denoise", "--trace", str(trace), "--epochs", "2", "--filters", "2", *common],
        "track": ["track", "--trace", str(trace), "--hidden-size", "4", "--iterations", "3", *common],
    }


def test_determinism(acceptance, tmp_path):
    base = tmp_path / "base"
    assert main(["simulate", "--duration", "2", "--seed", "4", "--out", str(base)], env={}) == 0
    trace = base / "trace.csv"
    mismatched, compared = [], 0
    with Timer() as t:
        for name, args in pipeline_runs(tmp_path, trace).items():
            outputs = []
            for rep in ("a", "b"):
                out = tmp_path / f"{name}_{rep}"
                assert main([*args, "--out", str(out)], env={}) == 0
                outputs.append({p.name: p.read_bytes() for p in out.iterdir() if p.name != MANIFEST})
            compared += len(outputs[0])
            if outputs[0] != outputs[1]:
                mismatched.append(name)
    ok = not mismatched
    acceptance(
        8,
        ok,
        f"6 pipelines, {compared} data files compared byte for byte, mismatches {mismatched or 'none'}, "
        f"{t.elapsed:.1f}s",
    )
    assert ok
