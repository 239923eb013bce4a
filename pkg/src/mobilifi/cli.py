"""``mobilifi`` command-line entry point.

Every subcommand writes its CSV outputs and a ``manifest.json`` into
``--out``.  On failure a ``_FAILED`` marker holding the error line is left
in the output directory and the process exits with one of the codes in
:data:`EXIT_CODES`.  Any flag can also be set through an environment
variable ``MOBILIFI_<FLAG>`` (dashes become underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .channel import default_scenario, sample_channel_trace
from .coherence import CoherenceConfig, DegenerateSequenceError, coherence_time, empirical_cdf
from .estimation import (
    InfeasiblePilotError,
    PilotConstraints,
    noise_variance_for_snr,
    run_estimator,
    uniform_pilot,
)
from .geometry import AngleModel, EulerAngles, integrate_imu, make_trajectory
from .io import (
    InputFormatError,
    atomic_write_text,
    emit_plot_data,
    file_digest,
    ingest_imu_csv,
    load_scenario,
    read_channel_trace_csv,
    save_scenario,
    scenario_to_dict,
    write_channel_trace_csv,
)
from .neural import (
    CdrnConfig,
    TrackerConfig,
    TrainingDivergedError,
    build_training_pairs,
    cdrn_forward,
    cdrn_train,
    naive_prediction,
    nmse,
    save_checkpoint,
    track_channel,
)
from .rate import ConstellationError, RateConfig, pam_uniform, rate_along_trace

COMMANDS = ("simulate", "coherence", "rate", "estimate", "denoise", "track")
ENV_PREFIX = "MOBILIFI_"
EXIT_CODES = {
    "ok": 0,
    "internal": 1,
    "config": 2,
    "missing_file": 3,
    "infeasible": 4,
    "numerical": 5,
}
FAILED_MARKER = "_FAILED"
MANIFEST = "manifest.json"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.code = EXIT_CODES[kind]


def sub_seed(seed: int, stage: str) -> int:
    """Independent 63-bit seed for one pipeline stage: ``sha256("<seed>:<stage>")``."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    out: Path
    scenario: Path | None = None
    traces: tuple[Path, ...] = ()
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise CliError("config", f"unknown command {self.command!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise CliError("config", "seed must be a non-negative integer")


@dataclass
class RunManifest:
    version: str
    command: str
    seed: int
    config: dict
    inputs: dict[str, str]
    outputs: list[str]
    started_utc: str
    duration_s: float
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def error_line(err: CliError) -> str:
    return f"error code={err.code} kind={err.kind} message={json.dumps(str(err))}"


def _classify(exc: BaseException) -> CliError:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, FileNotFoundError):
        return CliError("missing_file", str(exc))
    if isinstance(exc, (InfeasiblePilotError, ConstellationError)):
        return CliError("infeasible", str(exc))
    if isinstance(exc, (TrainingDivergedError, DegenerateSequenceError, FloatingPointError)):
        return CliError("numerical", str(exc))
    if isinstance(exc, (InputFormatError, ValueError, IndexError)):
        return CliError("config", str(exc))
    return CliError("internal", f"{type(exc).__name__}: {exc}")


def _configure(factory, **kw):
    try:
        return factory(**kw)
    except (InfeasiblePilotError, ConstellationError):
        raise
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"{getattr(factory, '__name__', factory)}: {exc}") from exc


def _single_trace(spec: ExperimentSpec):
    if len(spec.traces) != 1:
        raise CliError("config", f"{spec.command} needs exactly one --trace file")
    return read_channel_trace_csv(spec.traces[0])


def _series(spec: ExperimentSpec, trace) -> np.ndarray:
    K, N = trace.shape
    led, pd = spec.params.get("led", 0), spec.params.get("pd", 0)
    if not (0 <= led < K and 0 <= pd < N):
        raise CliError("config", f"link (led={led}, pd={pd}) outside a {K}x{N} trace")
    return np.asarray(trace.series(led, pd))


def _scenario(spec: ExperimentSpec, walking: bool = False):
    return load_scenario(spec.scenario) if spec.scenario else default_scenario(walking=walking)


def _cmd_simulate(spec: ExperimentSpec, out: Path) -> tuple[list[str], dict, dict]:
    p = spec.params
    scenario = _scenario(spec, walking=p["kind"] == "walking")
    model = _configure(
        AngleModel,
        mean=tuple(math.radians(a) for a in p["angle_mean_deg"]),
        std=math.radians(p["angle_std_deg"]),
        reversion_time=p["reversion_time"],
    )
    if p.get("imu"):
        samples = ingest_imu_csv(p["imu"])
        initial = EulerAngles(*model.mean)
        pose = integrate_imu(samples, initial, p["fs"], scenario.ue_origin)
    else:
        start = tuple(p["start"]) if p.get("start") else scenario.ue_origin
        pose = make_trajectory(
            p["kind"], p["duration"], p["fs"], p["speed"], start, p.get("end"), model, sub_seed(spec.seed, "simulate")
        )
    trace = sample_channel_trace(scenario, pose)
    write_channel_trace_csv(trace, out / "trace.csv")
    save_scenario(scenario, out / "scenario.json")
    return ["trace.csv", "scenario.json"], {"slots": len(trace)}, {"scenario": scenario_to_dict(scenario)}


def _cmd_coherence(spec: ExperimentSpec, out: Path):
    p = spec.params
    if not spec.traces:
        raise CliError("config", "coherence needs at least one --trace file")
    cfg = _configure(
        CoherenceConfig,
        eta_th=p["eta_th"],
        max_lag=p["max_lag"],
        outage_policy=p["outage_policy"],
        estimator=p["estimator"],
    )
    rho_cols = {"trace": [], "led": [], "pd": [], "lag": [], "rho": []}
    coh_cols = {"trace": [], "led": [], "pd": [], "n_c": [], "T_c_s": [], "outage": [], "censored": []}
    for i, path in enumerate(spec.traces):
        trace = read_channel_trace_csv(path)
        K, N = trace.shape
        for k in range(K):
            for n in range(N):
                res = coherence_time(trace.series(k, n), trace.f_s, cfg)
                for lag, r in enumerate(res.rho):
                    for key, v in zip(rho_cols, (i, k + 1, n + 1, lag, r)):
                        rho_cols[key].append(v)
                row = (i, k + 1, n + 1, res.n_c, res.T_c, res.outage, res.censored)
                for key, v in zip(coh_cols, row):
                    coh_cols[key].append(v)
    outputs = ["coherence.csv", "cdf.csv"]
    emit_plot_data(coh_cols, out / "coherence.csv")
    steps = empirical_cdf(coh_cols["T_c_s"])
    emit_plot_data({"T_c_s": [s[0] for s in steps], "probability": [s[1] for s in steps]}, out / "cdf.csv")
    if rho_cols["lag"]:
        emit_plot_data(rho_cols, out / "rho.csv")
        outputs.insert(0, "rho.csv")
    summary = {"links": len(coh_cols["n_c"]), "outages": int(sum(coh_cols["outage"]))}
    return outputs, summary, {}


def _constellation(p):
    return pam_uniform(p["M"], p["A_hat"], p["Phi"], p["eps_hat"])


def _cmd_rate(spec: ExperimentSpec, out: Path):
    p = spec.params
    trace = _single_trace(spec)
    c = _constellation(p)
    rc = _configure(
        RateConfig,
        B=p["B"],
        sigma2=p["sigma2"],
        mc_samples=p["mc_samples"],
        seed=sub_seed(spec.seed, "rate"),
        estimator=p["estimator"],
    )
    series = rate_along_trace(trace, p["topology"], c, rc, p.get("leds"), p.get("pds"), p["policy"])
    emit_plot_data({"t_s": series.t, "rate_bits_s": series.rate, "stderr": series.stderr}, out / "rate.csv")
    return ["rate.csv"], {"mean_rate_bits_s": float(np.mean(series.clamped))}, {}


def _sigma2(p, h: np.ndarray) -> float:
    if p.get("sigma2") is not None:
        if not p["sigma2"] > 0:
            raise CliError("config", "sigma2 must be positive")
        return p["sigma2"]
    h_rms = float(np.sqrt(np.mean(h**2)))
    if h_rms == 0:
        raise CliError("infeasible", "channel is identically zero; cannot set the noise level from an SNR")
    return noise_variance_for_snr(h_rms, p["phi_hat"], p["snr_db"])


def _cmd_estimate(spec: ExperimentSpec, out: Path):
    p = spec.params
    h = _series(spec, _single_trace(spec))
    live = np.flatnonzero(h > 0)
    if live.size == 0:
        raise CliError("infeasible", "selected link is in outage for the whole trace")
    trials = min(p["trials"], live.size) if p.get("trials") else live.size
    pick = live[np.unique(np.linspace(0, live.size - 1, trials).round().astype(int))]
    c = PilotConstraints(p["rho_hat"], p["phi_hat"], p["L"])
    sigma2 = _sigma2(p, h[live])
    rep = run_estimator(h[pick], p["scheme"], c, sigma2, sub_seed(spec.seed, "estimate"))
    emit_plot_data(
        {"trial": np.arange(pick.size), "h_true": rep.h_true, "h_hat": rep.h_hat, "delta_h": rep.delta_h},
        out / "estimate.csv",
    )
    return ["estimate.csv"], {"nmse": rep.nmse, "sigma2": sigma2}, {}


def _cmd_denoise(spec: ExperimentSpec, out: Path):
    p = spec.params
    trace = _single_trace(spec)
    h = _series(spec, trace)
    coh = coherence_time(h, trace.f_s)
    if coh.outage:
        raise CliError("infeasible", "coherence time is zero (outage); no training windows")
    pilot = uniform_pilot(PilotConstraints(p["rho_hat"], p["phi_hat"], p["L"]))
    sigma2 = _sigma2(p, h)
    pairs = build_training_pairs(h, coh, pilot, sigma2, sub_seed(spec.seed, "denoise.pairs"))
    n_train = int(round(p["split"] * len(pairs)))
    if not 0 < n_train < len(pairs):
        raise CliError("config", f"split {p['split']} leaves no training or no test pairs ({len(pairs)} total)")
    cfg = _configure(
        CdrnConfig,
        D=p["blocks"],
        layers_per_block=p["layers_per_block"],
        filters=p["filters"],
        kernel=p["kernel"],
        learning_rate=p["lr"],
        epochs=p["epochs"],
        batch_size=p["batch_size"],
        seed=sub_seed(spec.seed, "denoise.train") % (1 << 32),
        optimizer=p["optimizer"],
    )
    model, history = cdrn_train(pairs[:n_train], cfg)
    test = pairs[n_train:]
    X = np.stack([q.input for q in test])
    Y = np.stack([q.target for q in test])
    est = cdrn_forward(X, model)[:, 1]
    n_c = coh.n_c
    slots = np.concatenate([np.arange(n_c) + (n_train + 1 + j) * n_c for j in range(len(test))])
    h_true, h_pred = Y.ravel(), est.ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(h_true > 0, np.abs(h_true - h_pred) / h_true, np.nan)
    emit_plot_data({"n": slots, "h_true": h_true, "h_pred": h_pred, "delta_h": d}, out / "denoise.csv")
    emit_plot_data({"epoch": np.arange(len(history)), "loss": history}, out / "loss.csv")
    save_checkpoint(out / "cdrn.npz", model, {"n_c": n_c, "pilot": list(pilot.a), "sigma2": sigma2})
    summary = {"nmse_ls": nmse(X[:, 1], Y), "nmse_cdrn": nmse(est, Y), "n_c": n_c, "sigma2": sigma2}
    emit_plot_data({"metric": list(summary), "value": list(summary.values())}, out / "summary.csv")
    return ["denoise.csv", "loss.csv", "cdrn.npz", "summary.csv"], summary, {}


def _cmd_track(spec: ExperimentSpec, out: Path):
    p = spec.params
    h = _series(spec, _single_trace(spec))
    cfg = _configure(
        TrackerConfig,
        hidden_size=p["hidden_size"],
        time_step=p["time_step"],
        learning_rate=p["lr"],
        iterations=p["iterations"],
        split=p["split"],
        batch_size=p["batch_size"] or None,
        optimizer=p["optimizer"],
        seed=sub_seed(spec.seed, "track") % (1 << 32),
        shared_weights=p["shared_weights"],
    )
    res = track_channel(h, cfg, p["model"])
    naive = naive_prediction(h, cfg)
    emit_plot_data({"n": res.n, "h_true": res.h_true, "h_pred": res.h_pred, "delta_h": res.delta_h},
                   out / "track.csv")
    emit_plot_data({"iteration": np.arange(len(res.loss_history)), "loss": res.loss_history}, out / "loss.csv")
    save_checkpoint(out / "tracker.npz", res.model, {"bounds": list(res.bounds)})
    summary = {"mean_delta_h": res.mean_delta_h, "naive_mean_delta_h": naive.mean_delta_h,
               "gaps": int(res.gap.sum())}
    emit_plot_data({"metric": list(summary), "value": list(summary.values())}, out / "summary.csv")
    return ["track.csv", "loss.csv", "tracker.npz", "summary.csv"], summary, {}


HANDLERS = {
    "simulate": _cmd_simulate,
    "coherence": _cmd_coherence,
    "rate": _cmd_rate,
    "estimate": _cmd_estimate,
    "denoise": _cmd_denoise,
    "track": _cmd_track,
}


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def run(spec: ExperimentSpec) -> int:
    """Execute one experiment; returns the process exit code.

    Data outputs depend only on the spec, its input files and the seed.
    The manifest (which records wall-clock time) is written last, after
    every data file is in place.
    """
    out = Path(spec.out)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        err = CliError("config", f"cannot create output directory {out}: {exc}")
        print(error_line(err), file=sys.stderr)
        return err.code
    marker = out / FAILED_MARKER
    if marker.exists():
        marker.unlink()
    try:
        for path in ([spec.scenario] if spec.scenario else []) + list(spec.traces):
            if not Path(path).is_file():
                raise CliError("missing_file", f"input file not found: {path}")
        outputs, summary, extra = HANDLERS[spec.command](spec, out)
        inputs = [spec.scenario] if spec.scenario else []
        inputs += list(spec.traces)
        if spec.params.get("imu"):
            inputs.append(spec.params["imu"])
        config = {"command": spec.command, "seed": spec.seed, "params": _jsonable(spec.params), **extra}
        manifest = RunManifest(
            version=__version__,
            command=spec.command,
            seed=spec.seed,
            config=config,
            inputs={str(p): file_digest(p) for p in inputs},
            outputs=outputs,
            started_utc=started.isoformat(timespec="seconds"),
            duration_s=round(time.perf_counter() - t0, 6),
            summary=_jsonable(summary),
        )
        atomic_write_text(out / MANIFEST, manifest.to_json())
        return 0
    except Exception as exc:  # every failure becomes one error line and a marker
        err = _classify(exc)
        line = error_line(err)
        print(line, file=sys.stderr)
        try:
            atomic_write_text(marker, line + "\n")
        except OSError:
            pass
        return err.code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        err = CliError("config", f"{self.prog}: {message}")
        self.print_usage(sys.stderr)
        print(error_line(err), file=sys.stderr)
        raise SystemExit(err.code)


def _common(sp: argparse.ArgumentParser):
    sp.add_argument("--scenario", type=Path, help="scenario JSON file (default: built-in room)")
    sp.add_argument("--trace", type=Path, action="append", default=[], help="channel trace CSV (repeatable)")
    sp.add_argument("--out", type=Path, help="output directory")
    sp.add_argument("--seed", type=int, default=0)


def _pilot_flags(sp):
    sp.add_argument("--L", type=int, default=4, help="pilot length")
    sp.add_argument("--rho-hat", type=float, default=2.0, help="peak pilot power")
    sp.add_argument("--phi-hat", type=float, default=1.0, help="average pilot power")
    sp.add_argument("--sigma2", type=float, default=None, help="noise variance (overrides --snr-db)")
    sp.add_argument("--snr-db", type=float, default=10.0)
    sp.add_argument("--led", type=int, default=0, help="LED index of the link (0-based)")
    sp.add_argument("--pd", type=int, default=0, help="PD index of the link (0-based)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobilifi", description="Mobile LiFi channel toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = subs.add_parser("simulate", help="synthesise a channel trace")
    _common(sp)
    sp.add_argument("--kind", choices=("sitting", "walking"), default="sitting")
    sp.add_argument("--duration", type=float, default=10.0, help="seconds")
    sp.add_argument("--fs", type=float, default=1000.0, help="sampling rate in Hz")
    sp.add_argument("--speed", type=float, default=0.6, help="walking speed in m/s")
    sp.add_argument("--start", type=float, nargs=3, default=None)
    sp.add_argument("--end", type=float, nargs=3, default=None)
    sp.add_argument("--angle-mean-deg", type=float, nargs=3, default=(0.0, 40.0, 0.0))
    sp.add_argument("--angle-std-deg", type=float, default=5.0)
    sp.add_argument("--reversion-time", type=float, default=1.0)
    sp.add_argument("--imu", type=Path, default=None, help="gyroscope CSV to integrate instead of the random walk")

    sp = subs.add_parser("coherence", help="correlation coefficient and coherence time")
    _common(sp)
    sp.add_argument("--eta-th", type=float, default=0.99)
    sp.add_argument("--max-lag", type=int, default=1000)
    sp.add_argument("--outage-policy", choices=("zero_if_any_outage", "ignore_outage"), default="zero_if_any_outage")
    sp.add_argument("--estimator", choices=("biased", "pairs"), default="biased")

    sp = subs.add_parser("rate", help="achievable PAM rate along a trace")
    _common(sp)
    sp.add_argument("--topology", choices=("siso", "simo", "miso", "mimo"), default="siso")
    sp.add_argument("--M", type=int, default=2, help="PAM order")
    sp.add_argument("--A-hat", type=float, default=1.0, help="peak amplitude")
    sp.add_argument("--Phi", type=float, default=0.5, help="average optical power limit")
    sp.add_argument("--eps-hat", type=float, default=0.5, help="electrical power limit")
    sp.add_argument("--B", type=float, default=20e6, help="bandwidth in Hz")
    sp.add_argument("--sigma2", type=float, default=RateConfig.sigma2)
    sp.add_argument("--mc-samples", type=int, default=100_000)
    sp.add_argument("--estimator", choices=("reduced", "plain"), default="reduced")
    sp.add_argument("--policy", choices=("mrc", "dominant_singular", "uniform"), default="mrc")
    sp.add_argument("--leds", type=int, nargs="+", default=None, help="LED indices (0-based)")
    sp.add_argument("--pds", type=int, nargs="+", default=None, help="PD indices (0-based)")

    sp = subs.add_parser("estimate", help="pilot-based channel estimation")
    _common(sp)
    _pilot_flags(sp)
    sp.add_argument("--scheme", choices=("ls", "zf_coding", "zf_uniform"), default="zf_coding")
    sp.add_argument("--trials", type=int, default=None, help="number of slots to estimate (default all)")

    sp = subs.add_parser("denoise", help="train the residual denoiser on LS estimates")
    _common(sp)
    _pilot_flags(sp)
    sp.add_argument("--blocks", type=int, default=2)
    sp.add_argument("--layers-per-block", type=int, default=3)
    sp.add_argument("--filters", type=int, default=8)
    sp.add_argument("--kernel", type=int, default=3)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--optimizer", choices=("sgd", "momentum", "adam"), default="sgd")
    sp.add_argument("--split", type=float, default=0.8)

    sp = subs.add_parser("track", help="one-step-ahead channel tracking")
    _common(sp)
    sp.add_argument("--model", choices=("lstm", "rnn"), default="lstm")
    sp.add_argument("--hidden-size", type=int, default=100)
    sp.add_argument("--time-step", type=int, default=4)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--iterations", type=int, default=150)
    sp.add_argument("--split", type=float, default=0.7)
    sp.add_argument("--batch-size", type=int, default=16, help="0 for full-batch updates")
    sp.add_argument("--optimizer", choices=("sgd", "momentum", "adam"), default="sgd")
    sp.add_argument("--shared-weights", action="store_true")
    sp.add_argument("--led", type=int, default=0)
    sp.add_argument("--pd", type=int, default=0)
    return parser


def _env_value(action: argparse.Action, raw: str):
    if isinstance(action, argparse._StoreTrueAction):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    conv = action.type or str
    if isinstance(action, argparse._AppendAction):
        return [conv(x) for x in raw.split(os.pathsep) if x]
    if action.nargs not in (None, "?"):
        return [conv(x) for x in raw.split()]
    return conv(raw)


def _apply_env(parser: argparse.ArgumentParser, command: str, env) -> None:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    for action in sub._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        raw = env.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        try:
            value = _env_value(action, raw)
        except ValueError as exc:
            sub.error(f"environment variable {ENV_PREFIX + action.dest.upper()}: {exc}")
        if action.choices is not None and value not in action.choices:
            sub.error(f"environment variable {ENV_PREFIX + action.dest.upper()}: invalid choice {value!r}")
        sub.set_defaults(**{action.dest: value})


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    if args.out is None:
        raise CliError("config", "an output directory is required (--out or MOBILIFI_OUT)")
    reserved = {"command", "scenario", "trace", "out", "seed"}
    params = {k: v for k, v in vars(args).items() if k not in reserved}
    for key in ("start", "end", "angle_mean_deg"):
        if params.get(key) is not None:
            params[key] = tuple(params[key])
    return ExperimentSpec(args.command, args.out, args.scenario, tuple(args.trace), args.seed, params)


def main(argv=None, env=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    env = os.environ if env is None else env
    parser = build_parser()
    try:
        command = next((a for a in argv if a in COMMANDS), None)
        if command is not None:
            _apply_env(parser, command, env)
        args = parser.parse_args(argv)
        spec = spec_from_args(args)
    except CliError as err:
        print(error_line(err), file=sys.stderr)
        return err.code
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
