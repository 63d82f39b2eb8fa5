"""``cvcluster`` command line: generate, verify, spectra, gates, traces.

Every command writes UTF-8 CSV (the contract) plus a JSON summary that embeds
the SHA-256 of the effective configuration.  Exit codes: 0 success,
1 numerical-accuracy failure, 2 usage or format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import gaussian as g
from . import mbqc, physics, traces, verification
from .config import ExperimentConfig, worker_count
from .errors import CompileFailure, CVClusterError, FormatError, NumericalAccuracy
from .pipeline import KINDS, nullifier_coeffs, sample_frames, stream_state

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
RESIDUAL_TOL = 1e-9

REFERENCE_DELAYS_S = (39.6e-9, 199.8e-9)


def kind_name(kind) -> str:
    return f"{kind[0]}{kind[1]}"


def parse_kind(text: str) -> tuple:
    text = text.strip()
    if len(text) != 2 or text[0] not in "xp" or text[1] not in "12":
        raise FormatError(f"unknown nullifier kind {text!r}")
    return (text[0], int(text[1]))


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _summary(cfg: ExperimentConfig, command: str, **fields) -> dict:
    return {"command": command, "version": __version__, "config_sha256": cfg.hash, **fields}


# -- generate -----------------------------------------------------------------------

def generate_rows(cfg: ExperimentConfig) -> tuple:
    """Sampled nullifier rows ``(k, kind, var, var_db, stderr_db)`` and exact dB per row."""
    pcfg = cfg.pipeline_config()
    K, N = cfg.K, cfg.N
    state = stream_state(pcfg, K)
    jobs = (("x", cfg.seed), ("p", cfg.seed + 1))
    with ThreadPoolExecutor(max_workers=min(len(jobs), worker_count())) as pool:
        futures = [pool.submit(sample_frames, pcfg, K, cfg.frames, quad, seed, state)
                   for quad, seed in jobs]
        x_table, p_table = (f.result() for f in futures)
    reports = verification.reports_from_samples(x_table, p_table, N, range(0, K - N))
    rows, exact = [], []
    for k, rep in reports.items():
        for kind in KINDS:
            var = rep.variances[kind]
            rows.append((k, kind_name(kind), var, verification.to_db(var), rep.stderr_db[kind]))
            spec = nullifier_coeffs(k, N, kind)
            exact.append(verification.to_db(g.quadrature_variance(state, spec.coefficients(state))))
    return rows, exact


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    rows, exact = generate_rows(cfg)
    path = _write_csv(out / "nullifiers.csv", ["k", "kind", "var", "var_db", "stderr_db"], rows)
    interior = [(r, e) for r, e in zip(rows, exact) if r[0] >= cfg.N]
    means = {}
    for kind in KINDS:
        sel = [(r[3], e) for r, e in interior if r[1] == kind_name(kind)]
        means[kind_name(kind)] = {
            "sampled_db": float(np.mean([s for s, _e in sel])),
            "exact_db": float(np.mean([e for _s, e in sel])),
        }
    wp, grid = cfg.wave_packet, cfg.grid
    model = {kind_name(kind): physics.to_db(physics.nullifier_variance_model(
        cfg.opos, wp, cfg.global_eta, cfg.dtau2, kind, grid)) for kind in KINDS}
    doc = _summary(cfg, "generate", frames=cfg.frames, K=cfg.K, N=cfg.N,
                   interior_means=means, model_db=model, csv=str(path))
    _write_json(out / "generate_summary.json", doc)
    if args.plot:
        from . import plotting
        plotting.plot_nullifiers(
            [dict(zip(("k", "kind", "var", "var_db", "stderr_db"), r)) for r in rows],
            out / "nullifiers.png", threshold_db=verification.SUFFICIENT_DB)
    for kind, m in means.items():
        print(f"{kind}: sampled {m['sampled_db']:+.3f} dB, exact {m['exact_db']:+.3f} dB, "
              f"model {model[kind]:+.3f} dB")
    return EXIT_OK


# -- verify -------------------------------------------------------------------------

def read_nullifier_csv(path) -> dict:
    """Variances keyed by k -> {kind: var}; the ``var`` column wins over ``var_db``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"k", "kind"} <= set(reader.fieldnames):
            raise FormatError("nullifier CSV needs at least the columns k, kind, var or var_db")
        table: dict = {}
        for row in reader:
            try:
                k = int(row["k"])
                if row.get("var") not in (None, ""):
                    var = float(row["var"])
                else:
                    var = verification.REFERENCE * 10 ** (float(row["var_db"]) / 10)
            except (TypeError, ValueError) as exc:
                raise FormatError(f"bad nullifier row {row!r}: {exc}") from None
            table.setdefault(k, {})[parse_kind(row["kind"])] = var
    if not table:
        raise FormatError(f"{path}: no nullifier rows")
    return table


def cmd_verify(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    N = args.N if args.N is not None else cfg.N
    table = read_nullifier_csv(args.input)
    reports = {k: verification.NullifierReport(k, v, boundary=k < N) for k, v in table.items()}
    verdicts = verification.check_all(reports, N)
    if not verdicts:
        raise FormatError("no macronode has all neighbouring nullifiers; nothing to verify")
    rows = []
    for v in verdicts:
        b = v.binding
        rows.append((v.k, v.verified, v.sufficient, v.margin_db, b.family, b.bipartition.split,
                     b.threshold_db))
    path = _write_csv(out / "verdicts.csv",
                      ["k", "verified", "sufficient", "margin_db", "binding_family",
                       "binding_split", "binding_threshold_db"], rows)
    n_ok = sum(v.verified for v in verdicts)
    doc = _summary(cfg, "verify", N=N, checked=len(verdicts), verified=n_ok,
                   all_verified=n_ok == len(verdicts),
                   worst_margin_db=min(v.margin_db for v in verdicts), csv=str(path))
    _write_json(out / "verify_summary.json", doc)
    if args.plot:
        from . import plotting
        plotting.plot_verdicts(verdicts, out / "verdicts.png")
    print(f"verified {n_ok}/{len(verdicts)} macronodes; worst margin {doc['worst_margin_db']:+.3f} dB")
    return EXIT_OK


# -- spectra ------------------------------------------------------------------------

SPECTRUM_COLUMNS = tuple((d, q) for q in ("x", "p") for d in "ABCD")


def spectra_table(cfg: ExperimentConfig):
    fmax, n = cfg.spectrum_axis
    freq = np.linspace(0.0, fmax, n)
    omega = 2 * math.pi * freq
    curves = {f"{d}_{q}": physics.power_spectrum(d, q, cfg.opos, cfg.global_eta, cfg.tau1,
                                                cfg.tau2, omega)
              for d, q in SPECTRUM_COLUMNS}
    return freq, curves


def cmd_spectra(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    freq, curves = spectra_table(cfg)
    names = list(curves)
    path = _write_csv(out / "spectra.csv", ["freq_hz"] + names,
                      zip(freq, *(curves[n] for n in names)))
    wp, grid = cfg.wave_packet, cfg.grid
    model_rows = []
    for kind in KINDS:
        var = physics.nullifier_variance_model(cfg.opos, wp, cfg.global_eta, cfg.dtau2, kind, grid)
        model_rows.append((kind_name(kind), var, physics.to_db(var)))
    mpath = _write_csv(out / "nullifier_model.csv", ["kind", "var", "var_db"], model_rows)
    periods = {}
    for name, (det, ref) in {"short": ("A_x", "B_x"), "long": ("C_x", "D_x")}.items():
        try:
            periods[name] = physics.fringe_period(freq, curves[det], curves[ref])
        except CVClusterError:
            periods[name] = None
    swap = max(float(np.max(np.abs(curves[f"{a}_x"] - curves[f"{b}_p"])))
               for a, b in (("A", "B"), ("B", "A"), ("C", "D"), ("D", "C")))
    doc = _summary(cfg, "spectra", fringe_period_hz=periods,
                   expected_period_hz={"short": 1 / cfg.tau1, "long": 1 / cfg.tau2},
                   swap_asymmetry=swap, grid_step_hz=float(freq[1] - freq[0]),
                   csv=str(path), model_csv=str(mpath))
    _write_json(out / "spectra_summary.json", doc)
    if args.plot:
        from . import plotting
        plotting.plot_spectra(freq, curves, out / "spectra.png")
    for name, p in periods.items():
        print(f"{name} fringe period: {p if p is None else f'{p / 1e6:.4f} MHz'}")
    return EXIT_OK


# -- gates --------------------------------------------------------------------------

def target_matrix(text: str) -> np.ndarray:
    """``identity``, ``fourier`` or ``sr:<r>,<phi>`` (``S(r) R(phi)``)."""
    t = text.strip().lower()
    if t == "identity":
        return np.eye(2)
    if t == "fourier":
        return mbqc.rot(math.pi / 2)
    if t.startswith("sr:"):
        try:
            r, phi = (float(v) for v in t[3:].split(","))
        except ValueError:
            raise FormatError(f"bad target {text!r}; expected sr:<r>,<phi>") from None
        return mbqc.sq(r) @ mbqc.rot(phi)
    raise FormatError(f"unknown target {text!r}")


def cmd_gates(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    if (args.schedule is None) == (args.target is None):
        raise FormatError("give exactly one of --schedule or --target")
    if args.schedule is not None:
        schedule = mbqc.MeasurementSchedule.read(args.schedule)
    else:
        schedule = mbqc.one_mode_schedule(mbqc.compile_one_mode(target_matrix(args.target)))
        out.mkdir(parents=True, exist_ok=True)
        schedule.write(out / "schedule.json")
    ideal = mbqc.schedule_symplectic(schedule)
    achieved = mbqc.expanded_symplectic(schedule)
    residual = float(np.max(np.abs(ideal - achieved)))
    r_run = args.r if args.r is not None else cfg.resource_r()
    n = schedule.n_wires
    cov_in = np.eye(2 * n) / 2
    noise = mbqc.schedule_noise(schedule)
    rng = np.random.default_rng(cfg.seed)
    scan = sorted(set(args.r_scan) | {r_run})
    rows = []
    run = None
    for r in scan:
        res = mbqc.execute_schedule(schedule, r, rng=rng)
        predicted = math.exp(-2 * r) * float(np.max(np.abs(noise)))
        rows.append((r, res.excess(cov_in), predicted))
        if r == r_run:
            run = res
    path = _write_csv(out / "gates.csv", ["r", "excess", "predicted_excess"], rows)
    doc = _summary(cfg, "gates", wires=n, macronodes=len(schedule.steps),
                   symplectic_residual=residual, r=r_run,
                   excess=run.excess(cov_in), noise_coefficient=noise.tolist(),
                   target=ideal.tolist(), ledger=run.ledger.to_dict(), csv=str(path))
    _write_json(out / "gates_report.json", doc)
    if args.plot:
        from . import plotting
        rs, ex, pr = zip(*rows)
        plotting.plot_gate_scaling(rs, ex, pr, out / "gates.png")
    print(f"symplectic residual {residual:.3e}; excess at r={r_run:g}: {doc['excess']:.3e}")
    if residual > RESIDUAL_TOL:
        raise NumericalAccuracy(f"achieved symplectic residual {residual:.3e} exceeds {RESIDUAL_TOL:g}")
    return EXIT_OK


# -- traces -------------------------------------------------------------------------

def cmd_traces_synth(args, cfg, out) -> int:
    pcfg = cfg.pipeline_config()
    frames = args.frames
    table = sample_frames(pcfg, cfg.K, frames, "x", seed=cfg.seed)
    channels = "ABCD"
    q = np.zeros((frames, len(channels), cfg.K))
    for j, mode in enumerate(table.modes):
        q[:, channels.index(mode.spatial), mode.temporal] = table.values[:, j]
    rng = np.random.default_rng(cfg.seed)
    trace = traces.synthesize_traces(q, cfg.wave_packet, rng, noise_floor=args.noise_floor)
    trace.write(out / "traces.cvtr")
    if args.csv:
        trace.write_csv(out / "traces.csv")
    rows = [(f, channels[c], k, q[f, c, k]) for f in range(frames)
            for c in range(len(channels)) for k in range(cfg.K)]
    _write_csv(out / "quadratures_source.csv", ["frame", "channel", "k", "value"], rows)
    if args.plot:
        from . import plotting
        plotting.plot_trace(trace, out / "traces.png")
    _write_json(out / "traces_summary.json",
                _summary(cfg, "traces synth", frames=frames, channels=4, modes=cfg.K,
                         sample_rate_hz=trace.sample_rate, file=str(out / "traces.cvtr")))
    print(f"wrote {frames} frames x 4 channels x {trace.frame_length} samples")
    return EXIT_OK


def cmd_traces_ingest(args, cfg, out) -> int:
    if args.input is None:
        raise FormatError("traces ingest needs --input")
    path = Path(args.input)
    if path.suffix == ".csv":
        trace = traces.TraceFile.read_csv(path, args.frame_length)
    else:
        trace = traces.TraceFile.read(path)
    q = traces.ingest_traces(trace, cfg.wave_packet)
    names = "ABCD" if q.shape[1] <= 4 else [str(c) for c in range(q.shape[1])]
    rows = [(f, names[c], k, q[f, c, k]) for f in range(q.shape[0]) for c in range(q.shape[1])
            for k in range(q.shape[2])]
    p = _write_csv(out / "quadratures.csv", ["frame", "channel", "k", "value"], rows)
    _write_json(out / "ingest_summary.json",
                _summary(cfg, "traces ingest", frames=trace.frames, channels=trace.channels,
                         modes=int(q.shape[2]), csv=str(p)))
    print(f"ingested {trace.frames} frames, {q.shape[2]} modes per channel")
    return EXIT_OK


def cmd_traces_fitdelay(args, cfg, out) -> int:
    tables = []
    if args.input:
        for item in args.input.split(","):
            tables.append((Path(item).stem, *traces.read_phase_table(item)))
    else:
        rng = np.random.default_rng(cfg.seed)
        freq = np.linspace(1e6, 20e6, 96)
        for name, delay in zip(("short", "long"), REFERENCE_DELAYS_S):
            f, ph = traces.synthetic_phase_table(delay, freq, args.noise_rad, rng)
            traces.write_phase_table(out / f"phase_{name}.csv", f, np.angle(np.exp(1j * ph)))
            tables.append((name, f, np.angle(np.exp(1j * ph))))
    fits = [(name, traces.fit_delay(f, ph, unwrap=True)) for name, f, ph in tables]
    base = fits[0][1].delay_s
    rows = [(name, fit.delay_s, fit.stderr_s, fit.length_m, fit.delay_s / base)
            for name, fit in fits]
    p = _write_csv(out / "delay_fit.csv",
                   ["name", "delay_s", "stderr_s", "length_m", "ratio_to_first"], rows)
    doc = _summary(cfg, "traces fitdelay", csv=str(p),
                   fits={name: {"delay_s": fit.delay_s, "stderr_s": fit.stderr_s}
                         for name, fit in fits})
    if len(fits) == 2:
        doc["ratio"] = f"{5 * fits[0][1].delay_s / fits[1][1].delay_s:.4g}:5"
    _write_json(out / "fitdelay_summary.json", doc)
    for name, fit in fits:
        print(f"{name}: {fit.delay_s * 1e9:.4f} ns ({fit.length_m:.3f} m)")
    return EXIT_OK


def cmd_traces(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = {"synth": cmd_traces_synth, "ingest": cmd_traces_ingest,
               "fitdelay": cmd_traces_fitdelay}[args.action]
    return handler(args, cfg, out)


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (defaults: shipped reference values)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: config outputs.dir)")
    common.add_argument("--plot", action="store_true", help="also write PNG figures")

    parser = argparse.ArgumentParser(prog="cvcluster", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate and sample nullifiers")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", parents=[common], help="inseparability verdicts from a nullifier CSV")
    p.add_argument("--input", required=True, help="nullifier CSV (k, kind, var[, var_db])")
    p.add_argument("--N", type=int, help="macronodes per helix turn (default: config N)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("spectra", parents=[common], help="homodyne power spectra and model values")
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("gates", parents=[common], help="execute a measurement schedule")
    p.add_argument("--schedule", help="schedule JSON")
    p.add_argument("--target", help="compile a one-mode target: identity, fourier, sr:<r>,<phi>")
    p.add_argument("--r", type=float, help="resource squeezing (default: config)")
    p.add_argument("--r-scan", type=float, nargs="*", default=[1.0, 2.0, 3.0, 4.0, 5.0],
                   help="extra squeezing values for the scaling table")
    p.set_defaults(func=cmd_gates)

    p = sub.add_parser("traces", parents=[common], help="waveform traces and delay fits")
    p.add_argument("action", choices=["synth", "ingest", "fitdelay"])
    p.add_argument("--input", help="trace file (ingest) or comma-separated phase tables (fitdelay)")
    p.add_argument("--frames", type=int, default=8, help="frames to synthesise")
    p.add_argument("--frame-length", type=int, help="samples per frame when ingesting CSV")
    p.add_argument("--noise-floor", type=float, default=0.0, help="white noise std per sample")
    p.add_argument("--noise-rad", type=float, default=0.0, help="phase noise of synthetic tables")
    p.add_argument("--csv", action="store_true", help="also write the trace as CSV")
    p.set_defaults(func=cmd_traces)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericalAccuracy, CompileFailure) as exc:
        print(f"cvcluster: numerical accuracy failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CVClusterError, OSError) as exc:
        print(f"cvcluster: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
