"""Command-line pipeline: simulate, preprocess, extract, train, eval, map, sweep.

Exit codes: 0 ok, 1 configuration or validation error, 2 I/O error, 3 numerical
failure.  Logs go to standard error; results go to standard output or files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .align import (AlignedFrame, CsvFormatError, TimedSeries, align, format_ns, format_value,
                    ns_to_seconds, read_frame_csv, read_series_csv, synchronize, write_frame_csv,
                    write_series_csv)
from .config import ConfigError, RunConfig
from .core import (LearningSchedule, ModelConfig, NumericalError, PatternWindow, fit_online,
                   load_checkpoint, save_checkpoint)
from .evaluation import (energy_report, fit_energy_map, pattern_matrix, per_pattern_energy,
                         perplexity, predict_energy, sample_corpus, write_pgm,
                         write_proportions_csv)
from .features import (feature_names, iter_raw_csv, make_feature_stream, write_raw_csv)

log = logging.getLogger("onlineglda")


class IOFailure(Exception):
    """Wraps an OS-level failure with a readable message (exit code 2)."""


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {p}: {exc.strerror}") from None
    return p


def _need_path(value, key):
    if not value:
        raise ConfigError(f"{key}: no path given on the command line or in the config")
    return value


# -- data loading -------------------------------------------------------------

def load_windows(path, rc: RunConfig, columns=None, scaling=None):
    """Read a feature CSV and cut it into pattern windows of ``rc.n`` rows.

    Returns ``(windows, raw_windows, columns)``; ``windows`` are standardised with
    ``scaling = (mean, scale)`` when given, ``raw_windows`` keep the original units.
    """
    frame = read_frame_csv(path)
    names = frame.names
    if columns is not None and list(columns) != names:
        raise ConfigError(f"{path}: columns {names} (F={len(names)}) do not match the model's "
                          f"{list(columns)} (F={len(columns)})")
    X = frame.matrix()
    times = ns_to_seconds(frame.timestamps)
    T = X.shape[0] // rc.n
    raw, scaled = [], []
    for j in range(T):
        rows = slice(j * rc.n, (j + 1) * rc.n)
        raw.append(PatternWindow(X[rows], start_time=float(times[j * rc.n]), span=rc.n * rc.R))
        Z = X[rows] if scaling is None else (X[rows] - scaling[0]) / scaling[1]
        scaled.append(PatternWindow(Z, start_time=float(times[j * rc.n]), span=rc.n * rc.R))
    if not scaled:
        raise ConfigError(f"{path}: {X.shape[0]} rows is fewer than one pattern window (n={rc.n})")
    return scaled, raw, names


def _fit_scaling(path, rc: RunConfig):
    frame = read_frame_csv(path)
    X = frame.matrix()
    usable = X[: (X.shape[0] // rc.n) * rc.n]
    if not rc.standardize or usable.shape[0] == 0:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = usable.mean(axis=0)
    scale = usable.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def _load_model(path):
    try:
        model_cfg, state, extra = load_checkpoint(path)
    except (KeyError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid checkpoint ({exc})") from None
    scaling = (np.array(extra["mean"]), np.array(extra["scale"]))
    return model_cfg, state, extra, scaling


def _train(windows, rc: RunConfig, schedule, batch_size, iters, callback=None):
    F = windows[0].F
    model_cfg = rc.model_config(F, len(windows))
    if batch_size > model_cfg.corpus_size_D:
        raise ConfigError(f"BS: batch size {batch_size} exceeds corpus size D={model_cfg.corpus_size_D}")
    state = fit_online(windows, model_cfg, schedule, batch_size, iters, rc.seed, tol=rc.tol,
                       max_iter=rc.max_iter, callback=callback, init=rc.init)
    return model_cfg, state


# -- commands -----------------------------------------------------------------

def cmd_simulate(rc: RunConfig, out) -> int:
    out = _out_dir(_need_path(out or rc.out, "out"))
    if rc.sim_mode == "raw":
        return _simulate_raw(rc, out)
    F = rc.F or 2
    model_cfg = rc.model_config(F, rc.sim_D)
    gen_cfg = ModelConfig(K=model_cfg.K, F=F, alpha=model_cfg.alpha, prior_m=model_cfg.prior_m,
                          prior_omega=model_cfg.prior_omega, prior_s=rc.sim_s,
                          prior_v=model_cfg.prior_v, corpus_size_D=1)
    corpus = sample_corpus(gen_cfg, rc.sim_D + rc.sim_heldout_D, rc.n, rc.seed, feature_seconds=rc.R)
    names = [f"x{j}" for j in range(F)]
    splits = {"train.csv": range(rc.sim_D), "heldout.csv": range(rc.sim_D, rc.sim_D + rc.sim_heldout_D)}
    for fname, idx in splits.items():
        X = np.vstack([corpus.docs[d].observations for d in idx])
        ts = np.rint(np.arange(X.shape[0]) * rc.R * 1e9).astype(np.int64) + \
            int(round(idx[0] * rc.n * rc.R * 1e9))
        write_frame_csv(AlignedFrame(ts, {c: X[:, j] for j, c in enumerate(names)}), out / fname)
    with open(out / "latent_theta.csv", "w") as fh:
        fh.write(",".join(["window", *(f"c{k}" for k in range(model_cfg.K))]) + "\n")
        for d, row in enumerate(corpus.true_theta):
            fh.write(",".join([str(d), *(format_value(x) for x in row)]) + "\n")
    with open(out / "latent_z.csv", "w") as fh:
        fh.write("window,index,z\n")
        for d, z in enumerate(corpus.true_z):
            fh.writelines(f"{d},{i},{int(k)}\n" for i, k in enumerate(z))
    comps = [{"mean": mu.tolist(), "cov": cov.tolist()} for mu, cov in corpus.true_components]
    with open(out / "components.json", "w") as fh:
        json.dump(comps, fh, indent=1)
        fh.write("\n")
    log.info("wrote %d training and %d held-out windows to %s", rc.sim_D, rc.sim_heldout_D, out)
    return 0


def _simulate_raw(rc: RunConfig, out: Path) -> int:
    from .synth import APPLIANCES, simulate_raw

    sim = simulate_raw(rc.sim_seconds, rc.rate, rc.seed)
    write_raw_csv(out / "raw.csv", sim.t_ns, sim.voltage, sim.current)
    write_series_csv(TimedSeries("water", sim.water_t_ns, sim.water), out / "water.csv")
    write_series_csv(TimedSeries("temperature", sim.temp_t_ns, sim.temp), out / "temperature.csv")
    with open(out / "schedule.csv", "w") as fh:
        fh.write(",".join(["slot_start", "activity", *(a[0] for a in APPLIANCES)]) + "\n")
        for j, row in enumerate(sim.schedule):
            start = int(sim.t_ns[0]) + int(j * sim.slot_seconds * 1e9)
            fh.write(",".join([format_ns(start), str(int(sim.activity[j])), *map(str, row)]) + "\n")
    log.info("wrote %.0f s of raw signal at %g Hz to %s", rc.sim_seconds, rc.rate, out)
    return 0


def _parse_pairs(items, flag):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"{flag} expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_preprocess(rc: RunConfig, streams, shifts, out) -> int:
    """Synchronise each stream with its clock shift, then align them into one frame."""
    out = _need_path(out or rc.out, "out")
    paths = _parse_pairs(streams, "--stream")
    if not paths:
        raise ConfigError("preprocess needs at least one --stream name=path")
    shift = {k: float(v) for k, v in _parse_pairs(shifts, "--shift").items()}
    unknown = set(shift) - set(paths)
    if unknown:
        raise ConfigError(f"--shift names unknown streams {sorted(unknown)}")
    series = []
    for name, path in paths.items():
        s = read_series_csv(path, name=name)
        if shift.get(name):
            s = synchronize(s, shift[name])
        series.append(s)
    frame = align(series)
    write_frame_csv(frame, out)
    log.info("aligned %d streams into %d rows", len(series), len(frame))
    return 0


def cmd_extract(rc: RunConfig, raw_path, exogenous, out) -> int:
    """Electrical features per R-second window, joined with exogenous streams."""
    raw_path = _need_path(raw_path or rc.data, "data")
    out = _need_path(out or rc.out, "out")
    bands = rc.band_spec()
    feats = list(make_feature_stream(iter_raw_csv(raw_path), rc.rate, rc.R, bands))
    if not feats:
        raise ConfigError(f"{raw_path}: fewer samples than one {rc.R} s window")
    names = feature_names(bands)
    elec = TimedSeries("electricity", [f.timestamp for f in feats],
                       np.array([[f.active_power, f.reactive_power, *f.band_rms] for f in feats]),
                       tuple(names))
    others = [read_series_csv(p, name=n) for n, p in _parse_pairs(exogenous, "--exogenous").items()]
    frame = align([elec, *others], reference="electricity")
    # water first, then electricity, then the remaining streams
    order = [c for c in frame.names if c == "water"] + names + \
        [c for c in frame.names if c != "water" and c not in names]
    write_frame_csv(AlignedFrame(frame.timestamps, {c: frame.columns[c] for c in order}), out)
    log.info("extracted %d feature vectors (%d columns)", len(frame), len(order))
    return 0


def cmd_train(rc: RunConfig, data, model_out, trace=None) -> int:
    data = _need_path(data or rc.data, "data")
    model_out = _need_path(model_out or rc.model, "model")
    scaling = _fit_scaling(data, rc)
    windows, _, names = load_windows(data, rc, scaling=scaling)
    records = []

    def report(rec):
        records.append(rec)
        log.info("t=%d rho=%.6g batch=%s elbo=%.6f", rec.t, rec.rho,
                 ",".join(map(str, rec.batch)), rec.elbo)

    model_cfg, state = _train(windows, rc, rc.schedule(), rc.BS, rc.T, report)
    extra = {"columns": names, "mean": scaling[0].tolist(), "scale": scaling[1].tolist(),
             "n": rc.n, "R": rc.R}
    try:
        save_checkpoint(model_out, model_cfg, state, extra)
    except OSError as exc:
        raise IOFailure(f"cannot write checkpoint {model_out}: {exc.strerror}") from None
    if trace:
        with open(trace, "w") as fh:
            fh.write("t,rho,batch,elbo\n")
            for r in records:
                fh.write(f"{r.t},{format_value(r.rho)},{' '.join(map(str, r.batch))},{format_value(r.elbo)}\n")
        if records:
            from .plotting import plot_trace
            plot_trace([r.t for r in records], [r.elbo for r in records],
                       Path(trace).with_suffix(".png"))
    log.info("trained K=%d F=%d for %d iterations; checkpoint %s", model_cfg.K, model_cfg.F,
             state.t, model_out)
    return 0


def _model_windows(rc, model_path, data_path):
    model_cfg, state, extra, scaling = _load_model(model_path)
    rc = rc.replace(n=extra.get("n", rc.n), R=extra.get("R", rc.R))
    windows, raw, names = load_windows(data_path, rc, columns=extra["columns"], scaling=scaling)
    return rc, model_cfg, state, windows, raw, names


def cmd_eval(rc: RunConfig, model, heldout, out_dir=None) -> int:
    model = _need_path(model or rc.model, "model")
    heldout = _need_path(heldout or rc.heldout, "heldout")
    rc, model_cfg, state, windows, _, _ = _model_windows(rc, model, heldout)
    value = perplexity(windows, state, model_cfg, rc.tol, rc.max_iter)
    print(repr(value))
    if out_dir:
        out = _out_dir(out_dir)
        pm = pattern_matrix(windows, state, model_cfg.alpha, rc.tol, rc.max_iter)
        write_pgm(pm, out / "patterns.pgm")
        write_proportions_csv(pm, out / "proportions.csv")
        from .plotting import plot_pattern_matrix
        plot_pattern_matrix(pm, out / "patterns.png")
    return 0


def cmd_map(rc: RunConfig, model, data, out_dir, apply_to=None) -> int:
    """Fit per-component energy on ``data``; report on ``apply_to`` when given."""
    model = _need_path(model or rc.model, "model")
    data = _need_path(data or rc.data, "data")
    out = _out_dir(_need_path(out_dir or rc.out, "out"))
    rc, model_cfg, state, windows, raw, names = _model_windows(rc, model, data)
    if rc.power_column not in names:
        raise ConfigError(f"power_column: {rc.power_column!r} is not among the data columns {names}")
    col = names.index(rc.power_column)
    A = pattern_matrix(windows, state, model_cfg.alpha, rc.tol, rc.max_iter).values.T
    b = per_pattern_energy(raw, col, rc.R)
    emap = fit_energy_map(A, b)
    heading = f"energy map fitted on {Path(data).name}"
    if apply_to:
        _, _, _, windows, raw, _ = _model_windows(rc, model, apply_to)
        A = pattern_matrix(windows, state, model_cfg.alpha, rc.tol, rc.max_iter).values.T
        b = per_pattern_energy(raw, col, rc.R)
        heading += f", applied to {Path(apply_to).name}"
    estimated = predict_energy(A, emap)
    times = [w.start_time for w in raw]
    with open(out / "energy_report.txt", "w") as fh:
        fh.write(energy_report(emap, b, estimated, times, heading))
    with open(out / "energy.csv", "w") as fh:
        fh.write("time,computed,estimated\n")
        for t, c, e in zip(times, b, estimated):
            fh.write(f"{format_value(t)},{format_value(c)},{format_value(e)}\n")
    from .plotting import plot_energy
    plot_energy(times, b, estimated, out / "energy.png")
    log.info("energy map residual norm %.6g", emap.residual_norm)
    return 0


def cmd_sweep(rc: RunConfig, data, heldout, out) -> int:
    """Held-out perplexity over the (kappa, tau0, BS) grid.

    With ``budget > 0`` every run processes the same number of windows
    (``budget // BS`` iterations); otherwise every run does ``T`` iterations.
    """
    data = _need_path(data or rc.data, "data")
    heldout = _need_path(heldout or rc.heldout, "heldout")
    out = _need_path(out or rc.out, "out")
    scaling = _fit_scaling(data, rc)
    windows, _, names = load_windows(data, rc, scaling=scaling)
    held, _, _ = load_windows(heldout, rc, columns=names, scaling=scaling)
    rows = []
    for kappa in rc.sweep_kappa:
        for tau0 in rc.sweep_tau0:
            for bs in rc.sweep_BS:
                iters = rc.budget // bs if rc.budget else rc.T
                model_cfg, state = _train(windows, rc, LearningSchedule(kappa, tau0), bs, iters)
                value = perplexity(held, state, model_cfg, rc.tol, rc.max_iter)
                log.info("kappa=%g tau0=%g BS=%d iters=%d perplexity=%.6g", kappa, tau0, bs, iters, value)
                rows.append((kappa, tau0, bs, value))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kappa", "tau0", "BS", "perplexity"])
        for kappa, tau0, bs, value in rows:
            w.writerow([format_value(kappa), format_value(tau0), bs, format_value(value)])
    from .plotting import plot_sweep
    plot_sweep(rows, Path(out).with_suffix(".png"))
    return 0


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a sub-command's defaults from clobbering flags given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="onlineglda", parents=[common],
                                     description="Online Gaussian LDA pattern mining for utility data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic corpus or raw signal")
    p.add_argument("out", nargs="?", help="output directory")

    p = sub.add_parser("preprocess", parents=[common], help="synchronise and align stream CSVs")
    p.add_argument("out", nargs="?", help="aligned CSV to write")
    p.add_argument("--stream", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--shift", action="append", default=[], metavar="NAME=SECONDS",
                   help="total clock shift spread over the stream's samples")

    p = sub.add_parser("extract", parents=[common], help="electrical features from a raw signal CSV")
    p.add_argument("raw", nargs="?", help="CSV with header timestamp,voltage,current")
    p.add_argument("out", nargs="?", help="feature CSV to write")
    p.add_argument("--exogenous", action="append", default=[], metavar="NAME=PATH")

    p = sub.add_parser("train", parents=[common], help="fit online GLDA")
    p.add_argument("data", nargs="?", help="feature CSV")
    p.add_argument("model", nargs="?", help="checkpoint to write")
    p.add_argument("--trace", help="per-iteration CSV (a PNG is written next to it)")

    p = sub.add_parser("eval", parents=[common], help="held-out perplexity and pattern images")
    p.add_argument("model", nargs="?")
    p.add_argument("heldout", nargs="?")
    p.add_argument("--out-dir", help="write patterns.pgm, proportions.csv and patterns.png here")

    p = sub.add_parser("map", parents=[common], help="least-squares energy per component")
    p.add_argument("model", nargs="?")
    p.add_argument("data", nargs="?")
    p.add_argument("out", nargs="?", help="report directory")
    p.add_argument("--apply", help="feature CSV to predict on with the fitted map")

    p = sub.add_parser("sweep", parents=[common], help="perplexity over a kappa/tau0/BS grid")
    p.add_argument("data", nargs="?")
    p.add_argument("heldout", nargs="?")
    p.add_argument("out", nargs="?", help="CSV to write (a PNG is written next to it)")
    return parser


def _dispatch(args, rc: RunConfig) -> int:
    c = args.command
    if c == "simulate":
        return cmd_simulate(rc, args.out)
    if c == "preprocess":
        return cmd_preprocess(rc, args.stream, args.shift, args.out)
    if c == "extract":
        return cmd_extract(rc, args.raw, args.exogenous, args.out)
    if c == "train":
        return cmd_train(rc, args.data, args.model, args.trace)
    if c == "eval":
        return cmd_eval(rc, args.model, args.heldout, args.out_dir)
    if c == "map":
        return cmd_map(rc, args.model, args.data, args.out, args.apply)
    return cmd_sweep(rc, args.data, args.heldout, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        overrides = cfgmod.parse_overrides(getattr(args, "set", []))
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        rc = cfgmod.load(getattr(args, "config", None), overrides)
        return _dispatch(args, rc)
    except (ConfigError, CsvFormatError) as exc:
        log.error("%s", exc)
        return 1
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except IOFailure as exc:
        log.error("%s", exc)
        return 2
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 2
    except ValueError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
