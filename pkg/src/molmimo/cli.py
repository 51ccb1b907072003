"""Command-line experiment harness.

    molmimo characterize --config exp.yaml
    molmimo fit          --config exp.yaml
    molmimo sir          --config exp.yaml
    molmimo ber          --config exp.yaml [--mode multinomial]
    molmimo sweep-thresholds --config exp.yaml

Every output file starts with ``# config_hash=...`` and ``# seed=...`` lines.
Exit codes: 0 success, 2 configuration error, 3 numeric or fit failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import analytic_thresholds
from .channel_model import (
    ChannelModel,
    FitError,
    ModelParams,
    channel_from_rows,
    fit,
    read_params_csv,
    sir,
    taps,
    write_params_csv,
)
from .config import ConfigError, ExperimentConfig, load
from .link_sim import SWEEP_GRID, run_ber_many, sweep_curve, sweep_thresholds
from .particle_sim import (
    EmpiricalCdf,
    SimParams,
    characterize,
    read_cdf_csv,
    write_cdf_csv,
)
from .topology import LinkId, Topology

log = logging.getLogger("molmimo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericFailure(RuntimeError):
    pass


def _tag(top: Topology) -> str:
    return f"d{top.d:g}_h{top.h:g}_r{top.r_r:g}"


def _write_rows(path: Path, columns, rows, header: dict) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})


def cmd_characterize(cfg: ExperimentConfig, out: Path, workers: int = 1) -> list[Path]:
    ps = cfg.particle_sim
    grid = cfg.fit.time_grid()
    if ps.n_molecules == 0:
        log.warning("n_molecules = 0: writing empty CDF datasets")
    paths, summary = [], []
    for top in cfg.topology.grid():
        params = SimParams(ps.n_molecules, dt=ps.dt, t_end=ps.t_end, seed=cfg.seed,
                           emitter=1, mode=ps.mode, jump_factor=ps.jump_factor,
                           block_size=ps.block_size)
        cdfs, records = characterize(top, params, grid, workers=workers,
                                     both_emitters=ps.both_emitters)
        path = out / f"cdf_{_tag(top)}.csv"
        write_cdf_csv(path, cdfs, {**cfg.header(), **{k: v for k, v in top.as_dict().items()}})
        paths.append(path)
        for tx, rec in records.items():
            c = rec.counts()
            log.info("%s tx%d: %s", _tag(top), tx, c)
            summary.append({"d": top.d, "h": top.h, "r_r": top.r_r, "emitter": tx,
                            "n_molecules": len(rec), **c,
                            "conserved": sum(c.values()) == len(rec)})
    _write_rows(out / "characterize_summary.csv",
                ["d", "h", "r_r", "emitter", "n_molecules", "absorbed_1", "absorbed_2",
                 "free", "conserved"], summary, cfg.header())
    return paths


def _pooled(cdfs: dict, links) -> EmpiricalCdf:
    present = [cdfs[l] for l in links if l in cdfs]
    base = present[0]
    values = np.mean([c.values for c in present], axis=0)
    return EmpiricalCdf(base.link, base.times, values, sum(c.n_total for c in present))


def cmd_fit(cfg: ExperimentConfig, out: Path, cdf_dir: Path | None = None) -> list[dict]:
    cdf_dir = cdf_dir or out
    rows, fig2 = [], []
    failed = []
    for top in cfg.topology.grid():
        path = cdf_dir / f"cdf_{_tag(top)}.csv"
        if not path.exists():
            raise ConfigError(f"missing CDF dataset {path}; run characterize first")
        cdfs = read_cdf_csv(path)
        if cfg.fit.symmetric:
            targets = {
                "F11": _pooled(cdfs, [LinkId(1, 1), LinkId(2, 2)]),
                "F12": _pooled(cdfs, [LinkId(1, 2), LinkId(2, 1)]),
            }
        else:
            targets = {l.label: cdfs[l] for l in sorted(cdfs)}
        for name, cdf in targets.items():
            try:
                res = fit(cdf, top.r_r, top.surface_distance, top.D,
                          cfg.fit.initial_guess, bounds=cfg.fit.bounds())
            except FitError as exc:
                raise NumericFailure(str(exc)) from exc
            if not res.converged:
                failed.append(f"{_tag(top)} {name}: {res.message}")
            b1, b2, b3 = res.params.as_tuple()
            row = {"d": top.d, "h": top.h, "r_r": top.r_r, "D": top.D, "function": name,
                   "b1": b1, "b2": b2, "b3": b3, "rmse": res.rmse, "nfev": res.nfev,
                   "converged": res.converged, "t_max": res.t_max, "n_points": res.n_points}
            rows.append(row)
            if name == "F11":
                fig2.append({"h": top.h, "r_r": top.r_r, "d": top.d, "b1": b1, "b2": b2, "b3": b3})
    write_params_csv(out / "fit_params.csv", rows, cfg.header())
    fig2.sort(key=lambda r: (r["h"], r["r_r"], r["d"]))
    _write_rows(out / "fit_vs_distance.csv", ["h", "r_r", "d", "b1", "b2", "b3"], fig2, cfg.header())
    if failed:
        raise NumericFailure("fit did not converge: " + "; ".join(failed))
    return rows


def _channels(cfg: ExperimentConfig, params_path: Path) -> dict:
    if not params_path.exists():
        raise ConfigError(f"missing {params_path}; run fit first")
    rows = read_params_csv(params_path)
    out = {}
    for top in cfg.topology.grid():
        try:
            out[_tag(top)] = channel_from_rows(rows, top)
        except KeyError:
            continue
    return out, rows


def cmd_sir(cfg: ExperimentConfig, out: Path, params_path: Path | None = None) -> list[dict]:
    channels, _ = _channels(cfg, params_path or out / "fit_params.csv")
    rows = []
    for ch in channels.values():
        top = ch.topology
        for t_s in cfg.sweep.sir_t_s:
            rows.append({"d": top.d, "h": top.h, "r_r": top.r_r, "D": top.D,
                         "t_s": float(t_s), "sir": sir(ch, float(t_s))})
    rows.sort(key=lambda r: (r["d"], r["h"], r["r_r"], r["t_s"]))
    _write_rows(out / "sir.csv", ["d", "h", "r_r", "D", "t_s", "sir"], rows, cfg.header())
    return rows


def _selected_channel(cfg: ExperimentConfig, params_path: Path) -> ChannelModel:
    if not params_path.exists():
        raise ConfigError(f"missing {params_path}; run fit first")
    return channel_from_rows(read_params_csv(params_path), cfg.topology.selected_topology())


def _sweep_points(cfg: ExperimentConfig):
    base = cfg.link_config()
    q1_pts = [("Q1", base.replace(Q1=int(q))) for q in cfg.sweep.Q1]
    ts_pts = [("t_s", base.replace(t_s=float(t))) for t in cfg.sweep.t_s]
    return q1_pts + ts_pts


BER_COLUMNS = ["detector", "Q1", "t_s", "ber_mean", "ber_std", "n_bits", "reps", "seed"]


def _trends(tables: dict) -> dict:
    """Decades of BER improvement from the first to the last sweep point.

    A zero BER is floored at one error in the simulated bits so the figure
    stays finite; ``per_step`` divides by the number of grid steps.
    """
    out = {}
    for sweep, rows in tables.items():
        for det in dict.fromkeys(r["detector"] for r in rows):
            pts = [r for r in rows if r["detector"] == det]
            if len(pts) < 2:
                continue
            floor = 1.0 / (2 * pts[0]["n_bits"] * pts[0]["reps"])
            first, last = (max(p["ber_mean"], floor) for p in (pts[0], pts[-1]))
            dec = math.log10(first / last)
            out.setdefault(sweep, {})[det] = {"decades": dec, "per_step": dec / (len(pts) - 1)}
    return out


def cmd_ber(cfg: ExperimentConfig, out: Path, params_path: Path | None = None,
            workers: int = 1) -> dict:
    channel = _selected_channel(cfg, params_path or out / "fit_params.csv")
    tables = {"Q1": [], "t_s": []}
    meta_points = []
    for sweep, lc in _sweep_points(cfg):
        results = run_ber_many(lc, cfg.sweep.detectors, channel, workers=workers)
        for r in results:
            tables[sweep].append(r.row())
            meta_points.append({"sweep": sweep, **r.row(), "threshold": r.threshold,
                                "per_replication": r.per_replication,
                                "genie_fallbacks": r.genie_fallbacks})
    for sweep, rows in tables.items():
        _write_rows(out / f"ber_{sweep.lower().replace('_', '')}.csv", BER_COLUMNS, rows, cfg.header())
    meta = {
        **cfg.header(),
        "trends": _trends(tables),
        "version": __version__,
        "config": cfg.as_dict(),
        "channel": {"own": channel.own.as_tuple(), "cross": channel.cross.as_tuple(),
                    "topology": channel.topology.as_dict()},
        "points": meta_points,
    }
    with open(out / "ber_meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")
    return tables


def cmd_sweep_thresholds(cfg: ExperimentConfig, out: Path,
                         params_path: Path | None = None) -> list[dict]:
    channel = _selected_channel(cfg, params_path or out / "fit_params.csv")
    grid = cfg.sweep.grid()
    curve_rows, optima, analytic = [], [], []
    fixed_total = np.zeros(grid.size)
    seen = set()
    for _, lc in _sweep_points(cfg):
        key = (lc.Q1, lc.t_s)
        if key in seen:
            continue
        seen.add(key)
        A, B = taps(channel, lc.t_s, lc.L)
        th = analytic_thresholds(lc.Q1, A, B, lc.pi1, lc.sigma_n_sq, lc.L)
        pp, ap = th["practical_pair"], th["adaptive_pair"]
        g = th["practical"]
        analytic.append({"Q1": lc.Q1, "t_s": lc.t_s, "A0": float(A[0]),
                         "mu0": g.mu0, "sigma0_sq": g.sigma0_sq, "mu1": g.mu1,
                         "sigma1_sq": g.sigma1_sq,
                         "practical_eta_minus": pp.eta_minus, "practical_eta_plus": pp.eta_plus,
                         "adaptive_eta_minus": ap.eta_minus, "adaptive_eta_plus": ap.eta_plus})
        for kind in cfg.sweep.detectors:
            best, ber = sweep_thresholds(lc, kind, channel, grid)
            if kind == "fixed" and lc.t_s == cfg.link_config().t_s:
                fixed_total += ber
            optima.append({"detector": kind, "Q1": lc.Q1, "t_s": lc.t_s,
                           "best_eta": best, "best_ber": float(ber.min())})
            for eta, b in zip(grid, ber):
                curve_rows.append({"detector": kind, "Q1": lc.Q1, "t_s": lc.t_s,
                                   "eta": float(eta), "ber": float(b)})
    hdr = cfg.header()
    _write_rows(out / "threshold_sweep.csv", ["detector", "Q1", "t_s", "eta", "ber"],
                curve_rows, hdr)
    _write_rows(out / "threshold_optima.csv",
                ["detector", "Q1", "t_s", "best_eta", "best_ber"], optima, hdr)
    _write_rows(out / "thresholds_analytic.csv", list(analytic[0]) if analytic else [],
                analytic, hdr)
    if "fixed" in cfg.sweep.detectors and fixed_total.any():
        n_q = sum(1 for q in cfg.sweep.Q1)
        avg = fixed_total / max(n_q, 1)
        _write_rows(out / "fixed_q1_average.csv", ["eta", "ber"],
                    [{"eta": float(e), "ber": float(b)} for e, b in zip(grid, avg)], hdr)
    return optima


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="molmimo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("characterize", "fit", "sir", "ber", "sweep-thresholds"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, help="output directory (overrides config)")
        s.add_argument("--seed", type=int, help="master seed (overrides config)")
        s.add_argument("--mode", choices=["binomial-taps", "multinomial"])
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            s.add_argument("--cdf-dir", type=Path, help="where characterize wrote its CSVs")
        if name in ("sir", "ber", "sweep-thresholds"):
            s.add_argument("--params", type=Path, help="fit_params.csv to use")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load(args.config, seed=args.seed, mode=args.mode)
        out = args.out or Path(cfg.output.get("dir", "results"))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "characterize":
            cmd_characterize(cfg, out, workers=args.workers)
        elif args.command == "fit":
            cmd_fit(cfg, out, args.cdf_dir)
        elif args.command == "sir":
            cmd_sir(cfg, out, args.params)
        elif args.command == "ber":
            cmd_ber(cfg, out, args.params, workers=args.workers)
        else:
            cmd_sweep_thresholds(cfg, out, args.params)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
