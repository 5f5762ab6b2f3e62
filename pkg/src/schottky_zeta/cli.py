"""Command-line interface: ``schottky-zeta <subcommand> [options]``."""
from __future__ import annotations

import os

# pin BLAS to one thread before numpy loads so results never depend on it
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, CorruptRecord, NumericalError, SchottkyError
from .store import RunCache, RunConfig, RunRecord, sha256_file, tool_version

log = logging.getLogger("schottky_zeta")

SUBCOMMANDS = ("validate", "dim", "pressure", "lengths", "cover", "zeta", "grid",
               "scan", "count", "tau", "weyl", "report")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def clean(x):
    """Round floats to 12 significant digits for stable JSON."""
    if isinstance(x, dict):
        return {str(k): clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [clean(x.real), clean(x.imag)]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return float(f"{x:.12g}") if math.isfinite(x) else str(x)
    return x


def write_csv(path: Path, header: list[str], rows) -> Path:
    lines = [",".join(header)] + [",".join(v if isinstance(v, str) else fmt(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(clean(data), sort_keys=True, indent=2) + "\n")
    return path


# ------------------------------------------------------------ pipelines

def _group(cfg: RunConfig):
    from .geometry import parse_fixture

    return parse_fixture(cfg["group"])


def _delta(g):
    from .dynamics import hausdorff_dimension

    return hausdorff_dimension(g)


def _op(cfg) -> dict:
    op = cfg["operator"]
    return {"K": op["K"], "K_refined": op["K_refined"], "refine_above": op["refine_above"], "M": op["M"]}


def do_validate(cfg, out):
    g = _group(cfg)
    return {"validate.json": write_json(out / "validate.json", {
        "valid": True, "p": g.p, "r_min": g.r_min, "margins": list(g.margins), "group": g.to_json()})}


def _dim_data(cfg, g):
    d = _delta(g)
    return {"delta": d.delta, "residual": d.residual, "K": d.K, "method": d.method}


def do_dim(cfg, out):
    return {"dim.json": write_json(out / "dim.json", _dim_data(cfg, _group(cfg)))}


def do_pressure(cfg, out):
    from .dynamics import pressure_eig, pressure_orbit

    g, p = _group(cfg), cfg["pressure"]
    rows = [(s, pressure_eig(g, s, p["K"]), pressure_orbit(g, s, p["n_orbit"]), p["n_orbit"], p["K"])
            for s in p["sigmas"]]
    return {"pressure.csv": write_csv(out / "pressure.csv", ["sigma", "p_eig", "p_orbit", "n", "K"], rows)}


def do_lengths(cfg, out):
    from .dynamics import periodic_orbits

    g = _group(cfg)
    orbits = [o for n in range(1, cfg["lengths"]["n_max"] + 1) for o in periodic_orbits(g, n)]
    orbits.sort(key=lambda o: (round(o.geodesic_length, 10), o.word))
    rows = [(o.geodesic_length, "-".join(map(str, o.word)), o.primitive) for o in orbits]
    return {"lengths.csv": write_csv(out / "lengths.csv", ["length", "word", "primitive"], rows)}


def do_cover(cfg, out):
    from .bergman import refined_cover

    g = _group(cfg)
    rows = []
    for h in cfg["cover"]["h"]:
        c = refined_cover(g, h)
        rows.append((h, c.size, c.max_diam))
    return {"cover.csv": write_csv(out / "cover.csv", ["h", "N_h", "max_diam"], rows)}


def do_zeta(cfg, out):
    from .zeta import euler_cutoff_for_words, zeta_det, zeta_euler, zeta_trace_exp

    g, z = _group(cfg), cfg["zeta"]
    s = complex(z["re"], z["im"])
    if z["method"] == "det":
        v = zeta_det(g, s, **_op(cfg))
    elif z["method"] == "trace":
        v = zeta_trace_exp(g, s, z["q_max"])
    else:
        v = zeta_euler(g, s, euler_cutoff_for_words(g, z["word_cutoff"]))
    data = {"s": s, "value": v.value, "log_abs": v.log_abs, "method": v.method, "truncation": v.truncation}
    return {"zeta.json": write_json(out / "zeta.json", data)}


def do_grid(cfg, out):
    from .zeta import log_zeta_grid

    g, gr = _group(cfg), cfg["grid"]
    grid = log_zeta_grid(g, tuple(gr["rect"]), tuple(gr["spacing"]), n=gr["n"], threads=cfg["threads"], **_op(cfg))
    rows = [(s, t, grid.log_abs[i, j], grid.arg[i, j])
            for i, s in enumerate(grid.sigmas) for j, t in enumerate(grid.ts)]
    return {"grid.csv": write_csv(out / "grid.csv", ["sigma", "t", "log_abs", "arg"], rows)}


def _scan(cfg, g):
    from .resonances import Rect, locate_zeros

    sc = cfg["scan"]
    return locate_zeros(g, Rect(*sc["rect"]), sc["tol"], threads=cfg["threads"], **_op(cfg))


def _scan_rows(scan):
    rows = [(z.s.real, z.s.imag, z.multiplicity, z.newton_residual, z.box_id) for z in scan.zeros]
    rows += [(u.rect.center.real, u.rect.center.imag, u.count, "inf", "unresolved:" + u.box_id)
             for u in scan.unresolved]
    return rows


def do_scan(cfg, out):
    scan = _scan(cfg, _group(cfg))
    return {"scan.csv": write_csv(out / "scan.csv", ["re", "im", "multiplicity", "residual", "box_id"],
                                  _scan_rows(scan))}


def _strip_sigmas(cfg, key, delta):
    sig = cfg[key]["sigmas"]
    return sig if sig is not None else [float(x) for x in np.linspace(delta / 2, delta, 4)]


def _counts(cfg, g, key="count"):
    from .resonances import strip_counts

    delta = _delta(g).delta
    return strip_counts(g, _strip_sigmas(cfg, key, delta), cfg[key]["Ts"], threads=cfg["threads"], **_op(cfg))


def _count_rows(counts):
    return [(c.sigma, c.T, c.N, c.M, c.lower, c.upper) for c in counts]


def do_count(cfg, out):
    rows = _count_rows(_counts(cfg, _group(cfg)))
    return {"count.csv": write_csv(out / "count.csv", ["sigma", "T", "N", "M", "lower", "upper"], rows)}


def _tau(cfg, g):
    from .resonances import tau_curve

    t = cfg["tau"]
    return tau_curve(g, t["nu"], None, cfg["pressure"]["K"], t["n_grid"])


def do_tau(cfg, out):
    tc = _tau(cfg, _group(cfg))
    rows = [(s, t, tc.nu) for s, t in tc.samples]
    meta = {"nu": tc.nu, "delta": tc.delta, "derivative_at_half": tc.derivative_at_half,
            "theta_bar": tc.metadata["theta_bar"], "theta_word_length": tc.metadata["theta_word_length"],
            "epsilon": [[s, e] for s, e in tc.metadata["epsilon"].items()]}
    return {"tau.csv": write_csv(out / "tau.csv", ["sigma", "tau", "nu"], rows),
            "tau.json": write_json(out / "tau.json", meta)}


def do_weyl(cfg, out):
    from .resonances import flag_weyl, weyl_fit

    g = _group(cfg)
    fits = flag_weyl(weyl_fit(_counts(cfg, g, "weyl")), _delta(g).delta)
    rows = [(s, f["exponent"], f["residual"], f["flagged"]) for s, f in fits.items()]
    return {"weyl.csv": write_csv(out / "weyl.csv", ["sigma", "exponent", "residual", "flagged"], rows)}


def do_report(cfg, out):
    g = _group(cfg)
    tc = _tau(cfg, g)
    scan = _scan(cfg, g)
    counts = _counts(cfg, g)
    data = {
        "dim": _dim_data(cfg, g),
        "tau": {"nu": tc.nu, "derivative_at_half": tc.derivative_at_half, "samples": tc.samples},
        "scan": {"rect": [scan.rect.re0, scan.rect.re1, scan.rect.im0, scan.rect.im1], "total": scan.total,
                 "zeros": [{"s": z.s, "multiplicity": z.multiplicity, "residual": z.newton_residual,
                            "box_id": z.box_id} for z in scan.zeros],
                 "unresolved": [{"rect": [u.rect.re0, u.rect.re1, u.rect.im0, u.rect.im1], "count": u.count,
                                 "box_id": u.box_id} for u in scan.unresolved]},
        "count": [dict(zip(["sigma", "T", "N", "M", "lower", "upper"], r)) for r in _count_rows(counts)],
    }
    return {"report.json": write_json(out / "report.json", data)}


PIPELINES = {name: globals()[f"do_{name}"] for name in SUBCOMMANDS}


def run(subcommand: str, config: RunConfig, use_cache: bool = True, cache: RunCache | None = None) -> RunRecord:
    """Execute one subcommand, write its outputs and manifest, and return the record."""
    if subcommand not in PIPELINES:
        raise ConfigInvalid(f"unknown subcommand {subcommand!r}", "subcommand")
    cache = cache or RunCache()
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    key = config.run_key(subcommand)
    t0 = time.perf_counter()
    if use_cache:
        try:
            prior = cache.lookup(key)
        except CorruptRecord as exc:
            log.warning("cache entry %s discarded: %s", key[:12], exc)
            prior = None
        if prior is not None:
            cache.restore(key, prior, out)
            rec = RunRecord(key, subcommand, tool_version(), prior.outputs,
                            time.perf_counter() - t0, config.data, cached=True)
            (out / f"{subcommand}.manifest.json").write_text(rec.to_json())
            return rec
    files = PIPELINES[subcommand](config, out)
    outputs = {name: sha256_file(path) for name, path in sorted(files.items())}
    rec = RunRecord(key, subcommand, tool_version(), outputs, time.perf_counter() - t0, config.data)
    if use_cache:
        cache.store(key, rec, files)
    (out / f"{subcommand}.manifest.json").write_text(rec.to_json())
    return rec


# ------------------------------------------------------------ argument parsing

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; its values override flags")
    common.add_argument("--group", help="fixture string (cylinder:t=1, symmetric:p=2) or group JSON path")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--no-cache", action="store_true", help="neither read nor write the run cache")
    common.add_argument("--K", type=int, help="Bergman basis size per disc")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="schottky-zeta", description=__doc__)
    sub = p.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common], help=f"run the {name} pipeline")
        if name == "zeta":
            sp.add_argument("--re", type=float)
            sp.add_argument("--im", type=float)
            sp.add_argument("--method", choices=["det", "trace", "euler"])
        if name in ("grid", "scan", "report"):
            sp.add_argument("--rect", type=float, nargs=4, metavar=("RE0", "RE1", "IM0", "IM1"))
        if name == "grid":
            sp.add_argument("--spacing", type=float, nargs=2, metavar=("DSIGMA", "DT"))
        if name in ("count", "weyl", "report"):
            sp.add_argument("--T", type=float, nargs="+", dest="Ts")
            sp.add_argument("--sigma", type=float, nargs="+", dest="sigmas")
        if name in ("tau", "report"):
            sp.add_argument("--nu", type=float)
    return p


def _flags(args) -> dict:
    f: dict = {}
    for key in ("group", "out", "threads"):
        if getattr(args, key, None) is not None:
            f[key] = getattr(args, key)
    if args.K is not None:
        f["operator"] = {"K": args.K}
        f["pressure"] = {"K": args.K}
    sub = args.subcommand
    if sub == "zeta":
        z = {k: getattr(args, k) for k in ("re", "im", "method") if getattr(args, k) is not None}
        if z:
            f["zeta"] = z
    rect = getattr(args, "rect", None)
    if rect is not None:
        f["grid" if sub == "grid" else "scan"] = {"rect": list(rect)}
    if getattr(args, "spacing", None) is not None:
        f.setdefault("grid", {})["spacing"] = list(args.spacing)
    target = "weyl" if sub == "weyl" else "count"
    for key in ("Ts", "sigmas"):
        if getattr(args, key, None) is not None:
            f.setdefault(target, {})[key] = list(getattr(args, key))
    if getattr(args, "nu", None) is not None:
        f["tau"] = {"nu": args.nu}
    return f


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        flags = _flags(args)
        cfg = RunConfig.from_file(args.config, flags) if args.config else RunConfig.build(flags)
        rec = run(args.subcommand, cfg, use_cache=not args.no_cache)
    except ConfigInvalid as exc:
        print(f"schottky-zeta: invalid config: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, SchottkyError) as exc:
        print(f"schottky-zeta: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name in rec.outputs:
        print(Path(cfg["out"]) / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
