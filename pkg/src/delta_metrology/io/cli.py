"""Command-line entry point.

    delta-metrology simulate   [--config run.toml] [--seed N] [--out DIR] [--format csv|packed]
    delta-metrology fit-spectrum SPECTRUM.csv
    delta-metrology map        SCAN
    delta-metrology quantify   SCAN [--reference REF_SCAN]
    delta-metrology snr        [SCAN]
    delta-metrology wl-fit     --perp F [--parallel F] [--tilt F] [--n VALUE[+-ERR]]
    delta-metrology hall       RXY.csv [--sigma-sheet VALUE[+-ERR]]
    delta-metrology thickness  --L-phi .. --L .. --n .. --gamma ..
    delta-metrology compare    --before A.json [..] --after B.json [..]
    delta-metrology report     [--quantify Q.json] [--hall H.json] [--wl W.json] [--compare C.json]

Each command writes ``<out>/<command>.json``.  Failures exit with the code of
the error class (2 parse, 3 fit, 4 calibration, 5 config, 6 domain) and a
JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from .._jit import set_threads
from ..core import Measurement
from ..errors import ConfigError, DeltaMetrologyError, ParseError
from ..transport import (WlParams, compare_runs, fit_parallel, fit_perp, fit_tilt,
                         hall_analysis, thickness)
from ..transport.hall import COMPARED, RunSummary
from ..xrf import (activation, calibrate_reference, fit_grid, fit_spectrum, mean_amplitude,
                   pixel_mask, quantify_map, region_density, simulate_scan, snr)
from ..xrf import presets
from .config import RunConfig, load_config
from .formats import (parse_spectrum_file, parse_transport_file, read_scan, write_map_csv,
                      write_scan)
from .pgm import write_pgm
from .report import (load_report, measurement_from, new_report, quantity, summary_table,
                     write_report)

THREADS_ENV = "DELTA_METROLOGY_THREADS"
COMMANDS = ("simulate", "fit-spectrum", "map", "quantify", "snr", "wl-fit", "hall",
            "thickness", "compare", "report")
UNITS = dict(COMPARED)
UNITS["L_hall"] = "nm"


def parse_measurement(text) -> Measurement:
    """'1.31e14', '1.31e14+-3e12', '1.31e14+/-3e12' or '1.31e14,3e12'."""
    parts = re.split(r"\+/?-|,", text.strip(), maxsplit=1)
    try:
        value = float(parts[0])
        error = float(parts[1]) if len(parts) > 1 else 0.0
        return Measurement(value, error)
    except (ValueError, DeltaMetrologyError):
        raise argparse.ArgumentTypeError(f"expected VALUE or VALUE+-ERROR, got {text!r}")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _workers(args):
    n = args.threads
    if n is None and os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    if n is not None and n < 1:
        raise ConfigError("--threads must be >= 1")
    set_threads(n)
    return n


def _out_dir(args, cfg: RunConfig):
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map_files(out, stem, values, errors, flags, grid_like, meta, unit):
    meta = dict(meta, unit=unit)
    write_map_csv(out / f"{stem}.csv", values, errors, flags,
                  (grid_like.pitch_x, grid_like.pitch_y), grid_like.origin, meta)
    vmin, vmax = write_pgm(out / f"{stem}.pgm", values,
                           comment=f"{stem} [{unit}], y increases upward")
    return {"csv": f"{stem}.csv", "pgm": f"{stem}.pgm",
            "pgm_black": quantity(vmin, unit), "pgm_white": quantity(vmax, unit)}


def _grid_fit(grid, cfg: RunConfig, workers):
    a = cfg["analysis"]
    return fit_grid(grid, cfg.fit_templates, cfg.scatter, a["background_order"],
                    a["window_keV"], workers, a["weighting"])


def _strongest_line(template, beam):
    lines = template.excited_lines(beam.photon_energy)
    if not lines:
        return None
    return max(lines, key=lambda l: l.relative_intensity * l.transmission)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args, cfg, report, out, workers):
    sc = cfg["scan"]
    layout = cfg.layout()
    grid = simulate_scan(layout, cfg.beam, cfg.detector, sc["nx"], sc["ny"], cfg.pitch,
                         cfg.seed, sc["origin_um"], sc["noise"])
    name = "scan" if args.format == "csv" else "scan.dmscan"
    write_scan(out / name, grid, args.format)
    total = grid.counts.sum(axis=-1)
    flags = np.zeros(total.shape, dtype=bool)
    previews = {"total": _map_files(out, "preview_total", total, np.sqrt(total), flags, grid,
                                    {"quantity": "total counts"}, "counts")}
    el = cfg["analysis"]["element"]
    line = _strongest_line(layout.templates.get(el), cfg.beam) if el in layout.templates else None
    if line is not None:
        half = 1.5 * cfg.detector.fwhm(line.energy)
        centers = 0.5 * (grid.bin_edges[1:] + grid.bin_edges[:-1])
        roi = np.abs(centers - line.energy) <= half
        win = grid.counts[..., roi].sum(axis=-1)
        previews[el] = _map_files(out, f"preview_{el}", win, np.sqrt(win), flags, grid,
                                  {"quantity": f"{el} {line.label} window counts"}, "counts")
    report["results"] = {
        "scan": {"path": name, "format": args.format, "nx": grid.nx, "ny": grid.ny,
                 "pitch_x": quantity(grid.pitch_x, "um"), "pitch_y": quantity(grid.pitch_y, "um"),
                 "conditions_fingerprint": grid.fingerprint()},
        "mean_total_counts": quantity(float(total.mean()), "counts"),
        "previews": previews,
    }
    return f"simulated {grid.nx}x{grid.ny} scan -> {out / name}"


def cmd_fit_spectrum(args, cfg, report, out, workers):
    spec = parse_spectrum_file(args.spectrum)
    a = cfg["analysis"]
    res = fit_spectrum(spec, cfg.fit_templates, cfg.beam, cfg.detector, cfg.scatter,
                       a["background_order"], a["window_keV"], weighting=a["weighting"])
    report["results"] = {
        "amplitudes": {k: quantity(m, "counts") for k, m in res.amplitudes.items()},
        "scatter": {k: quantity(m, "counts") for k, m in res.scatter.items()},
        "reduced_chi2": quantity(res.reduced_chi2, "1"),
        "energy_range": [quantity(e, "keV") for e in res.energy_range],
    }
    return "\n".join(f"{k}: {m}" for k, m in res.amplitudes.items())


def cmd_map(args, cfg, report, out, workers):
    grid = read_scan(args.scan)
    gf = _grid_fit(grid, cfg, workers)
    maps = {}
    lines = []
    for el in [n for n, k in zip(gf.names, gf.kinds) if k == "element"]:
        em = gf.element_map(el)
        meta = {"element": el, "quantity": "amplitude", "fingerprint": em.fingerprint}
        files = _map_files(out, f"map_{el}", em.values, em.errors, em.flags, em, meta, "counts")
        ok = ~em.flags
        mean = mean_amplitude(em) if ok.any() else None
        maps[el] = dict(files, mean=None if mean is None else quantity(mean, "counts"),
                        failed_pixels=int(em.flags.sum()))
        lines.append(f"{el}: mean {mean} counts")
    report["results"] = {"maps": maps, "failed_pixels": int(gf.failed.sum()),
                         "failure_causes": {f"{ix},{iy}": c
                                            for (ix, iy), c in sorted(gf.causes().items())}}
    return "\n".join(lines)


def _reference_grid(args, cfg, scan_grid):
    ref = cfg["reference"]
    path = args.reference or (cfg._resolve(ref["scan"]) if ref["scan"] else None)
    if path is not None:
        return read_scan(path), str(path)
    layout = presets.reference_layout(ref["density_cm2"], cfg.templates)
    grid = simulate_scan(layout, scan_grid.beam, scan_grid.detector, ref["nx"], ref["ny"],
                         ref["pitch_um"], ref["seed"], ref["origin_um"])
    return grid, None


def cmd_quantify(args, cfg, report, out, workers):
    grid = read_scan(args.scan)
    el = cfg["analysis"]["element"]
    ref_grid, ref_path = _reference_grid(args, cfg, grid)
    if ref_path:
        report["inputs"].update(new_report("", inputs=[ref_path])["inputs"])
    ref_map = _grid_fit(ref_grid, cfg, workers).element_map(el)
    ref = cfg["reference"]
    cal = calibrate_reference(mean_amplitude(ref_map),
                              Measurement(ref["density_cm2"], ref["density_error_cm2"]), el,
                              ref_grid.fingerprint())
    dmap = quantify_map(_grid_fit(grid, cfg, workers).element_map(el), cal)
    meta = {"element": el, "quantity": "areal density", "fingerprint": dmap.fingerprint}
    files = _map_files(out, f"density_{el}", dmap.values, dmap.errors, dmap.flags, dmap, meta,
                       "cm^-2")
    region = cfg.region()
    mask = None if region is None else pixel_mask(dmap, region)
    rd = region_density(dmap, mask)
    results = {
        "element": el,
        "calibration": {"factor": quantity(cal.factor, "cm^-2/count", cal.factor * cal.rel_error),
                        "reference": "simulated" if ref_path is None else ref_path},
        "region_um": None if region is None else [quantity(v, "um") for v in region],
        "n_xrf": quantity(rd.value, "cm^-2", rd.error),
        "n_xrf_counting_error": quantity(rd.counting_error, "cm^-2"),
        "n_xrf_calibration_error": quantity(rd.calibration_error, "cm^-2"),
        "pixels": rd.n_pixels,
        "map": files,
    }
    n_hall = cfg.measurement("transport", "n_cm2", "n_error_cm2")
    if n_hall is not None:
        results["activation"] = quantity(activation(Measurement(rd.value, rd.error), n_hall), "%")
    report["results"] = results
    return f"n_xrf({el}) = {rd.value:.4g} +/- {rd.error:.2g} cm^-2 over {rd.n_pixels} pixels"


def _trace_values(grid, cfg, workers):
    return _grid_fit(grid, cfg, workers).element_map(cfg["analysis"]["element"]).values.ravel()


def cmd_snr(args, cfg, report, out, workers):
    s = cfg["snr"]
    n = int(round(s["length_um"] / s["pitch_um"])) + 1
    if args.scan:
        grid = read_scan(args.scan)
        em = _grid_fit(grid, cfg, workers).element_map(cfg["analysis"]["element"])
        ys = grid.y_positions()
        xs = grid.x_positions()
        sel = (xs >= s["x_start_um"] - 1e-9) & (xs <= s["x_start_um"] + s["length_um"] + 1e-9)
        on = em.values[int(np.argmin(np.abs(ys - s["on_y_um"]))), sel]
        off = em.values[int(np.argmin(np.abs(ys - s["off_y_um"]))), sel]
        values = [snr(on, off)]
    else:
        layout = cfg.layout()
        values = []
        for k in range(s["seeds"]):
            traces = []
            for row, y in enumerate((s["on_y_um"], s["off_y_um"])):
                g = simulate_scan(layout, cfg.beam, cfg.detector, n, 1, s["pitch_um"],
                                  (cfg.seed + k, row), (s["x_start_um"], y))
                traces.append(_trace_values(g, cfg, workers))
            values.append(snr(*traces))
    med = float(np.median(values))
    report["results"] = {"snr_median": quantity(med, "1"),
                         "snr": [quantity(v, "1") for v in values],
                         "trace_points": n if not args.scan else int(on.size)}
    return f"SNR median {med:.3g} over {len(values)} trace pair(s)"


def _fit_section(fit):
    return {"value": fit.value, "chi2": quantity(fit.chi2, "1"), "dof": fit.dof,
            "flags": list(fit.flags)}


def cmd_wl_fit(args, cfg, report, out, workers):
    f = cfg["fit"]
    perp = parse_transport_file(args.perp)
    pf = fit_perp(perp, f["L_grid_nm"], f["L_phi_grid_nm"], f["rtol"], f["max_iter"])
    results = {"L": quantity(pf.L, "nm"), "L_phi": quantity(pf.L_phi, "nm"),
               "valid": pf.valid, "perp_reduced_chi2": quantity(pf.reduced_chi2, "1"),
               "perp_correlation": quantity(pf.correlation, "1"), "perp_starts": pf.starts}
    report["warnings"] += list(pf.warnings)
    gamma = p = t = None
    if args.parallel:
        par = fit_parallel(parse_transport_file(args.parallel))
        gamma = par.value
        results["gamma"] = quantity(gamma, "T^-2")
        results["parallel_reduced_chi2"] = quantity(par.reduced_chi2, "1")
        report["warnings"] += list(par.flags)
    if args.tilt:
        if gamma is None:
            raise ConfigError("--tilt needs --parallel (gamma enters the tilt model)")
        tf = fit_tilt(parse_transport_file(args.tilt), pf.L.value, pf.L_phi.value, gamma.value)
        p = tf.value
        results["p"] = quantity(p, "1")
        results["tilt_reduced_chi2"] = quantity(tf.reduced_chi2, "1")
    n = args.n or cfg.measurement("transport", "n_cm2", "n_error_cm2")
    if gamma is not None and n is not None:
        t = thickness(pf.L_phi, pf.L, n, gamma)
        results["t"] = quantity(t, "nm")
        results["n_used"] = quantity(n, "cm^-2")
    WlParams(pf.L, pf.L_phi, gamma, p, t)  # sign checks
    report["inputs"].update(new_report("", inputs=[x for x in (args.parallel, args.tilt) if x])
                            ["inputs"])
    report["results"] = results
    return "\n".join(f"{k} = {v['value']:.5g} +/- {v.get('error', 0):.2g} {v['unit']}"
                     for k, v in results.items() if k in ("L", "L_phi", "gamma", "p", "t"))


def cmd_hall(args, cfg, report, out, workers):
    sig = args.sigma_sheet or cfg.measurement("transport", "sigma_sheet_S", "sigma_sheet_error_S")
    if sig is None:
        raise ConfigError("hall needs --sigma-sheet or transport.sigma_sheet_S")
    h = hall_analysis(parse_transport_file(args.rxy), sig)
    report["results"] = {
        "n": quantity(h.n, "cm^-2"), "mu": quantity(h.mu, "cm^2/(V s)"),
        "L_hall": quantity(h.L, "nm"), "sigma_sheet": quantity(h.sigma_sheet, "S"),
        "slope": quantity(h.slope, "ohm/T"), "intercept": quantity(h.intercept, "ohm"),
        "reduced_chi2": quantity(h.reduced_chi2, "1"),
        "residual_rms": quantity(h.residual_rms, "ohm"),
    }
    return f"n = {h.n} cm^-2, mu = {h.mu} cm^2/Vs, L = {h.L} nm"


def cmd_thickness(args, cfg, report, out, workers):
    t = thickness(args.L_phi, args.L, args.n, args.gamma)
    report["results"] = {"t": quantity(t, "nm"), "L_phi": quantity(args.L_phi, "nm"),
                         "L": quantity(args.L, "nm"), "n": quantity(args.n, "cm^-2"),
                         "gamma": quantity(args.gamma, "T^-2")}
    return f"t = {t} nm"


@dataclass(frozen=True)
class _HallValues:
    n: Measurement = None
    mu: Measurement = None
    L: Measurement = None


def _run_from_reports(paths):
    merged = {}
    for p in paths:
        merged.update(load_report(p).get("results", {}))

    def get(key):
        e = merged.get(key)
        return measurement_from(e) if isinstance(e, dict) and "value" in e else None

    hall = _HallValues(get("n"), get("mu"), get("L_hall"))
    has_hall = hall.n is not None or hall.mu is not None
    wl = WlParams(get("L"), get("L_phi"), get("gamma"), get("p"), get("t"))
    return RunSummary(hall if has_hall else None, wl)


def cmd_compare(args, cfg, report, out, workers):
    before = _run_from_reports(args.before)
    after = _run_from_reports(args.after)
    rep = compare_runs(before, after, args.k)
    report["inputs"].update(new_report("", inputs=args.before + args.after)["inputs"])
    report["results"] = {
        "k": quantity(rep.k, "1"),
        "entries": {e.name: {"before": quantity(e.before, e.unit),
                             "after": quantity(e.after, e.unit),
                             "difference": quantity(e.difference, e.unit, e.combined_error),
                             "z": quantity(e.z, "1"), "consistent": e.consistent}
                    for e in rep.entries},
        "gaps": list(rep.gaps),
        "consistent": rep.consistent,
        "verdict": rep.verdict(),
    }
    if rep.thickness_difference_angstrom is not None:
        report["results"]["thickness_difference"] = quantity(rep.thickness_difference_angstrom,
                                                             "angstrom")
        report["results"]["thickness_precision"] = quantity(rep.thickness_precision_angstrom,
                                                            "angstrom")
    return rep.verdict()


def cmd_report(args, cfg, report, out, workers):
    res = {}
    q = load_report(args.quantify)["results"] if args.quantify else {}
    h = load_report(args.hall)["results"] if args.hall else {}
    w = load_report(args.wl)["results"] if args.wl else {}
    if "n_xrf" in q:
        res["n_xrf"] = q["n_xrf"]
    if "n" in h:
        res["n_hall"] = h["n"]
        res["mu"] = h["mu"]
    if "n_xrf" in res and "n_hall" in res:
        res["activation"] = quantity(activation(measurement_from(res["n_xrf"]),
                                                measurement_from(res["n_hall"])), "%")
    for key in ("L", "L_phi", "gamma", "p"):
        if key in w:
            res[key] = w[key]
    if "t" in w:
        res["t_mr"] = w["t"]
    for key, ekey, unit, name in (("n_stm_cm2", "n_stm_error_cm2", "cm^-2", "n_stm"),
                                  ("n_sims_cm2", "n_sims_error_cm2", "cm^-2", "n_sims"),
                                  ("t_sims_nm", "t_sims_error_nm", "nm", "t_sims")):
        m = cfg.measurement("external", key, ekey)
        if m is not None:
            res[name] = quantity(m, unit)
    if args.compare:
        c = load_report(args.compare)["results"]
        res["comparison"] = {"verdict": c.get("verdict"), "consistent": c.get("consistent")}
    report["inputs"].update(new_report("", inputs=[p for p in (args.quantify, args.hall,
                                                               args.wl, args.compare) if p])
                            ["inputs"])
    report["results"] = res
    table = summary_table(res)
    report["results"]["table"] = table.splitlines()
    return table


HANDLERS = {
    "simulate": cmd_simulate, "fit-spectrum": cmd_fit_spectrum, "map": cmd_map,
    "quantify": cmd_quantify, "snr": cmd_snr, "wl-fit": cmd_wl_fit, "hall": cmd_hall,
    "thickness": cmd_thickness, "compare": cmd_compare, "report": cmd_report,
}


def _input_paths(args):
    paths = []
    for name in ("spectrum", "scan", "perp", "rxy"):
        v = getattr(args, name, None)
        if v:
            paths.append(v)
    for p in paths:
        if not Path(p).exists():
            raise ParseError("file not found", p)
    return paths


def run_pipeline(cfg: RunConfig, command, args) -> tuple:
    """Execute one subcommand; returns (report dict, summary text)."""
    workers = _workers(args)
    out = _out_dir(args, cfg)
    report = new_report(command, cfg, _input_paths(args))
    if workers is not None:
        report["threads"] = workers
    text = HANDLERS[command](args, cfg, report, out, workers)
    write_report(out / f"{command}.json", report)
    return report, text


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--threads", type=int, help=f"worker threads (fallback ${THREADS_ENV})")
    common.add_argument("--format", choices=("csv", "packed"), default="csv",
                        help="scan container written by simulate")
    ap = argparse.ArgumentParser(prog="delta-metrology", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a raster scan")
    p = sub.add_parser("fit-spectrum", parents=[common], help="decompose one spectrum")
    p.add_argument("spectrum")
    p = sub.add_parser("map", parents=[common], help="per-element amplitude maps of a scan")
    p.add_argument("scan")
    p = sub.add_parser("quantify", parents=[common], help="calibrated density map")
    p.add_argument("scan")
    p.add_argument("--reference", help="reference scan (default: config or simulated)")
    p = sub.add_parser("snr", parents=[common], help="line-trace signal-to-noise")
    p.add_argument("scan", nargs="?")
    p = sub.add_parser("wl-fit", parents=[common], help="weak-localization fits")
    p.add_argument("--perp", required=True, help="perpendicular-field sweep")
    p.add_argument("--parallel", help="in-plane sweep")
    p.add_argument("--tilt", help="angle sweep at fixed |B|")
    p.add_argument("--n", type=parse_measurement, help="carrier density cm^-2 for thickness")
    p = sub.add_parser("hall", parents=[common], help="carrier density and mobility")
    p.add_argument("rxy")
    p.add_argument("--sigma-sheet", type=parse_measurement, help="zero-field sheet conductance S")
    p = sub.add_parser("thickness", parents=[common], help="layer thickness")
    for flag, unit in (("--L-phi", "nm"), ("--L", "nm"), ("--n", "cm^-2"), ("--gamma", "T^-2")):
        p.add_argument(flag, type=parse_measurement, required=True, help=f"VALUE[+-ERR] in {unit}")
    p = sub.add_parser("compare", parents=[common], help="before/after consistency")
    p.add_argument("--before", nargs="+", required=True)
    p.add_argument("--after", nargs="+", required=True)
    p.add_argument("--k", type=float, default=2.0, help="consistency threshold in sigma")
    p = sub.add_parser("report", parents=[common], help="density and thickness summary")
    for flag in ("--quantify", "--hall", "--wl", "--compare"):
        p.add_argument(flag)
    return ap


def error_record(exc) -> dict:
    rec = {"error": type(exc).__name__, "exit_code": getattr(exc, "exit_code", 1),
           "message": str(exc)}
    for attr in ("path", "line", "diagnostics", "names"):
        v = getattr(exc, attr, None)
        if v not in (None, {}, ()):
            rec[attr] = str(v) if attr == "path" else v
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        report, text = run_pipeline(cfg, args.command, args)
    except DeltaMetrologyError as exc:
        sys.stderr.write(json.dumps(error_record(exc), sort_keys=True, default=str) + "\n")
        return exc.exit_code
    print(text)
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
