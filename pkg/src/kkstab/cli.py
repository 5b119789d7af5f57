"""Command-line experiment runner.

Subcommands: spectrum, evolve, energy, schwarzschild, geodesic, verify.
Option precedence: command-line flag > KKSTAB_* environment variable >
config-file key > built-in default.  Every run writes its resolved
configuration and the tool version beside its outputs; outputs are
byte-stable for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import energy as energy_mod
from . import evolve as evolve_mod
from . import fields, internal, schwarzschild

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2


class ConfigError(Exception):
    """Configuration could not be parsed or resolved."""


# Defaults per subcommand; every key is also a flag and a KKSTAB_ env var.
DEFAULTS = {
    "spectrum": {"d": 2, "periods": "1,1", "lmax": 5, "spectrum_file": ""},
    "evolve": {"n": 9, "lam": 0.0, "t_end": 100.0, "dr": 1.0 / 64,
               "eps": 0.0, "seed": 0, "workers": 1, "slice_s": ""},
    "energy": {"n": 9, "lam": 0.0, "t_end": 40.0, "dr": 1.0 / 32,
               "slice_s": "4,8,16", "d": 2, "seed": 0, "workers": 1},
    "schwarzschild": {"n": 9, "cs": 0.1, "r_lo": 20.0, "r_hi": 200.0,
                      "samples": 12},
    "geodesic": {"n": 9, "cs": 0.1, "d": 2, "r0": 10.0, "lam_end": 1000.0},
    "verify": {"suite": "trivial", "workers": 1},
}


def _parse_value(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def resolve_config(sub: str, args: argparse.Namespace) -> dict:
    """Merge flags, environment, config file, and defaults for `sub`."""
    defaults = DEFAULTS[sub]
    file_vals: dict[str, str] = {}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            read = cp.read(args.config)
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
        if not read:
            raise ConfigError(f"config file not found: {args.config}")
        for section in ("common", sub):
            if cp.has_section(section):
                file_vals.update(cp[section])
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        env = os.environ.get("KKSTAB_" + key.upper())
        if flag is not None:
            out[key] = flag
        elif env is not None:
            out[key] = _parse_value(env, default)
        elif key in file_vals:
            try:
                out[key] = _parse_value(file_vals[key], default)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            out[key] = default
    return out


def _float_list(raw: str) -> list[float]:
    return [float(tok) for tok in raw.split(",") if tok.strip()]


def write_resolved(outdir: Path, sub: str, cfg: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"[{sub}]"]
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, float):
            lines.append(f"{key} = {val:.17g}")
        else:
            lines.append(f"{key} = {val}")
    lines.append("")
    lines.append("[tool]")
    lines.append(f"version = {__version__}")
    (outdir / "resolved-config.ini").write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1,
                               default=energy_mod._jsonable) + "\n")


# ---------------------------------------------------------------------------
# Subcommand bodies


def cmd_spectrum(cfg: dict, outdir: Path) -> int:
    if cfg["spectrum_file"]:
        data = internal.parse_spectrum_file(cfg["spectrum_file"])
    else:
        periods = tuple(_float_list(cfg["periods"]))
        torus = internal.FlatTorus(periods)
        lmax = int(cfg["lmax"])
        cutoff = 4 * np.pi ** 2 * lmax ** 2 * sum(1.0 / L ** 2
                                                  for L in periods) + 1e-9
        spec = internal.lichnerowicz_spectrum(torus, cutoff)
        data = internal.SpectralData(
            modes=tuple((e.lam, e.multiplicity) for e in spec.entries),
            d=spec.d)
    internal.write_spectrum_file(outdir / "spectrum.txt", data)
    stable, lam_min = internal.is_linearly_stable(data)
    _write_json(outdir / "spectrum-report.json", {
        "d": data.d, "n_modes": len(data.modes),
        "min_eigenvalue": float(lam_min),
        "linearly_stable": bool(stable),
    })
    return EXIT_OK if stable else EXIT_ASSERTION


def cmd_evolve(cfg: dict, outdir: Path) -> int:
    n, lam = int(cfg["n"]), float(cfg["lam"])
    slice_s = _float_list(cfg["slice_s"])
    config = evolve_mod.EvolutionConfig(
        n=n, dr=float(cfg["dr"]), t_end=float(cfg["t_end"]),
        nonlinearity="quasilinear-toy" if float(cfg["eps"]) > 0 else "linear",
        eps=float(cfg["eps"]), store_history=True,
        workers=int(cfg["workers"]))
    if float(cfg["eps"]) > 0:
        result = evolve_mod.evolve_quasilinear_toy(
            config, lam=lam, slice_s=slice_s or None)
    else:
        result = evolve_mod.evolve_kg_radial(
            lam, n, None, config, slice_s=slice_s or None)
    evolve_mod.write_monitor_csv(outdir / "monitors.csv", result.monitors)
    if result.field is not None:
        fields.write_snapshot(outdir / "final-field.bin", result.field)
    report = {"n": n, "lam": lam, "t_end": config.t_end,
              "blowup_time": result.blowup_time}
    t = result.monitors["t"]
    sup = result.monitors["sup"]
    mask = (t >= max(20.0, config.t_end / 10)) & (sup > 0)
    if mask.sum() >= 10 and t[mask][-1] / t[mask][0] >= 4.0:
        fit = energy_mod.decay_fit(t[mask], sup[mask])
        report["decay_exponent"] = fit.exponent
        report["decay_exponent_ci"] = [fit.ci_low, fit.ci_high]
    _write_json(outdir / "evolve-report.json", report)
    return EXIT_OK if result.blowup_time is None else EXIT_ASSERTION


def cmd_energy(cfg: dict, outdir: Path) -> int:
    n, lam = int(cfg["n"]), float(cfg["lam"])
    slice_s = _float_list(cfg["slice_s"]) or [4.0, 8.0, 16.0]
    config = evolve_mod.EvolutionConfig(
        n=n, dr=float(cfg["dr"]), t_end=float(cfg["t_end"]),
        workers=int(cfg["workers"]))
    result = evolve_mod.evolve_kg_radial(lam, n, None, config,
                                         slice_s=slice_s)
    energies = {s: energy_mod.hyperboloidal_energy(data)
                for s, data in sorted(result.slices.items())}
    vals = np.array(list(energies.values()))
    drift = float(vals.ptp() / vals.max()) if vals.max() > 0 else 0.0
    params = energy_mod.SobolevParams.from_dims(n, int(cfg["d"]))
    rows = energy_mod.estimate_suite(result.slices, params)
    energy_mod.write_estimate_csv(outdir / "estimates.csv", rows)
    report = energy_mod.EnergyReport(
        s_grid=list(energies),
        energies={s: float(e) for s, e in energies.items()},
        estimate_rows=rows)
    energy_mod.write_report(outdir / "energy-report.json", report)
    return EXIT_OK if drift <= 0.05 else EXIT_ASSERTION


def cmd_schwarzschild(cfg: dict, outdir: Path) -> int:
    params = schwarzschild.SchwarzschildParams(int(cfg["n"]), float(cfg["cs"]))
    chart = schwarzschild.HarmonicChart(params)
    radii = np.geomspace(float(cfg["r_lo"]), float(cfg["r_hi"]),
                         int(cfg["samples"]))
    eta = np.diag([-1.0] + [1.0] * params.n)
    rows = []
    for r in radii:
        mp = schwarzschild.harmonic_metric(params, r, chart=chart)
        dev = float(np.max(np.abs(mp.g - eta)))
        v = schwarzschild.wave_gauge_residual(params, float(r), chart=chart)
        rows.append((float(r), dev, float(np.max(np.abs(v)))))
    with open(outdir / "gauge.csv", "w") as fh:
        fh.write("r,metric_deviation,wave_gauge_residual\n")
        for r, dev, vr in rows:
            fh.write(f"{r:.17g},{dev:.17g},{vr:.17g}\n")
    devs = np.array([row[1] for row in rows])
    fit = energy_mod.decay_fit(radii, devs)
    _write_json(outdir / "schwarzschild-report.json", {
        "n": params.n, "cs": params.cs,
        "deviation_exponent": fit.exponent,
        "expected_exponent": -(params.n - 2),
    })
    ok = abs(fit.exponent + (params.n - 2)) < 0.1
    return EXIT_OK if ok else EXIT_ASSERTION


def cmd_geodesic(cfg: dict, outdir: Path) -> int:
    params = schwarzschild.SchwarzschildParams(int(cfg["n"]), float(cfg["cs"]))
    chart = schwarzschild.HarmonicChart(params)
    d = int(cfg["d"])
    r0 = float(cfg["r0"])
    mp = schwarzschild.harmonic_metric(params, r0, chart=chart)
    # outgoing radial null velocity: -f vt^2 + g_rr vr^2 = 0
    vr = 1.0
    vt = float(np.sqrt(mp.g[1, 1] / (-mp.g[0, 0]))) * vr
    init = schwarzschild.GeodesicState(
        t=0.0, x=np.concatenate([[r0], np.zeros(params.n - 1)]),
        v_t=vt, v_x=np.concatenate([[vr], np.zeros(params.n - 1)]),
        torus=np.zeros(d), v_torus=np.zeros(d))
    traj = schwarzschild.integrate_geodesic(
        params, init, float(cfg["lam_end"]), chart=chart,
        exterior_probe=True)
    schwarzschild.write_trajectory_csv(outdir / "trajectory.csv", traj, chart)
    drift = float(np.max(np.abs(traj.velocity_norm(chart))))
    r = traj.r
    drdt = np.gradient(r, traj.t)
    _write_json(outdir / "geodesic-report.json", {
        "captured": traj.captured, "final_r": float(r[-1]),
        "final_drdt": float(drdt[-1]), "norm_drift": drift,
        "t_monotone": bool(np.all(np.diff(traj.t) > 0)),
    })
    ok = drift <= 1e-8 * traj.lam[-1] + 1e-12 and np.all(np.diff(traj.t) > 0)
    return EXIT_OK if ok else EXIT_ASSERTION


def cmd_verify(cfg: dict, outdir: Path) -> int:
    """Fast structural checks; suite `trivial` runs in seconds."""
    if cfg["suite"] != "trivial":
        raise ConfigError(f"unknown verify suite {cfg['suite']!r}")
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append({"name": name, "ok": True})
        except Exception as exc:  # report, don't crash the suite
            checks.append({"name": name, "ok": False, "error": str(exc)})

    def _spectrum():
        torus = internal.FlatTorus((1.0, 1.0))
        cutoff = 4 * np.pi ** 2 * 9 + 1e-9
        spec = internal.lichnerowicz_spectrum(torus, cutoff,
                                              per_component=True)
        oracle = sorted(
            4 * np.pi ** 2 * (k1 ** 2 + k2 ** 2)
            for k1 in range(-3, 4) for k2 in range(-3, 4)
            if k1 ** 2 + k2 ** 2 <= 9)
        got = sorted(np.repeat([e.lam for e in spec.entries],
                               [e.multiplicity for e in spec.entries]))
        assert len(got) == len(oracle)
        assert np.allclose(got, oracle, atol=1e-8)

    def _snapshot_roundtrip():
        cfg0 = evolve_mod.EvolutionConfig(n=3, dr=1.0 / 16, t_end=6.0)
        res = evolve_mod.evolve_kg_radial(0.0, 3, None, cfg0)
        path = outdir / "roundtrip.bin"
        fields.write_snapshot(path, res.field)
        back = fields.read_snapshot(path)
        assert np.array_equal(back.u, res.field.u)

    def _metric_identity():
        params = schwarzschild.SchwarzschildParams(9, 1.0)
        mp = schwarzschild.schwarzschild_metric(params, 10.0)
        assert mp.lorentzian_signature()
        r = schwarzschild.to_harmonic_chart(params, 10.0)
        assert abs(r - 9.9999995) < 1e-12

    def _flat_gauge():
        params = schwarzschild.SchwarzschildParams(5, 0.0)
        v = schwarzschild.wave_gauge_residual(params, 10.0)
        assert np.max(np.abs(v)) == 0.0

    def _hyperboloid():
        slc = __import__("kkstab.geometry", fromlist=["make_slice"]) \
            .make_slice(4.0, 3, 1.0 / 32)
        t, r = slc.t, slc.r
        assert np.allclose(t ** 2 - r ** 2, 16.0)

    check("torus-spectrum-oracle", _spectrum)
    check("snapshot-roundtrip", _snapshot_roundtrip)
    check("schwarzschild-metric", _metric_identity)
    check("flat-wave-gauge", _flat_gauge)
    check("hyperboloid-embedding", _hyperboloid)

    _write_json(outdir / "verify-report.json",
                {"suite": cfg["suite"], "checks": checks,
                 "ok": all(c["ok"] for c in checks)})
    return EXIT_OK if all(c["ok"] for c in checks) else EXIT_ASSERTION


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kkstab",
        description="Numerical stability laboratory for product spacetimes")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)
    flag_types = {"periods": str, "spectrum_file": str, "slice_s": str,
                  "suite": str}
    for sub, defaults in DEFAULTS.items():
        sp = subs.add_parser(sub)
        sp.add_argument("--config", default=None,
                        help="INI config file (sections [common] and "
                             f"[{sub}])")
        sp.add_argument("--out", "-o", default=None,
                        help="output directory (default: kkstab-<sub>)")
        for key, dval in defaults.items():
            typ = flag_types.get(key, type(dval))
            flag = "--" + key.replace("_", "-")
            if key == "lam":
                sp.add_argument("--lambda", dest="lam", type=float,
                                default=None)
            else:
                sp.add_argument(flag, dest=key, type=typ, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    sub = args.subcommand
    try:
        cfg = resolve_config(sub, args)
    except ConfigError as exc:
        print(f"kkstab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outdir = Path(args.out or f"kkstab-{sub}")
    try:
        write_resolved(outdir, sub, cfg)
        handler = {"spectrum": cmd_spectrum, "evolve": cmd_evolve,
                   "energy": cmd_energy, "schwarzschild": cmd_schwarzschild,
                   "geodesic": cmd_geodesic, "verify": cmd_verify}[sub]
        return handler(cfg, outdir)
    except internal.SpectrumFileError as exc:
        print(f"kkstab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"kkstab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
