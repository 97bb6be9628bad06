"""Command-line orchestration: ingest, fit, simulate, mc, diagnose, forecast.

Every run echoes its parsed options to ``config.json`` in the output
directory (without wall-clock state, so reruns are byte-identical) and
writes delimited outputs with documented headers; report commands also
render SVG figures next to them unless ``--no-plots`` is given.

Exit codes: 0 computed (including fits that report ``converged: false``),
2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, diagnostics, estimate, generators, plots, simulate
from .estimate import NU_GRIDS, FitResult
from .exceptions import BlsacdError, DataError, NumericError
from .generators import FAMILIES, GeneratorSpec
from .model import BiSeries, ModelSpec, ParamVector
from .simulate import _STUDY_TRUTH, McDesign

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_PAPER_SIZES = (500, 1000, 2000)
_PAPER_RHOS = (0.10, 0.25, 0.50, 0.75, 0.90)


# ---------------------------------------------------------------- helpers

def _fmt(value) -> str:
    """Shortest round-trip text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_config(args, out_dir: Path) -> None:
    skip = {"func"}
    options = {
        key: (str(v) if isinstance(v, Path) else v)
        for key, v in sorted(vars(args).items()) if key not in skip
    }
    _write_json(out_dir / "config.json", {
        "version": __version__, "options": options,
    })


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_orders(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError("orders must be four comma-separated integers")
    orders = tuple(int(p) for p in parts)
    if any(v < 0 for v in orders):
        raise ValueError("orders must be non-negative")
    return orders


def _parse_split(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        frac = float(num) / float(den)
    else:
        frac = float(text)
    if not 0.0 < frac < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    return frac


def _generator(args) -> GeneratorSpec:
    return GeneratorSpec(args.family, args.nu)


def _model_spec(args) -> ModelSpec:
    return ModelSpec(_generator(args), _parse_orders(args.orders))


def _load_series(path, columns: str = "auto") -> BiSeries:
    """Read a pair series CSV, resolving raw versus adjusted columns."""
    preference = {
        "auto": (("y1_adj", "y2_adj"), ("y1", "y2"), ("y1_raw", "y2_raw")),
        "adjusted": (("y1_adj", "y2_adj"),),
        "raw": (("y1_raw", "y2_raw"), ("y1", "y2")),
    }[columns]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        pair = next((p for p in preference if set(p) <= set(names)), None)
        if pair is None:
            raise DataError(
                f"no {columns} series columns among {names}", line=1
            )
        y1, y2, ts = [], [], []
        has_ts = "timestamp" in names
        for lineno, row in enumerate(reader, start=2):
            try:
                y1.append(float(row[pair[0]]))
                y2.append(float(row[pair[1]]))
                if has_ts:
                    ts.append(float(row["timestamp"]))
            except (TypeError, ValueError):
                raise DataError("unparseable series row", line=lineno) from None
    if not y1:
        raise DataError("no observations")
    try:
        return BiSeries(y1, y2, timestamps=ts if has_ts else None)
    except ValueError as err:
        raise DataError(str(err)) from None


def _params_from_payload(payload: dict, spec: ModelSpec) -> ParamVector:
    box = payload.get("result", payload)
    theta = box.get("theta_hat") if isinstance(box, dict) else None
    if theta is None:
        raise DataError("parameter file holds no theta_hat mapping")
    names = spec.param_names()
    missing = [n for n in names if n not in theta]
    if missing:
        raise DataError(f"parameter file lacks entries for {missing}")
    return ParamVector.from_array(
        np.array([float(theta[n]) for n in names]), spec
    )


def fit_result_from_json(payload: dict) -> FitResult:
    """Rebuild a :class:`FitResult` from a ``fit.json`` payload."""
    result = payload["result"]
    nu = payload.get("nu")
    if nu is None:
        nu = result.get("nu_hat")
    spec = ModelSpec(
        GeneratorSpec(payload["family"], nu), tuple(payload["orders"])
    )
    names = spec.param_names()
    params = ParamVector.from_array(
        np.array([float(result["theta_hat"][n]) for n in names]), spec
    )
    se = np.array([
        math.nan if result["se"][n] is None else float(result["se"][n])
        for n in names
    ])
    profile = payload.get("profile")
    return FitResult(
        spec=spec, params=params, se=se,
        loglik_at_max=result["loglik_at_max"], aic=result["aic"],
        bic=result["bic"], caic=result["caic"], nu_hat=result["nu_hat"],
        converged=result["converged"], iterations=result["iterations"],
        grad_norm_at_max=result["grad_norm_at_max"],
        presample_convention=result["presample_convention"],
        gradient_mode=result["gradient_mode"],
        profile=None if profile is None else tuple(
            (float(nu_), float(ll)) for nu_, ll in profile
        ),
    )


def _fit_payload(res: FitResult, n_obs: int, warnings_: list[str]) -> dict:
    return {
        "family": res.spec.generator.family,
        "nu": res.spec.generator.nu,
        "orders": list(res.spec.orders),
        "n_obs": n_obs,
        "result": res.to_json_dict(),
        "profile": None if res.profile is None else [
            [nu, ll] for nu, ll in res.profile
        ],
        "warnings": warnings_,
    }


def _nu_admissible(family: str, nu: float) -> bool:
    rng = generators._NU_RANGE.get(family)
    if rng is None:
        return False
    lo, hi, closed_hi = rng
    return lo < nu < hi or (closed_hi and nu == hi)


def _fit_one_family(family, nu, args, series, spec_orders):
    """Fit one family, profiling the shape parameter when it is free."""
    common = dict(
        gradient_mode=args.gradient_mode, burn_in=args.burn_in,
        n_starts=args.starts, seed=args.seed,
        count_nu_in_k=not args.ic_exclude_nu,
    )
    if family in NU_GRIDS and nu is None:
        grid = None
        if args.nu_grid is not None:
            kept = tuple(
                v for v in (float(s) for s in args.nu_grid.split(","))
                if _nu_admissible(family, v)
            )
            # one grid serves every family under --all-families; when it
            # misses a family's admissible range, use the default grid
            grid = kept if len(kept) >= 2 else None
        return estimate.fit_profile_nu(
            family, series, orders=spec_orders, nu_grid=grid, **common,
        )
    spec = ModelSpec(GeneratorSpec(family, nu), spec_orders)
    return estimate.fit(spec, series, **common)


def _under_identified(series, spec, warnings_: list[str]) -> None:
    k = spec.k_total + (1 if spec.generator.family in NU_GRIDS else 0)
    if series.n < 10 * k:
        warnings_.append(
            f"under-identified: {series.n} observations for {k} parameters"
        )


# ------------------------------------------------------------- subcommands

def cmd_ingest(args) -> int:
    out = _out_dir(args)
    tape = data.TradeTape.from_csv(args.input, session=args.session)
    pairs = data.build_pairs(tape, count_mode=args.count_mode)
    adjusted, (curve1, curve2) = data.diurnal_adjust(
        pairs, knot_every=60.0 * args.knot_minutes,
    )
    _write_csv(
        out / "pairs.csv",
        ["t", "timestamp", "y1_raw", "y2_raw", "y1_adj", "y2_adj"],
        (
            (t + 1, pairs.timestamps[t], pairs.y1[t], pairs.y2[t],
             adjusted.y1[t], adjusted.y2[t])
            for t in range(pairs.n)
        ),
    )
    curve_rows = [
        (margin, curve.knots[i], curve.values[i])
        for margin, curve in ((1, curve1), (2, curve2))
        for i in range(curve.knots.size)
    ]
    _write_csv(out / "seasonal.csv", ["margin", "knot_seconds", "factor"],
               curve_rows)
    _write_json(out / "stats.json", {
        "n_records": tape.n,
        "n_pairs": pairs.n,
        "count_mode": args.count_mode,
        "session": args.session,
        "y1_raw": data.describe(pairs.y1),
        "y2_raw": data.describe(pairs.y2),
        "y1_adj": data.describe(adjusted.y1),
        "y2_adj": data.describe(adjusted.y2),
    })
    _write_config(args, out)
    return EXIT_OK


def cmd_fit(args) -> int:
    out = _out_dir(args)
    series = _load_series(args.input, args.columns)
    orders = _parse_orders(args.orders)
    families = list(FAMILIES) if args.all_families else [args.family]

    rows = []
    for family in families:
        warnings_: list[str] = []
        probe = ModelSpec(
            GeneratorSpec(family, NU_GRIDS[family][0] if family in NU_GRIDS else None),
            orders,
        )
        _under_identified(series, probe, warnings_)
        for note in warnings_:
            print(f"warning: {family}: {note}", file=sys.stderr)
        nu_arg = args.nu
        if args.all_families and nu_arg is not None and not _nu_admissible(family, nu_arg):
            # a shared shape value cannot bind families it does not fit
            nu_arg = None
        try:
            res = _fit_one_family(family, nu_arg, args, series, orders)
        except NumericError as err:
            # an optimizer that found nothing is still a computed outcome;
            # bad input data keeps raising and exits through the data path
            print(f"warning: {family}: fit failed: {err}", file=sys.stderr)
            payload = {
                "family": family, "nu": nu_arg, "orders": list(orders),
                "n_obs": series.n, "result": None, "profile": None,
                "warnings": warnings_ + [f"fit failed: {err}"],
            }
            rows.append((family, math.nan, math.nan, math.nan, math.nan,
                         math.nan, False))
        else:
            payload = _fit_payload(res, series.n, warnings_)
            rows.append((
                family,
                math.nan if res.nu_hat is None else res.nu_hat,
                res.loglik_at_max, res.aic, res.bic, res.caic, res.converged,
            ))
            if res.profile is not None and not args.no_plots:
                plots.profile_plot(
                    out / f"profile_{family}.svg", res.profile, res.nu_hat,
                )
        name = f"fit_{family}.json" if args.all_families else "fit.json"
        _write_json(out / name, payload)

    if args.all_families:
        rows.sort(key=lambda r: (r[3] if math.isfinite(r[3]) else math.inf))
        _write_csv(
            out / "selection.csv",
            ["family", "nu", "loglik", "aic", "bic", "caic", "converged"],
            rows,
        )
    _write_config(args, out)
    return EXIT_OK


def _simulation_params(args, spec: ModelSpec) -> ParamVector:
    if args.params is not None:
        with open(args.params) as fh:
            return _params_from_payload(json.load(fh), spec)
    if spec.orders != (1, 1, 1, 1):
        raise ValueError(
            "built-in truth covers orders 1,1,1,1 only; pass --params"
        )
    if spec.generator.family in NU_GRIDS and spec.generator.nu is None:
        raise ValueError(f"{spec.generator.family} needs --nu to simulate")
    return ParamVector(rho=args.rho, **_STUDY_TRUTH)


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    spec = _model_spec(args)
    params = _simulation_params(args, spec)
    series = simulate.simulate_series(
        spec, params, args.T, np.random.default_rng(args.seed),
        burn_in=args.burn_in,
    )
    _write_csv(
        out / "series.csv", ["t", "y1", "y2"],
        ((t + 1, series.y1[t], series.y2[t]) for t in range(series.n)),
    )
    _write_config(args, out)
    return EXIT_OK


def cmd_mc(args) -> int:
    out = _out_dir(args)
    if args.paper_defaults:
        sizes = tuple(args.T) if args.T else _PAPER_SIZES
        rhos = tuple(args.rho) if args.rho else _PAPER_RHOS
        replications = args.replications if args.replications else 1000
    else:
        sizes = tuple(args.T) if args.T else (500,)
        rhos = tuple(args.rho) if args.rho else (0.5,)
        replications = args.replications if args.replications else 100
    spec = ModelSpec(_generator(args), (1, 1, 1, 1))
    design = McDesign(
        spec=spec, truth=ParamVector(rho=0.0, **_STUDY_TRUTH),
        sample_sizes=sizes, rho_grid=rhos, replications=replications,
        seed=args.seed, gradient_mode=args.gradient_mode,
        sim_burn_in=args.burn_in, fit_starts=args.starts,
        processes=args.threads,
    )
    report = simulate.run_mc_study(design)
    _write_csv(
        out / "mc_params.csv",
        ["n", "rho", "param", "mean", "bias", "rmse", "variance",
         "skewness", "kurtosis"],
        report.rows(),
    )
    _write_csv(
        out / "mc_residuals.csv",
        ["n", "rho", "n_ok", "n_failed", "mean", "sd", "skewness", "kurtosis"],
        (
            (c.n, c.rho, c.n_ok, c.n_failed,
             c.residual_stats["mean"], c.residual_stats["sd"],
             c.residual_stats["skewness"], c.residual_stats["kurtosis"])
            for c in report.cells
        ),
    )
    if not args.no_plots and len(sizes) > 1:
        plots.rmse_plot(out / "mc_rmse.svg", report)
    _write_config(args, out)
    return EXIT_OK


def _fit_or_load(args, series, out: Path):
    """Shared fit-or-load step for diagnose and forecast."""
    if args.params is not None:
        with open(args.params) as fh:
            payload = json.load(fh)
        if payload.get("result") is None:
            raise DataError("parameter file holds a failed fit")
        res = fit_result_from_json(payload)
        return res.spec, res.params, None
    res = _fit_one_family(args.family, args.nu, args, series,
                          _parse_orders(args.orders))
    return res.spec, res.params, res


def cmd_diagnose(args) -> int:
    out = _out_dir(args)
    series = _load_series(args.input, args.columns)
    spec, params, fitted = _fit_or_load(args, series, out)
    if fitted is not None:
        _write_json(out / "fit.json", _fit_payload(fitted, series.n, []))

    res = diagnostics.residuals(spec, params, series)
    _write_csv(out / "residuals.csv", ["t", "re"],
               ((t + 1, res.re[t]) for t in range(res.n)))
    pts = diagnostics.qq_points(res)
    _write_csv(out / "qq.csv", ["theoretical", "empirical"], pts)
    acf, pacf, band = diagnostics.acf_pacf(res, args.max_lag)
    _write_csv(
        out / "acf.csv", ["lag", "acf", "pacf", "band"],
        ((lag + 1, acf[lag], pacf[lag], band) for lag in range(len(acf))),
    )
    stat, pvalue = diagnostics.ks_test(res)
    _write_json(out / "ks.json", {
        "statistic": stat, "pvalue": pvalue, "n": res.n,
        "family": spec.generator.family,
    })
    if not args.no_plots:
        plots.qq_plot(out / "qq.svg", pts, spec.generator.label())
        plots.acf_plot(out / "acf.svg", acf, pacf, band)
    _write_config(args, out)
    return EXIT_OK


def cmd_forecast(args) -> int:
    out = _out_dir(args)
    series = _load_series(args.input, args.columns)
    frac = _parse_split(args.split)
    n_in = round(frac * series.n)
    if not 2 <= n_in <= series.n - 1:
        raise ValueError("split leaves an empty segment")
    in_sample = BiSeries(series.y1[:n_in], series.y2[:n_in])
    out_sample = BiSeries(series.y1[n_in:], series.y2[n_in:])
    spec, params, fitted = _fit_or_load(args, in_sample, out)
    if fitted is not None:
        _write_json(out / "fit.json", _fit_payload(fitted, in_sample.n, []))

    band, (cov1, cov2) = diagnostics.predict_intervals(
        spec, params, in_sample, out_sample, args.nominal,
    )
    _write_csv(
        out / "band.csv",
        ["t", "y1", "lo1", "hi1", "y2", "lo2", "hi2"],
        (
            (n_in + t + 1, out_sample.y1[t], band.lower1[t], band.upper1[t],
             out_sample.y2[t], band.lower2[t], band.upper2[t])
            for t in range(out_sample.n)
        ),
    )
    _write_json(out / "coverage.json", {
        "nominal": args.nominal,
        "coverage1_pct": 100.0 * cov1,
        "coverage2_pct": 100.0 * cov2,
        "n_in": n_in,
        "n_out": out_sample.n,
    })
    if not args.no_plots:
        t_axis = np.arange(n_in + 1, series.n + 1)
        plots.band_plot(out / "band.svg", t_axis, out_sample, band)
    _write_config(args, out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--threads", type=int, default=None)
    shared.add_argument("--out-dir", default=".")
    shared.add_argument("--family", choices=FAMILIES, default="lognormal")
    shared.add_argument("--nu", type=float, default=None,
                        help="shape parameter for families that take one")
    shared.add_argument("--orders", default="1,1,1,1",
                        help="lag orders p1,q1,p2,q2")
    shared.add_argument("--no-plots", action="store_true",
                        help="skip SVG figure rendering")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--gradient-mode", choices=("paper_literal", "exact_recursive"),
                         default="paper_literal")
    fitting.add_argument("--burn-in", type=int, default=0)
    fitting.add_argument("--starts", type=int, default=5)
    fitting.add_argument("--nu-grid", default=None,
                         help="comma-separated profile grid for the shape parameter")
    fitting.add_argument("--ic-exclude-nu", action="store_true",
                         help="leave the shape parameter out of the criteria")
    fitting.add_argument("--columns", choices=("auto", "adjusted", "raw"),
                         default="auto")

    parser = argparse.ArgumentParser(
        prog="blsacd",
        description="Bivariate log-symmetric conditional-duration modeling",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[shared],
                       help="build a pair series from a trade tape")
    p.add_argument("--input", required=True)
    p.add_argument("--session", default=None, help="window like 09:30-16:00")
    p.add_argument("--count-mode", choices=data.COUNT_MODES, default="all")
    p.add_argument("--knot-minutes", type=float, default=60.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", parents=[shared, fitting],
                       help="fit one family or compare all of them")
    p.add_argument("--input", required=True)
    p.add_argument("--all-families", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", parents=[shared],
                       help="draw an exact sample path")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--params", default=None,
                   help="fit.json or theta mapping to simulate from")
    p.add_argument("--burn-in", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mc", parents=[shared, fitting],
                       help="simulate-and-refit study over a (T, rho) grid")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--T", type=int, action="append", default=None)
    p.add_argument("--rho", type=float, action="append", default=None)
    p.add_argument("--paper-defaults", action="store_true",
                   help="replications 1000, T in (500,1000,2000), "
                        "rho in (0.10,0.25,0.50,0.75,0.90)")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("diagnose", parents=[shared, fitting],
                       help="residual QQ, ACF/PACF, and KS outputs")
    p.add_argument("--input", required=True)
    p.add_argument("--params", default=None, help="fit.json to reuse")
    p.add_argument("--max-lag", type=int, default=20)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("forecast", parents=[shared, fitting],
                       help="one-step-ahead bands and out-of-sample coverage")
    p.add_argument("--input", required=True)
    p.add_argument("--params", default=None, help="fit.json to reuse")
    p.add_argument("--split", default="2/3",
                   help="in-sample share, a fraction like 2/3 or 0.66")
    p.add_argument("--nominal", type=float, default=0.95)
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except BlsacdError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
