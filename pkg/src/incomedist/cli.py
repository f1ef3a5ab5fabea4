"""Command-line interface.

Batch subcommands around the library: ``fit`` estimates parameters from
a CSV income file (optionally extended with billionaire wealth records),
``plotdata`` emits plot-ready CCDF curves, ``sample`` draws synthetic
incomes from fitted parameters, ``simulate`` runs the Langevin ensemble,
and ``report`` assembles per-year fits into a parameter table with
aggregate means and crisis flags.

Every command is deterministic under fixed flags and seed and writes
structured output (JSON or CSV) to stdout or ``--out``.  Exit codes:
0 success, 2 input problem (unreadable or malformed data, bad
configuration), 3 convergence problem (the result, when one exists, is
still emitted).
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass

import click
import numpy as np

from . import langevin as langevin_mod
from . import model as model_mod
from .data import (
    CsvFormat,
    Dataset,
    billionaire_effective_income,
    empirical_ccdf,
    load_billionaires,
    load_incomes,
    merge_datasets,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DomainError,
    EmptyDatasetError,
    FitNonConvergenceError,
    IncomeDistError,
    InsufficientDataError,
    InvalidParamsError,
    NonNormalizableError,
    NumericalBlowupError,
    QuadratureError,
    UnreliableErrorsError,
)
from .fit import FitConfig, bootstrap_errors, fit, fit_result_document
from .model import Params, ccdf, normalize, params_from_dict, params_to_dict, sample

__all__ = ["main", "ReportRow", "crisis_indicator", "aggregate_params"]

_INPUT_ERRORS = (
    DataFormatError,
    EmptyDatasetError,
    InsufficientDataError,
    InvalidParamsError,
    NonNormalizableError,
    ConfigError,
    DomainError,
    OSError,
    json.JSONDecodeError,
)
_CONVERGENCE_ERRORS = (
    FitNonConvergenceError,
    UnreliableErrorsError,
    QuadratureError,
    NumericalBlowupError,
)

_SCALE_KEYS = ("T", "T1", "m0", "m1")


@dataclass(frozen=True)
class ReportRow:
    """One labelled parameter set in a multi-year report."""

    label: str
    params: Params
    errors: dict
    crisis: bool


def crisis_indicator(params: Params, threshold: float = 2.0) -> tuple[bool, float]:
    """Score a parameter set for a high-income-class collapse.

    The score is the tail exponent alpha1; in normal years it sits well
    below 1, while a collapsed top class pushes it far above.  The flag
    fires on score strictly greater than ``threshold`` (default 2, the
    midpoint decade of the empirically empty band).
    """
    return bool(params.alpha1 > threshold), float(params.alpha1)


def aggregate_params(rows: list[ReportRow], exclude_labels=frozenset()) -> dict:
    """Arithmetic means of each parameter over non-excluded rows."""
    included = [r for r in rows if r.label not in set(exclude_labels)]
    if not included:
        raise DomainError("no rows left after exclusion")
    sums = {key: 0.0 for key in model_mod.params_to_dict(included[0].params)}
    for row in included:
        for key, value in model_mod.params_to_dict(row.params).items():
            sums[key] += value
    n = len(included)
    return {key: value / n for key, value in sums.items()}


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_config_overrides(config_path, flag_values: dict) -> dict:
    """Apply --config JSON on top of flag values (config wins)."""
    if not config_path:
        return flag_values
    with open(config_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {config_path} must hold a JSON object")
    merged = dict(flag_values)
    for key, value in doc.items():
        norm = key.replace("-", "_")
        if norm not in merged:
            raise ConfigError(f"unknown config key {key!r}")
        merged[norm] = value
    return merged


def _load_dataset(opts) -> tuple[Dataset, list[str]]:
    fmt = CsvFormat(label=str(opts.get("label") or ""))
    ds, diagnostics = load_incomes(opts["incomes"], fmt)
    if opts.get("billionaires"):
        records, rec_diag = load_billionaires(opts["billionaires"])
        diagnostics.extend(rec_diag)
        top = billionaire_effective_income(
            records, opts["usd_eur"], opts["return_rate"]
        )
        ds = merge_datasets(ds, top, opts["top_weight"])
    return ds, diagnostics


def _load_params_file(path) -> Params:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "params" in doc:
        doc = doc["params"]
    return params_from_dict(doc)


def _run(body) -> None:
    try:
        code = body()
    except _CONVERGENCE_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except _INPUT_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    sys.exit(code or 0)


@click.group()
def main():
    """Two-branch income distribution toolkit."""


_dataset_options = [
    click.option("--incomes", required=True, type=click.Path(), help="Income CSV (column 'income', optional 'weight')."),
    click.option("--billionaires", type=click.Path(), default=None, help="Billionaire CSV (column 'wealth_usd') merged into the tail."),
    click.option("--usd-eur", type=float, default=1.0, show_default=True, help="USD to EUR conversion for billionaire wealth."),
    click.option("--return-rate", type=float, default=0.05, show_default=True, help="Annual return rate imputing income from wealth."),
    click.option("--top-weight", type=float, default=1.0, show_default=True, help="Statistical weight of each merged top income."),
    click.option("--label", default=None, help="Dataset label (defaults to none)."),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@main.command("fit")
@_add_options(_dataset_options)
@click.option("--tie-t1-m1", is_flag=True, default=False, help="Constrain T1 = m1 during the fit.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--bootstrap", type=int, default=0, show_default=True, help="Bootstrap resamples for error bars (0 skips; >= 20 otherwise).")
@click.option("--restarts", type=int, default=5, show_default=True)
@click.option("--grid-points", type=int, default=200, show_default=True)
@click.option("--opt-tol", type=float, default=2e-4, show_default=True)
@click.option("--quad-tol", type=float, default=1e-10, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write JSON here instead of stdout.")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON file overriding any flag.")
def cmd_fit(config_path, **flags):
    """Fit distribution parameters to an income CSV."""

    def body():
        opts = _load_config_overrides(config_path, flags)
        ds, diagnostics = _load_dataset(opts)
        cfg = FitConfig(
            grid_points=int(opts["grid_points"]),
            tie_t1_m1=bool(opts["tie_t1_m1"]),
            restarts=int(opts["restarts"]),
            bootstrap_resamples=int(opts["bootstrap"]),
            seed=int(opts["seed"]),
            opt_tol=float(opts["opt_tol"]),
            quad_tol=float(opts["quad_tol"]),
        )
        curve = empirical_ccdf(ds)
        result = fit(curve, cfg)
        errors = result.errors
        if cfg.bootstrap_resamples > 0:
            errors = bootstrap_errors(ds, cfg, result.params)
        doc = fit_result_document(result, cfg)
        doc["errors"] = errors
        doc["data"] = {
            "label": ds.label,
            "records": len(ds),
            "rejected_rows": len(diagnostics),
        }
        _emit(_dump_json(doc), opts["out"])
        return 0 if result.converged else 3

    _run(body)


@main.command("plotdata")
@click.option("--params", "params_path", required=True, type=click.Path(), help="Params JSON (bare or a fit result).")
@_add_options(_dataset_options)
@click.option("--curve-points", type=int, default=500, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON file overriding any flag.")
def cmd_plotdata(config_path, params_path, **flags):
    """Emit empirical and model CCDF curves as plot-ready CSV."""

    def body():
        opts = _load_config_overrides(config_path, flags)
        params = _load_params_file(params_path)
        mod = normalize(params)
        ds, _ = _load_dataset(opts)
        curve = empirical_ccdf(ds)
        keep = curve.m > 0.0
        m_emp = curve.m[keep]
        p_emp = curve.p[keep]
        grid = np.geomspace(m_emp[0], m_emp[-1], int(opts["curve_points"]))
        p_model = ccdf(mod, grid)
        lines = ["kind,m,p"]
        lines.extend(f"empirical,{m:.12g},{p:.12g}" for m, p in zip(m_emp, p_emp))
        lines.extend(f"model,{m:.12g},{p:.12g}" for m, p in zip(grid, p_model))
        lines.append(f"marker_m0,{params.m0:.12g},{ccdf(mod, params.m0):.12g}")
        lines.append(f"marker_m1,{params.m1:.12g},{ccdf(mod, params.m1):.12g}")
        _emit("\n".join(lines) + "\n", opts["out"])

    _run(body)


@main.command("sample")
@click.option("--params", "params_path", required=True, type=click.Path())
@click.option("--n", type=int, required=True, help="Number of incomes to draw.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_sample(params_path, n, seed, out):
    """Draw synthetic incomes from fitted parameters."""

    def body():
        params = _load_params_file(params_path)
        mod = normalize(params)
        values = sample(mod, n, seed)
        _emit("income\n" + "".join(f"{v:.12g}\n" for v in values), out)

    _run(body)


@main.command("simulate")
@click.option("--params", "params_path", required=True, type=click.Path())
@click.option("--b", type=float, default=1.0, show_default=True, help="Multiplicative diffusion coefficient fixing the time scale.")
@click.option("--agents", type=int, default=10000, show_default=True)
@click.option("--dt", type=float, default=0.004, show_default=True)
@click.option("--steps", type=int, default=5000, show_default=True)
@click.option("--stride", type=int, default=0, show_default=True, help="Record every this many steps (0: first and last only).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_simulate(params_path, b, agents, dt, steps, stride, seed, out):
    """Integrate the income Langevin ensemble and dump snapshots."""

    def body():
        params = _load_params_file(params_path)
        coeffs = model_mod.fp_coefficients_for(params, b=b)
        cfg = langevin_mod.SimConfig(
            coeffs=coeffs,
            m1=params.m1,
            n_agents=agents,
            dt=dt,
            n_steps=steps,
            seed=seed,
            record_stride=stride,
        )
        snapshots = langevin_mod.simulate_ensemble(cfg)
        if out:
            langevin_mod.write_snapshots_csv(out, snapshots)
        else:
            lines = ["time,income"]
            for snap in snapshots:
                t = format(snap.time, ".12g")
                lines.extend(f"{t},{v:.12g}" for v in snap.incomes)
            _emit("\n".join(lines) + "\n", None)

    _run(body)


@main.command("report")
@click.option("--fit-json", "fit_paths", multiple=True, required=True, type=click.Path(), help="Fit result JSON (repeatable); the row label is the file's 'label' or its stem.")
@click.option("--exclude", "excludes", multiple=True, help="Labels to drop from the aggregate means (repeatable).")
@click.option("--crisis-threshold", type=float, default=2.0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_report(fit_paths, excludes, crisis_threshold, out):
    """Combine fit results into a parameter table with aggregates."""

    def body():
        rows = []
        for path in fit_paths:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            params = params_from_dict(doc["params"] if "params" in doc else doc)
            label = str(
                doc.get("label")
                or (doc.get("data") or {}).get("label")
                or _stem(path)
            )
            errors = doc.get("errors") or {}
            flag, _score = crisis_indicator(params, crisis_threshold)
            rows.append(ReportRow(label=label, params=params, errors=errors, crisis=flag))
        rows.sort(key=lambda r: r.label)
        table = []
        for row in rows:
            raw = params_to_dict(row.params)
            rounded = {
                key: (1000 * round(value / 1000.0) if key in _SCALE_KEYS else value)
                for key, value in raw.items()
            }
            table.append({
                "label": row.label,
                "params_rounded": rounded,
                "params": raw,
                "errors": dict(row.errors),
                "crisis": row.crisis,
            })
        doc = {
            "rows": table,
            "aggregates": {
                "all": aggregate_params(rows),
                "included_labels": [r.label for r in rows if r.label not in set(excludes)],
            },
            "crisis_threshold": crisis_threshold,
        }
        if excludes:
            doc["aggregates"]["excluding"] = aggregate_params(rows, set(excludes))
            doc["aggregates"]["excluded_labels"] = sorted(set(excludes))
        _emit(_dump_json(doc), out)

    _run(body)


def _stem(path: str) -> str:
    name = path.replace("\\", "/").rsplit("/", 1)[-1]
    return name.rsplit(".", 1)[0] if "." in name else name
