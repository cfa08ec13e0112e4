"""Batch driver: YAML config in, samples, summaries and diagnostics out.

Usage::

    distreg fit run.yaml
    distreg predict run.yaml --newdata new.csv [--out pred.csv]
    distreg summary <run-dir>

Relative output directories are placed under ``$DISTREG_OUTPUT_ROOT``
(default: the config file's directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import yaml

from . import datasets
from .design import ModelFrame, build_frame
from .diagnostics import acf_summary, crps_numeric, mcse, quantile_residuals, rootogram_freq
from .engine import FitState, backfit, boost, initial_state
from .family import get_family
from .formula import parse_formula_set, render_formula_set
from .predict import PredictionRequest, predict
from .sampler import GibbsPrior, SampleMatrix, gibbs_lm, gmcmc, samplestats, waic

__all__ = ["RunConfig", "ConfigError", "load_config", "load_data", "run", "summarize", "main"]

log = logging.getLogger("distreg")

OUTPUT_ROOT_ENV = "DISTREG_OUTPUT_ROOT"

_ENGINE_DEFAULTS = {"n_iter": 1200, "burnin": 200, "thin": 1, "maxit": 1000, "nu": 0.1,
                    "eps": 1e-4, "max_iter": 400, "df": 4.0}
_DIAG_DEFAULTS = {"residuals": True, "crps": False, "rootogram": False, "acf": True, "waic": False}
_BUNDLED = {"SwissLabor": datasets.load_swisslabor, "mcycle": datasets.load_mcycle}
_SIMULATORS = {
    "gamart": lambda n=500, seed=None: datasets.gamart(n, seed),
    "ztnb": lambda n=5000, seed=None: datasets.simulate_ztnb(n, seed),
    "growth": lambda reps=20, seed=None: datasets.simulate_growth(reps, seed),
    "lm": lambda n=500, p=6, seed=None: datasets.simulate_lm(n, p, seed=seed)[0],
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Declarative description of one fitting run."""

    data: Any
    formula: list[str]
    family: str = "gaussian"
    optimizer: str = "bfit"
    sampler: str = "gmcmc"
    engine: dict = field(default_factory=dict)
    gibbs_prior: dict | None = None
    start: dict = field(default_factory=dict)
    seed: int | None = 123
    output: str = "run"
    predictions: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if isinstance(self.formula, str):
            self.formula = [self.formula]
        if self.optimizer not in ("bfit", "boost", "none"):
            raise ConfigError(f"optimizer must be bfit, boost or none, got {self.optimizer!r}")
        if self.sampler not in ("gmcmc", "gibbs_lm", "none"):
            raise ConfigError(f"sampler must be gmcmc, gibbs_lm or none, got {self.sampler!r}")
        if self.optimizer == "none" and self.sampler == "none":
            raise ConfigError("at least one of optimizer and sampler must be enabled")
        if self.sampler == "gibbs_lm" and self.family != "lm":
            raise ConfigError("sampler gibbs_lm requires family lm")
        unknown = set(self.engine) - set(_ENGINE_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown engine settings {sorted(unknown)}")
        self.engine = {**_ENGINE_DEFAULTS, **self.engine}
        unknown = set(self.diagnostics) - set(_DIAG_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown diagnostics {sorted(unknown)}")
        self.diagnostics = {**_DIAG_DEFAULTS, **self.diagnostics}
        self.base_dir = Path(self.base_dir)

    @property
    def output_dir(self) -> Path:
        out = Path(self.output)
        if out.is_absolute():
            return out
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return (Path(root) if root else self.base_dir) / out


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    fields = set(RunConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("data", "formula"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required key {key!r}")
    return RunConfig(**raw, base_dir=path.parent.resolve())


def load_data(spec, base_dir: Path | None = None) -> pd.DataFrame:
    """Read a CSV path, a ``bundled:<name>`` data set or a simulator mapping."""
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("simulate", None)
        if name not in _SIMULATORS:
            raise ConfigError(f"unknown simulator {name!r}; choose from {sorted(_SIMULATORS)}")
        return _SIMULATORS[name](**spec)
    spec = str(spec)
    if spec.startswith("bundled:"):
        name = spec.split(":", 1)[1]
        if name not in _BUNDLED:
            raise ConfigError(f"unknown bundled data {name!r}; choose from {sorted(_BUNDLED)}")
        return _BUNDLED[name]()
    path = Path(spec)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    if not path.exists():
        raise ConfigError(f"data file {path} not found")
    return pd.read_csv(path)


def _frame(cfg: RunConfig, data: pd.DataFrame) -> ModelFrame:
    fam = get_family(cfg.family)
    fs = parse_formula_set(cfg.formula, fam)
    return build_frame(fs, data, fam)


def _gibbs(cfg: RunConfig, frame: ModelFrame, start: dict | None) -> SampleMatrix:
    blocks = frame.blocks["mu"]
    if len(blocks) != 1 or blocks[0].kind != "p":
        raise ConfigError("gibbs_lm needs a purely parametric formula")
    bl = blocks[0]
    p = bl.n_coef
    pr = cfg.gibbs_prior or {}
    prior = GibbsPrior(m=pr.get("m", np.zeros(p)), M=pr.get("M", 1e5 * np.eye(p)),
                       a=pr.get("a", 1.0), b=pr.get("b", 1e-4))
    beta0 = None
    if start:
        beta0 = [start.get(nm, 0.0) for nm in bl.coef_names]
    names = [nm[len("mu.p."):] for nm in bl.coef_names]
    e = cfg.engine
    return gibbs_lm(bl.X, frame.y, prior, n_iter=e["n_iter"], burnin=e["burnin"], thin=e["thin"],
                    start=beta0, seed=cfg.seed, colnames=names)


def fit_pipeline(cfg: RunConfig, data: pd.DataFrame | None = None):
    """Parse, build the frame, run optimizer then sampler. Returns (frame, fit, samples, stats)."""
    data = load_data(cfg.data, cfg.base_dir) if data is None else data
    frame = _frame(cfg, data)
    e = cfg.engine
    fit = None
    start = dict(cfg.start) if cfg.start else None
    if cfg.optimizer == "bfit":
        fit = backfit(frame, start=start, max_iter=e["max_iter"], eps=e["eps"])
    elif cfg.optimizer == "boost":
        fit = boost(frame, maxit=e["maxit"], nu=e["nu"], start=start, df=e["df"])
    samples = stats = None
    sampler_start = fit.parameters(frame) if fit is not None else start
    if cfg.sampler == "gmcmc":
        samples = gmcmc(frame, sampler_start, n_iter=e["n_iter"], burnin=e["burnin"], thin=e["thin"], seed=cfg.seed)
    elif cfg.sampler == "gibbs_lm":
        samples = _gibbs(cfg, frame, sampler_start)
    if samples is not None:
        stats = samplestats(samples, frame)
        if cfg.diagnostics["waic"]:
            stats.update(waic(samples, frame))
        stats["runtime"] = samples.info.get("runtime", np.nan)
    return frame, fit, samples, stats


# --------------------------------------------------------------------------
# summary text


def _fmt(v, digits):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "NA"
    return f"{v:.{digits}f}"


def _table(rows: list[tuple[str, list[str]]], header: list[str]) -> list[str]:
    width0 = max([len(r[0]) for r in rows] + [0])
    widths = [max([len(h)] + [len(r[1][i]) for r in rows]) for i, h in enumerate(header)]
    lines = [" " * width0 + "".join(" " + h.rjust(w) for h, w in zip(header, widths))]
    for name, cells in rows:
        lines.append(name.ljust(width0) + "".join(" " + c.rjust(w) for c, w in zip(cells, widths)))
    return lines


def summarize(fit: FitState | None, samples: SampleMatrix | None, frame: ModelFrame,
              stats: dict | None = None) -> str:
    """Text report: coefficient tables per parameter, sampler and optimizer blocks.

    Sampled quantities are printed with 5 decimals, mode values with 3.
    """
    fam = frame.family
    mode = fit.parameters(frame) if fit is not None else {}
    header = []
    if samples is not None:
        header += ["Mean", "2.5%", "50%", "97.5%"]
    if fit is not None:
        header.append("parameters")

    def cells(name):
        out = []
        if samples is not None:
            if name in samples.colnames:
                x = samples[name]
                q = np.quantile(x, [0.025, 0.5, 0.975])
                out += [_fmt(float(np.mean(x)), 5)] + [_fmt(float(v), 5) for v in q]
            else:
                out += ["NA"] * 4
        if fit is not None:
            out.append(_fmt(mode.get(name, np.nan), 3))
        return out

    lines = [f"Family: {fam.name}", ""]
    fs_text = render_formula_set(frame.formula)
    for param, text in zip(fam.names, fs_text):
        lines += [f"Formula {param}:", "---", text, "-"]
        par_rows, smooth_rows = [], []
        for bl in frame.blocks[param]:
            target = par_rows if bl.kind == "p" else smooth_rows
            for nm in bl.coef_names if bl.kind == "p" else bl.tau2_names:
                target.append((nm.split(".", 2)[2], cells(nm)))
            if bl.kind == "special":
                for nm in bl.coef_names:
                    smooth_rows.append((nm.split(".", 2)[2], cells(nm)))
        if samples is not None and fam.name == "lm" and "sigma" in samples.colnames:
            par_rows.append(("sigma", cells("sigma")))
        if samples is not None and f"{param}.alpha" in samples.colnames:
            row = cells(f"{param}.alpha")
            target = par_rows if par_rows else smooth_rows
            target.append(("alpha", row))
        if par_rows:
            lines += ["Parametric coefficients:"] + _table(par_rows, header)
        if smooth_rows:
            lines += ["-", "Smooth terms:"] + _table(smooth_rows, header)
        lines.append("---")
    if samples is not None and stats is not None:
        lines += ["Sampler summary:", "-",
                  f"DIC = {_fmt(stats['DIC'], 5)} logLik = {_fmt(stats['logLik'], 5)} pd = {_fmt(stats['pd'], 5)}"]
        if "WAIC" in stats:
            lines.append(f"WAIC = {_fmt(stats['WAIC'], 5)} pWAIC = {_fmt(stats['pWAIC'], 5)}")
        lines += [f"runtime = {_fmt(stats.get('runtime', np.nan), 3)}", "---"]
    if fit is not None:
        lines += ["Optimizer summary:", "-",
                  f"AICc = {_fmt(fit.AICc(frame.n), 3)} converged = {int(fit.converged)} edf = {_fmt(fit.edf, 3)}",
                  f"logLik = {_fmt(fit.logLik, 3)} logPost = {_fmt(fit.logPost, 3)} nobs = {frame.n}",
                  f"runtime = {_fmt(fit.runtime, 3)}", "---"]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# run


def _source(fit, samples):
    return samples if samples is not None else fit


def _write_predictions(cfg: RunConfig, frame, fit, samples, outdir: Path, newdata=None) -> list[Path]:
    written = []
    for i, spec in enumerate(cfg.predictions):
        spec = dict(spec)
        name = spec.pop("name", f"prediction{i + 1}")
        nd_spec = spec.pop("newdata", None)
        nd = newdata
        if nd is None and nd_spec is not None:
            nd = load_data(nd_spec, cfg.base_dir)
        if spec.get("summary") == "identity":
            raise ConfigError("identity summaries are not written to files; use mean or c95")
        req = PredictionRequest(**spec)
        out = predict(_source(fit, samples), frame, nd, req)
        path = outdir / f"prediction_{name}.csv"
        out.to_csv(path, index=False, float_format="%.10g")
        written.append(path)
    return written


def run(cfg: RunConfig) -> Path:
    """Run the configured pipeline and write all artifacts; returns the run directory."""
    t0 = time.perf_counter()
    frame, fit, samples, stats = fit_pipeline(cfg)
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    if fit is not None:
        pd.DataFrame({"name": list(fit.parameters(frame)), "value": list(fit.parameters(frame).values())}) \
            .to_csv(outdir / "parameters.csv", index=False, float_format="%.17g")
        files.append("parameters.csv")
        if fit.optimizer == "boost":
            path = pd.DataFrame(fit.contribution_path)
            path.insert(0, "iteration", np.arange(1, len(path) + 1))
            path["logLik"] = fit.loglik_path
            path.to_csv(outdir / "boost_path.csv", index=False, float_format="%.10g")
            files.append("boost_path.csv")
    if samples is not None:
        samples.write(outdir / "samples.csv")
        files += ["samples.csv", "samples.meta.json"]
    src = _source(fit, samples)
    d = cfg.diagnostics
    if d["residuals"] and frame.family.p is not None:
        res = quantile_residuals(src, frame, seed=cfg.seed)
        pd.DataFrame({"residual": res.residuals}).to_csv(outdir / "residuals.csv", index=False, float_format="%.10g")
        files.append("residuals.csv")
    if d["crps"] and frame.family.p is not None:
        crps_numeric(src, frame).to_csv(outdir / "crps.csv", index=False, float_format="%.10g")
        files.append("crps.csv")
    if d["rootogram"] and frame.family.discrete:
        rootogram_freq(src, frame).to_csv(outdir / "rootogram.csv", index=False, float_format="%.10g")
        files.append("rootogram.csv")
    if d["acf"] and samples is not None and samples.nsave >= 42:
        acf_summary(samples).to_csv(outdir / "acf.csv", index=False, float_format="%.10g")
        files.append("acf.csv")
    files += [p.name for p in _write_predictions(cfg, frame, fit, samples, outdir)]
    (outdir / "summary.txt").write_text(summarize(fit, samples, frame, stats))
    meta = {
        "family": frame.family.name,
        "formula": cfg.formula,
        "optimizer": cfg.optimizer,
        "sampler": cfg.sampler,
        "seed": cfg.seed,
        "engine": cfg.engine,
        "nobs": frame.n,
        "n_dropped": frame.n_dropped,
        "files": files + ["summary.txt", "meta.json"],
        "runtime": time.perf_counter() - t0,
    }
    if fit is not None:
        meta["optimizer_stats"] = {"AICc": fit.AICc(frame.n), "edf": fit.edf, "logLik": fit.logLik,
                                   "logPost": fit.logPost, "converged": fit.converged,
                                   "iterations": fit.iterations, "runtime": fit.runtime}
        if fit.optimizer == "boost":
            meta["optimizer_stats"]["contributions"] = fit.contributions
            meta["optimizer_stats"]["first_selected"] = fit.selected[0] if fit.selected else None
    if stats is not None:
        meta["sampler_stats"] = {k: float(v) for k, v in stats.items()}
        meta["mcse"] = {c: mcse(samples[c]) for c in samples.colnames if not c.endswith(".alpha")}
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return outdir


def predict_from_run(cfg: RunConfig, newdata: pd.DataFrame) -> pd.DataFrame:
    """Predict on ``newdata`` from the artifacts of a finished run."""
    data = load_data(cfg.data, cfg.base_dir)
    frame = _frame(cfg, data)
    outdir = cfg.output_dir
    if (outdir / "samples.csv").exists():
        src = SampleMatrix.read(outdir / "samples.csv")
    elif (outdir / "parameters.csv").exists():
        params = pd.read_csv(outdir / "parameters.csv")
        src = initial_state(frame, dict(zip(params["name"], params["value"])))
    else:
        raise ConfigError(f"no fitted run found in {outdir}; run 'fit' first")
    reqs = cfg.predictions or [{}]
    outs = []
    for spec in reqs:
        spec = {k: v for k, v in spec.items() if k not in ("name", "newdata")}
        res = predict(src, frame, newdata, PredictionRequest(**spec))
        outs.append(res)
    return pd.concat(outs, axis=1)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="distreg", description="Distributional regression batch runner.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_fit = sub.add_parser("fit", help="run the configured pipeline")
    p_fit.add_argument("config")
    p_pred = sub.add_parser("predict", help="predict from a finished run")
    p_pred.add_argument("config")
    p_pred.add_argument("--newdata", required=True)
    p_pred.add_argument("--out", default=None)
    p_sum = sub.add_parser("summary", help="print the summary of a run directory")
    p_sum.add_argument("rundir")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        if args.command == "fit":
            outdir = run(load_config(args.config))
            sys.stdout.write((outdir / "summary.txt").read_text())
            print(f"artifacts written to {outdir}")
        elif args.command == "predict":
            cfg = load_config(args.config)
            res = predict_from_run(cfg, load_data(args.newdata, Path.cwd()))
            if args.out:
                res.to_csv(args.out, index=False, float_format="%.10g")
            else:
                res.to_csv(sys.stdout, index=False, float_format="%.10g")
        else:
            path = Path(args.rundir) / "summary.txt"
            if not path.exists():
                raise ConfigError(f"{path} not found")
            sys.stdout.write(path.read_text())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
