import json

import numpy as np
import pandas as pd
import pytest
import yaml

from distreg.cli import ConfigError, RunConfig, load_config, load_data, main, run
from distreg.sampler import SampleMatrix

from conftest import SWISS_FORMULA


def _write(tmp_path, name="run.yaml", **cfg):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def _swiss_cfg(**kw):
    base = dict(data="bundled:SwissLabor", formula=SWISS_FORMULA, family="binomial",
                engine={"n_iter": 300, "burnin": 100}, seed=123)
    base.update(kw)
    return base


def test_fit_writes_artifacts_and_summary_layout(tmp_path, capsys):
    cfg = _write(tmp_path, **_swiss_cfg(diagnostics={"rootogram": True, "waic": True},
                                        predictions=[{"name": "pi", "summary": "c95"}]))
    assert main(["fit", str(cfg)]) == 0
    out = tmp_path / "run"
    for f in ("samples.csv", "samples.meta.json", "summary.txt", "meta.json", "parameters.csv",
              "residuals.csv", "rootogram.csv", "acf.csv", "prediction_pi.csv"):
        assert (out / f).exists(), f
    text = (out / "summary.txt").read_text()
    assert "Parametric coefficients:" in text
    header = next(l for l in text.splitlines() if "Mean" in l)
    assert header.split() == ["Mean", "2.5%", "50%", "97.5%", "parameters"]
    alpha = next(l for l in text.splitlines() if l.startswith("alpha"))
    assert len(alpha.split()) == 6 and alpha.split()[-1] == "NA"
    assert "Sampler summary:" in text and "Optimizer summary:" in text
    assert "WAIC =" in text
    assert "artifacts written" in capsys.readouterr().out
    meta = json.loads((out / "meta.json").read_text())
    assert meta["nobs"] == 872 and "mcse" in meta
    assert list(pd.read_csv(out / "prediction_pi.csv").columns) == ["pi.2.5%", "pi.mean", "pi.97.5%"]


def test_mode_only_summary(tmp_path):
    out = run(load_config(_write(tmp_path, **_swiss_cfg(sampler="none"))))
    text = (out / "summary.txt").read_text()
    assert "Sampler summary" not in text and "alpha" not in text
    for key in ("AICc", "edf", "logLik", "logPost"):
        assert key in text
    header = next(l for l in text.splitlines() if "parameters" in l and "Parametric" not in l)
    assert header.split() == ["parameters"]
    assert "-1.104" in text
    assert not (out / "samples.csv").exists()


def test_sampler_runs_from_explicit_start(tmp_path):
    start = {"pi.p.(Intercept)": 6.2, "pi.p.income": -1.1}
    cfg = load_config(_write(tmp_path, **_swiss_cfg(optimizer="none", start=start,
                                                    engine={"n_iter": 5, "burnin": 0})))
    out = run(cfg)
    s = SampleMatrix.read(out / "samples.csv")
    assert s["pi.p.(Intercept)"][0] == 6.2
    assert s["pi.p.income"][0] == -1.1
    assert s["pi.p.age"][0] == 0.0
    assert "Optimizer summary" not in (out / "summary.txt").read_text()


def test_identical_seeds_give_identical_samples(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    for sub in (a, b):
        sub.mkdir()
        run(load_config(_write(sub, **_swiss_cfg())))
    assert (a / "run" / "samples.csv").read_bytes() == (b / "run" / "samples.csv").read_bytes()


def test_output_root_env(tmp_path, monkeypatch):
    root = tmp_path / "root"
    monkeypatch.setenv("DISTREG_OUTPUT_ROOT", str(root))
    cfg = load_config(_write(tmp_path, **_swiss_cfg(sampler="none", output="x")))
    assert cfg.output_dir == root / "x"


def test_gibbs_lm_run(tmp_path):
    cfg = dict(data={"simulate": "lm", "n": 200, "p": 3, "seed": 1}, formula="y ~ x1 + x2", family="lm",
               optimizer="none", sampler="gibbs_lm", engine={"n_iter": 600, "burnin": 100, "thin": 2})
    out = run(load_config(_write(tmp_path, **cfg)))
    s = SampleMatrix.read(out / "samples.csv")
    assert s.colnames == ["mu.p.(Intercept)", "mu.p.x1", "mu.p.x2", "sigma"]
    assert "sigma" in (out / "summary.txt").read_text()


def test_predict_and_summary_subcommands(tmp_path, capsys):
    cfg = _write(tmp_path, **_swiss_cfg(sampler="none"))
    assert main(["fit", str(cfg)]) == 0
    new = tmp_path / "new.csv"
    load_data("bundled:SwissLabor").head(5).to_csv(new, index=False)
    outfile = tmp_path / "pred.csv"
    assert main(["predict", str(cfg), "--newdata", str(new), "--out", str(outfile)]) == 0
    pred = pd.read_csv(outfile)
    assert pred.shape == (5, 1) and np.all((pred.pi > 0) & (pred.pi < 1))
    capsys.readouterr()
    assert main(["summary", str(tmp_path / "run")]) == 0
    assert "Optimizer summary" in capsys.readouterr().out
    assert main(["summary", str(tmp_path / "missing")]) == 2


@pytest.mark.parametrize("bad, match", [
    ({"optimizer": "newton"}, "optimizer"),
    ({"sampler": "none", "optimizer": "none"}, "at least one"),
    ({"sampler": "gibbs_lm"}, "lm"),
    ({"engine": {"n_iters": 3}}, "unknown engine"),
    ({"diagnostics": {"plots": True}}, "unknown diagnostics"),
])
def test_config_invariants(bad, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig(**_swiss_cfg(**bad))


def test_config_file_errors(tmp_path, capsys):
    assert main(["fit", str(_write(tmp_path, **_swiss_cfg(colour="red")))]) == 2
    assert "unknown keys" in capsys.readouterr().err
    p = tmp_path / "broken.yaml"
    p.write_text("data: [unclosed")
    assert main(["fit", str(p)]) == 2
    missing = _swiss_cfg()
    del missing["formula"]
    assert main(["fit", str(_write(tmp_path, "m.yaml", **missing))]) == 2
    assert main(["fit", str(_write(tmp_path, "d.yaml", **_swiss_cfg(data="nope.csv")))]) == 2


def test_model_errors_exit_3(tmp_path):
    cfg = _write(tmp_path, **_swiss_cfg(formula="participation ~ salary", sampler="none"))
    assert main(["fit", str(cfg)]) == 3


def test_gibbs_needs_parametric_formula(tmp_path):
    cfg = dict(data={"simulate": "lm", "n": 50, "p": 2, "seed": 1}, formula="y ~ s(x1)", family="lm",
               optimizer="none", sampler="gibbs_lm")
    assert main(["fit", str(_write(tmp_path, **cfg))]) == 2


def test_csv_data_relative_to_config(tmp_path):
    load_data({"simulate": "gamart", "n": 80, "seed": 1}).to_csv(tmp_path / "g.csv", index=False)
    cfg = dict(data="g.csv", formula=["num ~ x1 + s(x2, k=6)", "sigma ~ x3"], sampler="none")
    out = run(load_config(_write(tmp_path, **cfg)))
    assert json.loads((out / "meta.json").read_text())["nobs"] == 80
