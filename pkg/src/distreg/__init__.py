"""Distributional regression with exchangeable families, optimizers and samplers."""

from .datasets import gamart, load_mcycle, load_swisslabor
from .design import ModelFrame, build_frame
from .engine import FitState, backfit, boost
from .family import Family, get_family
from .formula import FormulaSet, parse_formula, parse_formula_set
from .sampler import GibbsPrior, SampleMatrix, gibbs_lm, gmcmc, samplestats, waic

__version__ = "0.1.0"


def model_frame(formulas, data, family="gaussian", **family_options) -> ModelFrame:
    """Parse ``formulas`` (a string or list of strings) and build the model frame."""
    fam = get_family(family, **family_options) if isinstance(family, str) else family
    if isinstance(formulas, str):
        formulas = [formulas]
    return build_frame(parse_formula_set(list(formulas), fam), data, fam)
