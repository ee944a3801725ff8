"""Effect selection and regression trees for factorial experiments.

Submodules: ``design`` (factors, datasets, polynomials), ``glm`` (least
squares and IRLS), ``classic`` (IER, EER, AIC and Lenth selection),
``tree`` (unbiased trees with linear node models), ``simulation`` (PMSE
studies), ``datasets``, ``io`` and ``cli``.
"""

from .classic import (
    EffectTable,
    SelectedModel,
    estimate_effects,
    select_eer,
    select_ier,
    select_lenth,
    stepwise_aic,
)
from .design import DataError, Dataset, Factor, Polynomial
from .estimators import FactorialModelSelector, GuideTreeRegressor
from .glm import ConvergenceError, Family, irls_fit, ols_fit
from .tree import Tree, TreeConfig, cv_select, grow_tree, predict, prune_sequence, to_polynomial

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DataError",
    "Dataset",
    "EffectTable",
    "Factor",
    "FactorialModelSelector",
    "Family",
    "GuideTreeRegressor",
    "Polynomial",
    "SelectedModel",
    "Tree",
    "TreeConfig",
    "cv_select",
    "estimate_effects",
    "grow_tree",
    "irls_fit",
    "ols_fit",
    "predict",
    "prune_sequence",
    "select_eer",
    "select_ier",
    "select_lenth",
    "stepwise_aic",
    "to_polynomial",
]
