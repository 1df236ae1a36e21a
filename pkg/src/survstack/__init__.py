"""Survival analysis by stacking: risk-set expansion, hazard classifiers, and curves."""

from .baselines import (ConvergenceError, CoxConfig, CoxModel, LogisticConfig, LogisticModel,
                        cox_gradient, cox_log_partial_likelihood, cox_risk_score, cox_survival,
                        fit_cox, fit_logistic)
from .core import (DatasetError, StepFunction, SurvivalCurve, SurvivalDataset,
                   censoring_kaplan_meier, kaplan_meier, nelson_aalen, read_table, risk_set,
                   validate_dataset)
from .gam import (GamConfig, GamModel, bin_features, feature_importance, fit_gam,
                  predict_probability, shape_function)
from .metrics import brier_score, cumulative_dynamic_auc, evaluate, integrated_brier
from .prediction import (CalibratedHazard, PredictionConfig, calibrate, discrete_tail_product,
                         predict_cumulative_hazard, predict_survival_discrete,
                         predict_survival_mc, survival_curve, survival_curves)
from .preprocess import PreprocessModel, fit_preprocess, train_test_split, transform
from .selection import (ForestConfig, fixed_horizon_labels, grow_forest, lasso_prune,
                        select_features)
from .stacking import StackedDataset, StackingConfig, expected_size, stack
from .synth import SyntheticSpec, TruthOracle, generate, true_survival

__version__ = "0.1.0"
