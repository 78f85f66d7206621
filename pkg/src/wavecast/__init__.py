"""Wave-farm power forecasting toolkit.

From-scratch sequential deep models (CNN / LSTM / BiLSTM / GRU /
self-attention hybrids) with reverse-mode autodiff, an evolutionary grid
search hyperparameter optimizer, an eight-metric evaluation harness, and a
frequency-domain wave-farm power model for synthetic data generation and
layout studies.
"""

from .data_io import (DatasetError, ExperimentConfig, RowCountWarning,
                      SchemaError, ValidationReport, WecDataset, load_csv,
                      load_run, save_run, validate_rows, write_dataset_csv)
from .hyperopt import (BudgetError, ContinuousDomain, GridDomain,
                       NumericalError, cv_objective, default_search_space,
                       egs_optimize, nelder_mead, random_search,
                       synthetic_quadratic)
from .metrics import METRIC_NAMES, EvalReport, aggregate, evaluate
from .physics import (FarmLayout, FarmState, Landscape, LayoutError,
                      NoFeasibleCellError, SeaState, SingularSystemError,
                      SITE_CLIMATES, SITES, annual_average_power,
                      bretschneider, generate_dataset, irregular_power,
                      landscape_scan, mean_power_regular, sample_layout,
                      solve_motion, synthetic_farm)
from .tensor import DomainError, GradCheckConfig, ShapeMismatchError, Tensor, gradient_check
from .training import (MODEL_NAMES, CvOutcome, HyperParams, Model,
                       TrainingAborted, build_model, default_hyperparams,
                       predict, run_cv, run_fold, split_70_30, train,
                       tuned_hyperparams)

__version__ = "0.1.0"

__all__ = [
    "DatasetError", "ExperimentConfig", "RowCountWarning", "SchemaError",
    "ValidationReport", "WecDataset", "load_csv", "load_run", "save_run",
    "validate_rows", "write_dataset_csv",
    "BudgetError", "ContinuousDomain", "GridDomain", "NumericalError",
    "cv_objective", "default_search_space", "egs_optimize", "nelder_mead",
    "random_search", "synthetic_quadratic",
    "METRIC_NAMES", "EvalReport", "aggregate", "evaluate",
    "FarmLayout", "FarmState", "Landscape", "LayoutError",
    "NoFeasibleCellError", "SeaState", "SingularSystemError", "SITE_CLIMATES",
    "SITES", "annual_average_power", "bretschneider", "generate_dataset",
    "irregular_power", "landscape_scan", "mean_power_regular", "sample_layout",
    "solve_motion", "synthetic_farm",
    "DomainError", "GradCheckConfig", "ShapeMismatchError", "Tensor",
    "gradient_check",
    "MODEL_NAMES", "CvOutcome", "HyperParams", "Model", "TrainingAborted",
    "build_model", "default_hyperparams", "predict", "run_cv", "run_fold",
    "split_70_30", "train", "tuned_hyperparams",
    "__version__",
]
