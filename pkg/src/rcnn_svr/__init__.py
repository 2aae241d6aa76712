"""Electricity consumption forecasting with RCNN, linear SVR and the RCNN-SVR hybrid."""

from .dataio import Dataset, SplitSpec, generate_synthetic, load_csv, load_model, save_model, split
from .metrics import EvalReport, cv_rmse, evaluate, mape, mse
from .neural_net import NetworkSpec, TrainConfig, TrainReport
from .pipeline import (
    FittedPipeline,
    PipelineKind,
    build_rcnn_spec,
    build_rcnn_svr_spec,
    fit_pipeline,
    layer_sweep,
    predict_pipeline,
)
from .svr import SvrHyperparams, SvrModel, fit_svr, predict_svr

__version__ = "0.1.0"
