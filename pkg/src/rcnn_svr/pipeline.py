"""RCNN, SVR and RCNN-SVR forecasting pipelines.

Every pipeline standardizes factors and targets with training-set
statistics, fits in standardized units, and maps predictions back to the
original units.

* ``rcnn``: an eight-layer convolutional regression network trained end to end.
* ``svr``: linear epsilon-SVR on the standardized factors.
* ``rcnn-svr``: a deeper network is trained with a temporary
  fully-connected + regression head; the head is then ignored, activations
  of a mid layer (the dropout layer by default) are flattened into
  features, and an SVR is fitted on them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import neural_net as nn
from .dataio import Dataset, StandardizationStats, decode_array, encode_array, standardize
from .errors import DimensionMismatchError, InputTooShortError, InvalidExtractionLayerError
from .metrics import mse
from .svr import SvrHyperparams, SvrModel, fit_svr, predict_svr


class PipelineKind(str, enum.Enum):
    RCNN = "rcnn"
    SVR = "svr"
    RCNN_SVR = "rcnn-svr"


def build_rcnn_spec(input_length: int = 8) -> nn.NetworkSpec:
    """Conv1 -> ReLU -> Norm -> MaxPool1 -> Conv2 -> MaxPool2 -> FC -> Regression."""
    if input_length < 4:
        raise InputTooShortError(f"the RCNN needs at least 4 factors, got {input_length}")
    layers = (
        nn.conv(25, filter_size=1, name="conv1"),
        nn.relu(name="relu1"),
        nn.cross_channel_norm(name="norm1"),
        nn.max_pool(2, name="maxpool1"),
        nn.conv(25, filter_size=1, name="conv2"),
        nn.max_pool(2, name="maxpool2"),
        nn.fully_connected(1, name="fc"),
        nn.regression(name="regression"),
    )
    return nn.NetworkSpec((input_length, 1, 1), layers)


def build_rcnn_svr_spec(input_length: int = 8, keep_probability: float = 0.5) -> nn.NetworkSpec:
    """The feature network: three conv/pool stages (20, 25, 50 filters) and dropout.

    The trailing FC + regression pair only exists so the network can be
    trained; features are read before it.
    """
    if input_length < 8:
        raise InputTooShortError(f"the RCNN-SVR network needs at least 8 factors, got {input_length}")
    layers = (
        nn.conv(20, filter_size=1, name="conv1"),
        nn.relu(name="relu1"),
        nn.cross_channel_norm(name="norm1"),
        nn.max_pool(2, name="maxpool1"),
        nn.conv(25, filter_size=1, name="conv2"),
        nn.max_pool(2, name="maxpool2"),
        nn.conv(50, filter_size=1, name="conv3"),
        nn.max_pool(2, name="maxpool3"),
        nn.dropout(keep_probability, name="dropout"),
        nn.fully_connected(1, name="fc"),
        nn.regression(name="regression"),
    )
    return nn.NetworkSpec((input_length, 1, 1), layers)


def feature_layers(spec: nn.NetworkSpec) -> list[int]:
    """Indices of layers usable for feature extraction (everything before the head)."""
    out = []
    for i, layer in enumerate(spec.layers):
        if layer.kind in (nn.LayerKind.FULLY_CONNECTED, nn.LayerKind.REGRESSION):
            break
        out.append(i)
    return out


def default_extraction_layer(spec: nn.NetworkSpec) -> int:
    return feature_layers(spec)[-1]


@dataclass
class FittedPipeline:
    kind: PipelineKind
    scaler: StandardizationStats
    network_spec: Optional[nn.NetworkSpec] = None
    network_params: Optional[nn.NetworkParams] = None
    svr: Optional[SvrModel] = None
    extraction_layer: Optional[int] = None
    train_report: Optional[nn.TrainReport] = None
    factor_names: tuple = ()

    def __post_init__(self):
        has_net = self.network_spec is not None and self.network_params is not None
        has_svr = self.svr is not None
        expected = {
            PipelineKind.RCNN: (True, False),
            PipelineKind.SVR: (False, True),
            PipelineKind.RCNN_SVR: (True, True),
        }[self.kind]
        if (has_net, has_svr) != expected:
            raise ValueError(f"{self.kind.value} pipeline has network={has_net}, svr={has_svr}")
        if self.kind == PipelineKind.RCNN_SVR:
            if self.extraction_layer is None or not 0 <= self.extraction_layer < len(self.network_spec):
                raise InvalidExtractionLayerError(f"bad extraction layer {self.extraction_layer}")
        elif self.extraction_layer is not None:
            raise InvalidExtractionLayerError("only rcnn-svr pipelines take an extraction layer")

    @property
    def n_factors(self) -> int:
        return int(self.scaler.factor_mean.size)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "scaler": self.scaler.to_dict(),
            "factor_names": list(self.factor_names),
            "extraction_layer": self.extraction_layer,
        }
        if self.network_spec is not None:
            d["network"] = {
                "spec": self.network_spec.to_dict(),
                "weights": [None if w is None else encode_array(w) for w in self.network_params.weights],
                "biases": [None if b is None else encode_array(b) for b in self.network_params.biases],
            }
        if self.svr is not None:
            d["svr"] = {
                "weights": encode_array(self.svr.weights),
                "bias": float(self.svr.bias),
                "dual_coefficients": encode_array(self.svr.dual_coefficients),
                "converged": bool(self.svr.converged),
                "sweeps": int(self.svr.sweeps),
            }
        if self.train_report is not None:
            d["train_report"] = {
                "epochs_run": self.train_report.epochs_run,
                "mse_per_epoch": [float(v) for v in self.train_report.mse_per_epoch],
                "stop_reason": self.train_report.stop_reason.value,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedPipeline":
        spec = params = svr = report = None
        if d.get("network") is not None:
            net = d["network"]
            spec = nn.NetworkSpec.from_dict(net["spec"])
            params = nn.NetworkParams(
                [None if w is None else decode_array(w) for w in net["weights"]],
                [None if b is None else decode_array(b) for b in net["biases"]],
            )
            if params.shapes() != [None if s is None else (tuple(s[0]), tuple(s[1]))
                                   for s in spec.param_shapes()]:
                raise ValueError("stored parameters do not match the stored network spec")
        if d.get("svr") is not None:
            s = d["svr"]
            svr = SvrModel(decode_array(s["weights"]), float(s["bias"]),
                           decode_array(s["dual_coefficients"]), bool(s["converged"]), int(s["sweeps"]))
        if d.get("train_report") is not None:
            r = d["train_report"]
            report = nn.TrainReport(int(r["epochs_run"]), list(r["mse_per_epoch"]),
                                    nn.StopReason(r["stop_reason"]))
        return cls(
            kind=PipelineKind(d["kind"]),
            scaler=StandardizationStats.from_dict(d["scaler"]),
            network_spec=spec,
            network_params=params,
            svr=svr,
            extraction_layer=d.get("extraction_layer"),
            train_report=report,
            factor_names=tuple(d.get("factor_names", ())),
        )


def _train_network(spec, x_std, y_std, train_config):
    params = nn.init_network(spec, train_config.seed)
    return nn.train(spec, params, nn.factors_to_tensor(x_std), y_std, train_config)


def fit_pipeline(kind, dataset: Dataset, train_config: nn.TrainConfig = nn.TrainConfig(),
                 svr_hyperparams: SvrHyperparams = SvrHyperparams(),
                 extraction_layer: Optional[int] = None,
                 network_spec: Optional[nn.NetworkSpec] = None) -> FittedPipeline:
    """Fit one pipeline on ``dataset`` (which must carry targets).

    ``network_spec`` overrides the canonical architecture for the network
    kinds; its input length must equal the dataset's factor count.
    """
    kind = PipelineKind(kind)
    if extraction_layer is not None and kind != PipelineKind.RCNN_SVR:
        raise InvalidExtractionLayerError("extraction_layer only applies to rcnn-svr")
    stats, std = standardize(dataset)
    n_factors = std.factors.shape[1]
    common = dict(kind=kind, scaler=stats, factor_names=dataset.factor_names)

    if kind == PipelineKind.SVR:
        svr = fit_svr(std.factors, std.targets, svr_hyperparams)
        return FittedPipeline(svr=svr, **common)

    if network_spec is None:
        build = build_rcnn_spec if kind == PipelineKind.RCNN else build_rcnn_svr_spec
        network_spec = build(n_factors)
    elif network_spec.input_shape != (n_factors, 1, 1):
        raise DimensionMismatchError(
            f"network expects input {network_spec.input_shape}, data has {n_factors} factors"
        )

    if kind == PipelineKind.RCNN_SVR:
        eligible = feature_layers(network_spec)
        if extraction_layer is None:
            extraction_layer = eligible[-1]
        if extraction_layer not in eligible:
            raise InvalidExtractionLayerError(
                f"extraction layer {extraction_layer} not in eligible layers {eligible}"
            )

    params, report = _train_network(network_spec, std.factors, std.targets, train_config)
    if kind == PipelineKind.RCNN:
        return FittedPipeline(network_spec=network_spec, network_params=params,
                              train_report=report, **common)

    features = nn.extract_features(network_spec, params, nn.factors_to_tensor(std.factors),
                                   extraction_layer)
    svr = fit_svr(features, std.targets, svr_hyperparams)
    return FittedPipeline(network_spec=network_spec, network_params=params, svr=svr,
                          extraction_layer=extraction_layer, train_report=report, **common)


def _check_factors(p: FittedPipeline, factors) -> np.ndarray:
    x = np.asarray(factors, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != p.n_factors:
        raise DimensionMismatchError(
            f"pipeline was trained on {p.n_factors} factors, got input of shape {x.shape}"
        )
    return x


def pipeline_features(p: FittedPipeline, factors) -> np.ndarray:
    """The matrix the pipeline's SVR consumes for raw ``factors``."""
    x = p.scaler.apply_factors(_check_factors(p, factors))
    if p.kind == PipelineKind.SVR:
        return x
    if p.kind == PipelineKind.RCNN:
        raise ValueError("rcnn pipelines have no SVR features")
    return nn.extract_features(p.network_spec, p.network_params, nn.factors_to_tensor(x),
                               p.extraction_layer)


def predict_pipeline(p: FittedPipeline, factors) -> np.ndarray:
    """Electricity values, in original units, for each row of raw ``factors``."""
    x = p.scaler.apply_factors(_check_factors(p, factors))
    if p.kind == PipelineKind.RCNN:
        z = nn.predict(p.network_spec, p.network_params, nn.factors_to_tensor(x))[:, 0]
    elif p.kind == PipelineKind.SVR:
        z = predict_svr(p.svr, x)
    else:
        feats = nn.extract_features(p.network_spec, p.network_params, nn.factors_to_tensor(x),
                                    p.extraction_layer)
        z = predict_svr(p.svr, feats)
    return p.scaler.invert_targets(z)


@dataclass(frozen=True)
class SweepEntry:
    layer_index: int
    layer_name: str
    mse: float


def layer_sweep(train: Dataset, test: Dataset, train_config: nn.TrainConfig = nn.TrainConfig(),
                svr_hyperparams: SvrHyperparams = SvrHyperparams(),
                network_spec: Optional[nn.NetworkSpec] = None) -> list[SweepEntry]:
    """Test MSE (original units) of the RCNN-SVR pipeline for every extraction layer.

    Training is deterministic in the seed, so the network is trained once
    and shared; each entry differs only in the layer its features come from.
    """
    if not test.has_targets:
        raise ValueError("layer_sweep needs held-out targets")
    stats, std = standardize(train)
    if network_spec is None:
        network_spec = build_rcnn_svr_spec(std.factors.shape[1])
    params, _ = _train_network(network_spec, std.factors, std.targets, train_config)
    x_train = nn.factors_to_tensor(std.factors)
    x_test = nn.factors_to_tensor(stats.apply_factors(test.factors))
    names = network_spec.layer_names()
    out = []
    for i in feature_layers(network_spec):
        f_train = nn.extract_features(network_spec, params, x_train, i)
        f_test = nn.extract_features(network_spec, params, x_test, i)
        model = fit_svr(f_train, std.targets, svr_hyperparams)
        pred = stats.invert_targets(predict_svr(model, f_test))
        out.append(SweepEntry(i, names[i], mse(test.targets, pred)))
    return out
