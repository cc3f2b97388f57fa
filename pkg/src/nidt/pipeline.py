"""Source-domain training pipeline: encode, score, select, scale, train."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .config import RunConfig
from .dataset import UNSW_NB15, ColumnSchema, EncodingMap, FlowRecord, fit_encoding, to_matrix
from .features import (
    ExtraTreesConfig,
    FeatureSelection,
    ImportanceReport,
    ScalerParams,
    fit_importance,
    fit_scaler,
    select_top_k,
    transform,
)
from .model import Family, Model, TrainConfig, TrainReport, build, train

log = logging.getLogger(__name__)


@dataclass
class SourceArtifacts:
    model: Model
    encoding: EncodingMap
    importance: ImportanceReport
    selection: FeatureSelection
    scaler: ScalerParams
    report: TrainReport
    schema: ColumnSchema

    def metadata(self, n_train: int, n_val: int, seed: int) -> dict:
        return {
            "seed": seed,
            "train_count": n_train,
            "val_count": n_val,
            "best_epoch": self.report.best_epoch,
            "best_val_acc": self.report.best_val_acc,
        }


def tree_config(cfg: RunConfig) -> ExtraTreesConfig:
    return ExtraTreesConfig(
        n_trees=cfg.n_trees,
        max_features=cfg.max_features or None,
        min_samples_split=cfg.min_samples_split,
        seed=cfg.seed,
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        early_stop_patience=cfg.patience,
        dropout_rate=cfg.dropout,
        seed=cfg.seed,
        threshold=cfg.threshold,
    )


def fit_source(
    train_records: Sequence[FlowRecord],
    val_records: Sequence[FlowRecord],
    family: "Family | str" = Family.CNN_LSTM,
    cfg: RunConfig = RunConfig(),
    schema: ColumnSchema = UNSW_NB15,
) -> SourceArtifacts:
    """Everything the source domain produces. Encoding, importance and scaler
    see training rows only; validation rows drive early stopping."""
    encoding = fit_encoding(train_records, schema=schema)
    X_tr, y_tr = to_matrix(train_records, encoding, schema)
    X_va, y_va = to_matrix(val_records, encoding, schema)
    log.info("scoring %d features on %d rows", X_tr.shape[1], X_tr.shape[0])
    importance = fit_importance(X_tr, y_tr, tree_config(cfg))
    selection = select_top_k(importance, cfg.k)
    scaler = fit_scaler(X_tr, selection)
    S_tr = transform(X_tr, selection, scaler, clip=cfg.clip)
    S_va = transform(X_va, selection, scaler, clip=cfg.clip)
    net = build(family, selection.k, seed=cfg.seed, dropout=cfg.dropout)
    model, report = train(net, (S_tr.values, y_tr), (S_va.values, y_va), train_config(cfg))
    return SourceArtifacts(model, encoding, importance, selection, scaler, report, schema)
