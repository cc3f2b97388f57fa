"""Network intrusion detection with a CNN-LSTM trained in a source domain and
shipped, frozen, to a resource-constrained target domain."""

from .dataset import (
    UNSW_NB15,
    ColumnSchema,
    EncodingMap,
    FeatureMatrix,
    FlowRecord,
    SplitSpec,
    fit_encoding,
    load_csv,
    load_schema,
    split,
    to_matrix,
    write_csv,
)
from .evaluation import auc, benchmark, confusion, evaluate, roc
from .features import ExtraTreesConfig, fit_importance, fit_scaler, select_top_k, transform
from .model import Family, TrainConfig, build, classify, predict_proba, train
from .transfer import InferenceEngine, export_bundle, import_bundle, infer

__version__ = "0.1.0"
