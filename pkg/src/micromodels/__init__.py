"""Micromodels: frozen task-agnostic classifiers aggregated into interpretable
features for an explainable boosting machine."""

from .aggregation import (
    AggregatorSpec,
    FeatureVector,
    MicromodelFeaturizer,
    aggregate_maxpool,
    aggregate_ratio,
    aggregate_window,
    featurize,
)
from .core import Corpus, Instance, Lexicon, Utterance, load_corpus, load_instances, tokenize
from .ebm import (
    EbmModel,
    ExplainableBoostingClassifier,
    Explanation,
    ShapeFunction,
    export_shape,
    global_importance,
    local_explanation,
    predict,
    train_ebm,
)
from .embedding import EmbeddingProvider, FallbackEmbedder, RemoteEmbedder
from .evaluation import CurveConfig, learning_curve, macro_f1, roc_auc
from .models import (
    HitVector,
    MicromodelRegistry,
    MicromodelSpec,
    run_micromodel,
    train_svm_micromodel,
)
from .pipeline import (
    MicromodelClassifier,
    ProvenanceStore,
    TaskRun,
    classify,
    explain,
    run_training,
    top_features_report,
)
from .query import eval_query, parse_query

__version__ = "0.1.0"
