"""Knowledge graph embeddings trained with interchangeable negative samplers."""

from kgneg.evaluation import MetricsReport, evaluate, hits_at_k, mrr, rank_triple
from kgneg.graph import (
    DatasetStats,
    Triple,
    TripleStore,
    TypeCatalog,
    Vocabulary,
    build_indexes,
    compute_stats,
    load_dataset,
    load_split,
    load_type_catalog,
)
from kgneg.knn import KnnIndex, build_knn_index
from kgneg.models import (
    Family,
    MarginLossConfig,
    ModelParams,
    init_params,
    loss_gradients,
    margin_loss,
    predicted_vectors,
    score,
    score_candidates,
)
from kgneg.optim import AdamState, TrainConfig, adam_step, fine_tune, train
from kgneg.samplers import NegativeBatch, make_sampler

__version__ = "0.1.0"
