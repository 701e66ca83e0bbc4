"""Tucker models with tensor-ring cores for link prediction in n-ary knowledge bases."""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (
    KnowledgeBase,
    SyntheticSpec,
    Vocab,
    generate_synthetic,
    kb_to_tensor,
    load_kb,
    load_kb_dir,
    split_dataset,
    write_kb,
    write_synthetic,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    DataError,
    DimensionError,
    DomainError,
    GetdError,
    InfeasibleError,
    VocabError,
)
from .evaluation import EvalReport, evaluate, filtered_ranks, rank_fact
from .expressiveness import construct_getd_exact, construct_ntucker_exact, cp_decompose_binary, cp_to_tr
from .filtering import FilterIndex, build_filter_index, build_filter_indices
from .models import (
    Fact,
    GetdModel,
    NCpModel,
    NTuckerModel,
    ParamCount,
    init_model,
    param_count,
    param_count_for,
    score,
    score_all,
    score_getd,
    score_ncp,
    score_ntucker,
)
from .tensor_core import (
    CpFactors,
    TensorRing,
    cp_reconstruct,
    mode_product,
    tr_element,
    tr_reconstruct,
    tucker_reconstruct,
)
from .training import AdamState, TrainConfig, TrainHistory, adam_step, batch_gradients, fact_loss, train
