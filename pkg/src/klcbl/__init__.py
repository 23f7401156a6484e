"""Multichannel text classifier: CNN and BiLSTM channels over precomputed
sentence embeddings, fused with the pooled vector and classified by a
B-spline Kolmogorov-Arnold head (or a dense baseline), with training,
metrics, ablation, and sweep tooling."""

from .cnn import ConvConfig, ConvWeights, conv1d_forward, global_max_pool, init_conv_weights
from .data import (
    CLASS_NAMES,
    DatasetError,
    DatasetSplit,
    EmbeddedExample,
    InterchangeError,
    RawExample,
    embed_examples,
    hash_embed,
    read_dataset,
    read_embedding_file,
    split_dataset,
    write_embedding_file,
)
from .kan import (
    DenseHead,
    HeadConfig,
    KanEdge,
    KanHead,
    KanLayer,
    SplineGrid,
    bspline_basis,
    dense_head_forward,
    init_head,
    init_kan_layer,
    kan_edge_eval,
    kan_head_forward,
    kan_layer_forward,
    param_count,
    silu,
)
from .lstm import LstmConfig, LstmWeights, bilstm_forward, init_lstm_weights, lstm_cell_step
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accuracy,
    average_loss,
    confusion,
    evaluate_model,
    per_class_prf,
    weighted_prf,
)
from .model import (
    AdamState,
    KlcblModel,
    ModelConfig,
    TrainConfig,
    TrainReport,
    adam_step,
    cross_entropy,
    fit,
    forward_batch,
    init_model,
    klcbl_forward,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .tensor import (
    GradTape,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    check_gradients,
    concat,
    elementwise,
    matmul,
    no_grad,
    precision,
    set_default_dtype,
)

__version__ = "0.1.0"
