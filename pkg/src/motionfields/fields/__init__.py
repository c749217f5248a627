"""Distance fields: networks, analytic doubles, encodings and training."""
from .base import (
    CorpusField,
    DistanceField,
    IdentityField,
    MlpField,
    ZeroField,
    analytic_corpus_field,
    analytic_identity_field,
    axial_grads,
    field_rgrad_pose,
    load_field,
    save_field,
)
from .encoding import decode_inputs, encode_inputs, input_dim
from .mining import concat_labeled, descend_inputs, mine_hard_negatives
from .mlp import Mlp, mlp_forward, mlp_grad_input, mlp_grad_weights
from .train import TrainConfig, TrainReport, pearson, train_field

__all__ = [
    "CorpusField", "DistanceField", "IdentityField", "MlpField", "ZeroField",
    "analytic_corpus_field", "analytic_identity_field", "axial_grads", "field_rgrad_pose",
    "load_field", "save_field", "decode_inputs", "encode_inputs", "input_dim",
    "concat_labeled", "descend_inputs", "mine_hard_negatives",
    "Mlp", "mlp_forward", "mlp_grad_input", "mlp_grad_weights",
    "TrainConfig", "TrainReport", "pearson", "train_field",
]
