"""Compilers that emit explicit transformer weights realizing classical
algorithms: EM for GMMs on softmax attention, and cubic tensor power
iteration on ReLU attention, plus the ReLU scalar approximators the EM
construction needs."""

from ..relu_approx import ReluScalarApprox, build_relu_approx
from .em_tf import (
    EmSlotLayout,
    EmTfConfig,
    build_em_readout,
    build_em_tf_weights,
    encode_em_input,
    run_tf_em,
)
from .tensor_tf import (
    TensorSlotLayout,
    build_tensor_power_tf,
    encode_tensor_input,
    run_tf_tensor_power,
)

__all__ = [
    "ReluScalarApprox",
    "build_relu_approx",
    "EmSlotLayout",
    "EmTfConfig",
    "build_em_readout",
    "build_em_tf_weights",
    "encode_em_input",
    "run_tf_em",
    "TensorSlotLayout",
    "build_tensor_power_tf",
    "encode_tensor_input",
    "run_tf_tensor_power",
]
