from .params import (  # noqa: F401
    MlpDescriptor,
    ModelParams,
    TransformerDescriptor,
    init_mlp_params,
    init_transformer_params,
    load_checkpoint,
    save_checkpoint,
)
from .models import (  # noqa: F401
    attention_block_forward,
    bw_field_forward,
    fourier_time_features,
    mlp_forward,
    pc_field_forward,
)
from .optim import OptimizerState, adam_step  # noqa: F401
from .tape import Tape, backward  # noqa: F401
