"""Context-conditioned diffusion transformer, training and sampling."""

from .dit import (  # noqa: F401
    ContextDiT,
    ModelConfig,
    TokenSequence,
    assemble_sequence,
    param_groups,
    patchify,
    unpatchify,
    zero_model_,
)
from .training import (  # noqa: F401
    TrainConfig,
    TrainExample,
    TrainState,
    checkpoint_bytes,
    eval_loss,
    load_checkpoint,
    prepare_condition,
    prepare_example,
    sample,
    save_checkpoint,
    shuffle_context,
    train,
    training_step,
)
