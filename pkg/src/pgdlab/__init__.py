"""White-box PGD adversarial attacks on small image classifiers, from first principles."""

from .analytics import (
    BinReport,
    SuccessCurve,
    bin_by_confidence,
    is_successful,
    success_by_iteration,
    success_rate,
)
from .attack import AttackConfig, AttackTrace, attack_dataset, attack_image, clip_to_ball, pgd_step
from .classifier import (
    AdamConfig,
    ClassifierModel,
    TrainConfig,
    adam_step,
    load_checkpoint,
    predict,
    save_checkpoint,
    split,
    train,
)
from .datagen import Dataset, Image, augment, gen_shape_dataset, gen_texture_dataset, load_image, save_image
from .tensor import Tape, Tensor, backward, softmax, tensor_op

__version__ = "0.1.0"
