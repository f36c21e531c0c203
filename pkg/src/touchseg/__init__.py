"""Online refinement of a toy semantic-segmentation model via touch-driven
weight imprinting: a human marks misclassified plant regions by (simulated)
touch, the interaction becomes training masks through an RGB-D/voxel
pipeline, and a new classifier weight is imprinted by robust average pooling
with no backpropagation at refinement time.
"""

from .errors import (
    CorruptCheckpoint,
    DegeneratePrototype,
    EmptyMask,
    InvalidInput,
    NumericalFailure,
    TouchsegError,
    UnsupportedVersion,
)
from .model import (
    CosineClassifier,
    ExtractorParams,
    FeatureMap,
    LossReport,
    PretrainConfig,
    SegModel,
    arcface_loss,
    cosine_logits,
    extract_features,
    predict,
    pretrain,
    train_step,
)
from .imprinting import (
    MAP,
    RAP,
    PooledPrototype,
    SupportSet,
    imprint,
    masked_average_pool,
    pool,
    robust_average_pool,
)
from .geometry import (
    CameraIntrinsics,
    VoxelGrid,
    deproject,
    filter_training_mask,
    frame_interaction_mask,
    mark_interacted,
    temporal_or,
)
from .synthetic import (
    CLASS_NAMES,
    HandTrajectory,
    SceneSpec,
    SyntheticScene,
    generate_scene,
    mark_trajectory,
    noisy_depth_frames,
    simulate_touch,
)
from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics
from .distill import DistillConfig, distill_finetune
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    SweepReport,
    evaluate_on,
    margin_sweep,
    run_experiment,
)
from .checkpoint import checkpoint_load, checkpoint_save, models_equal
from .session import Session

__version__ = "0.1.0"
