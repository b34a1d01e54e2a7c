"""Multi-scenario massive-MIMO CSI feedback workbench."""

from .channel import (ArrayConfig, ChannelSample, CsiDataset, PathCluster,
                      SubregionConfig, array_response, generate_channel,
                      generate_dataset)
from .models import ArchSpec, build_decoder, build_encoder, build_gatenet
from .preprocess import (AngleDelayCsi, NormParams, denormalize,
                         fit_normalizer, split_normalize, to_angle_delay,
                         truncate)
from .training import (ModeBundle, TaskData, TrainConfig, TrainingDiverged,
                       build_bundle, infer, train_gatenet, train_m2m,
                       train_s2m_joint, train_s2s)

__version__ = "0.1.0"
