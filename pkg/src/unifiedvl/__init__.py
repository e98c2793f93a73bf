"""Unified image-text vocabulary tooling: coordinate grammar, mask and depth
codecs, a vision tokenizer, dense decoding from token logits, VLUAS / NTP-M
losses, a toy decoder and RL reward math."""

from .vocab import Axis, TokenClass, UnifiedVocab, VocabConfig, build_vocab
from .grammar import (
    BoundingBox,
    CropTransform,
    Detection,
    InstanceOutline,
    Polygon,
    PoseInstance,
    compress_polygon,
    crop_transform,
    emit_structured,
    expand_box,
    parse_structured,
)
from .rle import rle_decode, rle_encode
from .depth import BUILTIN_SPECS, QuantSpec, dequantize, quantize
from .tokenizer import (
    Codebook,
    FeatureGrid,
    FusionWeights,
    codebook_utilization,
    cross_attention_fuse,
    quantize_ibq,
    tokenize_image,
    tokenizer_losses,
)
from .dense import (
    DecodeConfig,
    LogitTensor,
    aggregate_category_logits,
    bilinear_resize,
    decode_depth,
    decode_semseg,
    decode_semseg_background,
    grounding_then_segment,
)
from .losses import LossBreakdown, ntp_m_loss, select_hard_negatives, vluas_loss
from .metrics import box_iou, ciou, delta1, map_coco, match_pose_by_center, miou, nms_multiscale, pckh, polygon_iou
from .rewards import (
    FilterConfig,
    RolloutGroup,
    aux_rewards,
    dapo_objective,
    filter_rollout_groups,
    kl_metric,
    task_reward,
)
from .scaling import FitResult, fit_power_law

__version__ = "0.1.0"
