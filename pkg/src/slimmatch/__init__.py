"""slimmatch: detector-free local feature matching at desk scale.

A numpy-backed library implementing the full matching pipeline -- CNN+FPN
encoder, multi-scale feature transition, linear-complexity vector attention
with rotary relative position encoding, coarse dual-softmax matching, fine
window refinement, the training loss stack, homography/pose metrics, a
synthetic planar-scene generator, and an attention-scaling benchmark -- all
on a minimal reverse-mode autodiff core.
"""

from .attention import (
    RopeTable,
    TokenSeq,
    attention_layer,
    feed_forward,
    interleave,
    rope_encode,
    vector_attention,
)
from .backbone import BackboneConfig, FeaturePyramid, extract_features, grid_keypoints
from .bench import bench_attention_scaling
from .geometry import (
    auc_at_thresholds,
    ccm,
    homography_apply,
    homography_dlt,
    mma,
    pose_error,
)
from .losses import (
    GroundTruthLabels,
    LossWeights,
    classification_loss,
    gt_coarse_labels,
    matching_loss,
    regression_loss,
    total_loss,
)
from .matching import (
    AssignmentMatrix,
    FineWindows,
    MatchSet,
    assemble_fine_matches,
    assignment_matrix,
    crop_fine_windows,
    dual_softmax,
    extract_coarse_matches,
    fine_refine,
    score_matrix,
)
from .pipeline import (
    ModelParams,
    RunConfig,
    deep_config,
    init_model,
    match_pair,
    standard_config,
    tiny_config,
    train,
)
from .synth import HomographyLimits, PlanarScene, gen_texture, make_pair, sample_homography, warp_bilinear
from .tensor import DiffTensor, FlopLedger, record_flops, finite_diff_check

__version__ = "0.1.0"
