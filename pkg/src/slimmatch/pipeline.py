"""End-to-end model assembly: configuration, forward passes, and training.

The full pipeline is encoder -> feature transition -> interleaved attention
-> coarse matching -> fine refinement. Training uses plain gradient descent
with global gradient-norm clipping; the coarse stage is supervised by the
focal matching loss and the fine stage by ground-truth offsets/confidences
at the ground-truth coarse matches (predicted matches are too scarce to
drive the fine branch early in training).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import (
    LayerRoles,
    TokenSeq,
    init_layer_roles,
    interleave,
    sinusoidal_encoding,
)
from .backbone import (
    TINY_BACKBONE,
    BackboneConfig,
    BackboneParams,
    FeaturePyramid,
    extract_features,
    init_backbone,
)
from .geometry import invert_homography
from .losses import (
    GroundTruthLabels,
    LossWeights,
    classification_loss,
    gt_coarse_labels,
    gt_fine_labels,
    matching_loss,
    regression_loss,
    total_loss,
)
from .matching import (
    FineHeadParams,
    MatchSet,
    assemble_fine_matches,
    crop_fine_windows,
    dual_softmax,
    extract_coarse_matches,
    fine_refine,
    init_fine_head,
    score_matrix,
)
from .rng import Xorshift64Star
from .synth import PlanarScene
from .tensor import DiffTensor
from .transition import TransitionParams, feature_transition, init_transition

ROPE_MODES = ("relative", "absolute", "none")
GRAD_CLIP_NORM = 0.5


@dataclass
class RunConfig:
    """All pipeline knobs; defaults mirror the full-scale configuration."""

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    layers: int = 6
    fine_layers: int = 1
    ffn_scale: int = 4
    heads: int = 1
    match_threshold: float = 0.2
    window: int = 5
    fine_conf_gate: float = 0.5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    rope_mode: str = "relative"
    layer_scale_enabled: bool = True
    score_scaled: bool = True
    strict_matching_normalizer: bool = False  # literal N-K negative normalizer
    seed: int = 0
    learning_rate: float = 0.1
    epochs: int = 30
    lr_decay_every: int = 0   # halve the rate every this many epochs (0 = never)
    lr_decay_factor: float = 0.5
    weight_decay: float = 0.0  # decoupled; skips biases, norms, layer scales
    alternate_directions: bool = False  # odd epochs train B->A with H^-1

    def __post_init__(self):
        if self.rope_mode not in ROPE_MODES:
            raise ValueError(f"rope_mode must be one of {ROPE_MODES}")
        if self.layers < 1 or self.fine_layers < 1:
            raise ValueError("layer counts must be at least 1")
        if self.window % 2 == 0:
            raise ValueError("window size must be odd")


def standard_config(**overrides) -> RunConfig:
    """Full-scale preset: 6 interleave depths."""
    return RunConfig(**overrides)


def deep_config(**overrides) -> RunConfig:
    """Full-scale preset with 10 interleave depths."""
    overrides.setdefault("layers", 10)
    return RunConfig(**overrides)


def tiny_config(**overrides) -> RunConfig:
    """Desk-scale preset used by the test and acceptance suites."""
    overrides.setdefault("backbone", TINY_BACKBONE)
    overrides.setdefault("layers", 2)
    overrides.setdefault("fine_layers", 1)
    return RunConfig(**overrides)


@dataclass
class ModelParams:
    backbone: BackboneParams
    transition: TransitionParams
    coarse_layers: list[LayerRoles]
    fine_layers: list[LayerRoles]
    fine_head: FineHeadParams

    def named_leaves(self) -> list[tuple[str, DiffTensor]]:
        out = self.backbone.leaves("backbone")
        out += self.transition.leaves("transition")
        for i, roles in enumerate(self.coarse_layers):
            out += roles.leaves(f"coarse.{i}")
        for i, roles in enumerate(self.fine_layers):
            out += roles.leaves(f"fine.{i}")
        out += self.fine_head.leaves("fine_head")
        return out

    def leaves(self) -> list[DiffTensor]:
        return [leaf for _, leaf in self.named_leaves()]


def init_model(cfg: RunConfig) -> ModelParams:
    rng = Xorshift64Star(cfg.seed)
    trainable_scale = cfg.layer_scale_enabled
    ch = cfg.backbone.coarse_channels
    cf = cfg.backbone.fine_channels
    return ModelParams(
        backbone=init_backbone(cfg.backbone, rng),
        transition=init_transition(ch, rng),
        coarse_layers=[init_layer_roles(ch, cfg.ffn_scale, rng, trainable_scale,
                                        cfg.heads)
                       for _ in range(cfg.layers)],
        fine_layers=[init_layer_roles(cf, cfg.ffn_scale, rng, trainable_scale,
                                      cfg.heads)
                     for _ in range(cfg.fine_layers)],
        fine_head=init_fine_head(cf, rng),
    )


def _flatten_tokens(feature_map: DiffTensor) -> TokenSeq:
    c, h, w = feature_map.shape
    tokens = T.transpose(T.reshape(feature_map, (c, h * w)))
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    return TokenSeq(tokens, np.stack([rows, cols], axis=1))


@dataclass
class PairForward:
    """Intermediates of one image-pair forward pass."""

    pyramid_a: FeaturePyramid
    pyramid_b: FeaturePyramid
    tokens_a: TokenSeq
    tokens_b: TokenSeq
    assignment: DiffTensor


def encode_pair(img_a: np.ndarray, img_b: np.ndarray, params: ModelParams,
                cfg: RunConfig) -> PairForward:
    """Everything up to the soft assignment matrix."""
    pyr_a = extract_features(img_a, params.backbone, cfg.backbone)
    pyr_b = extract_features(img_b, params.backbone, cfg.backbone)
    seq_a = _flatten_tokens(feature_transition(pyr_a.coarse, params.transition))
    seq_b = _flatten_tokens(feature_transition(pyr_b.coarse, params.transition))

    if cfg.rope_mode == "absolute":
        pe_a = DiffTensor(sinusoidal_encoding(seq_a.coords, seq_a.channels))
        pe_b = DiffTensor(sinusoidal_encoding(seq_b.coords, seq_b.channels))
        seq_a = TokenSeq(T.add(seq_a.tokens, pe_a), seq_a.coords)
        seq_b = TokenSeq(T.add(seq_b.tokens, pe_b), seq_b.coords)
    use_rope = cfg.rope_mode == "relative"

    enh_a, enh_b = interleave(seq_a, seq_b, params.coarse_layers, use_rope=use_rope)
    scores = score_matrix(enh_a.tokens, enh_b.tokens, scaled=cfg.score_scaled)
    return PairForward(pyr_a, pyr_b, enh_a, enh_b, dual_softmax(scores))


def refine_matches(fwd: PairForward, coarse: MatchSet, params: ModelParams,
                   cfg: RunConfig):
    """Fine offsets and confidences for a non-empty coarse match set."""
    wins = crop_fine_windows(coarse, fwd.pyramid_a.fine, fwd.pyramid_b.fine,
                             cfg.window)
    return fine_refine(wins, params.fine_layers, params.fine_head,
                       use_rope=cfg.rope_mode == "relative")


def match_pair(img_a: np.ndarray, img_b: np.ndarray, params: ModelParams,
               cfg: RunConfig) -> tuple[MatchSet, MatchSet]:
    """Inference: coarse matches plus their fine-refined counterparts."""
    fwd = encode_pair(img_a, img_b, params, cfg)
    coarse = extract_coarse_matches(fwd.assignment, cfg.match_threshold,
                                    fwd.pyramid_a.keypoints, fwd.pyramid_b.keypoints)
    if len(coarse) == 0:
        empty = MatchSet(points_a=np.zeros((0, 2)), points_b=np.zeros((0, 2)),
                         confidence=np.zeros(0), level="fine")
        return coarse, empty
    delta, conf = refine_matches(fwd, coarse, params, cfg)
    fine = assemble_fine_matches(coarse, delta, conf, cfg.fine_conf_gate)
    return coarse, fine


def pair_loss(scene: PlanarScene, params: ModelParams, cfg: RunConfig) -> DiffTensor:
    """Differentiable total loss for one training scene."""
    fwd = encode_pair(scene.image_a, scene.image_b, params, cfg)
    gt = scene.gt_labels.match_indices
    loss_m = matching_loss(fwd.assignment, gt, cfg.loss_weights,
                           strict_literal_normalizer=cfg.strict_matching_normalizer)

    points_a = fwd.pyramid_a.keypoints[gt[:, 0]]
    points_b = fwd.pyramid_b.keypoints[gt[:, 1]]
    gt_coarse = MatchSet(points_a=points_a, points_b=points_b,
                         confidence=np.ones(len(gt)), level="coarse",
                         index_pairs=gt)
    delta, conf = refine_matches(fwd, gt_coarse, params, cfg)
    offsets, conf_gt, valid = gt_fine_labels(scene.h_mat, points_a, points_b,
                                             cfg.loss_weights.offset_limit)
    loss_r = regression_loss(delta, offsets, valid)
    loss_c = classification_loss(conf, conf_gt)
    return total_loss(loss_m, loss_r, loss_c, cfg.loss_weights)


def clip_gradients(params: ModelParams, max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`."""
    total = 0.0
    leaves = params.leaves()
    for p in leaves:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in leaves:
            if p.grad is not None:
                p.grad *= factor
    return norm


_NO_DECAY_SUFFIXES = (".bias", ".gain", ".shift", "layer_scale")


def sgd_step(params: ModelParams, learning_rate: float,
             weight_decay: float = 0.0) -> None:
    for name, p in params.named_leaves():
        if not p.requires_grad:
            continue
        if p.grad is not None:
            p.data -= learning_rate * p.grad
        if weight_decay and not name.endswith(_NO_DECAY_SUFFIXES):
            p.data -= learning_rate * weight_decay * p.data
    T.zero_grads(params.leaves())


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the last good params."""

    def __init__(self, epoch: int, checkpoint: ModelParams):
        super().__init__(f"loss became non-finite during epoch {epoch}")
        self.epoch = epoch
        self.checkpoint = checkpoint


def reverse_scene(scene: PlanarScene) -> PlanarScene:
    """The same scene viewed the other way round (second image first)."""
    h_inv = invert_homography(scene.h_mat)
    pairs = gt_coarse_labels(h_inv, scene.image_b.shape, scene.image_a.shape)
    return PlanarScene(image_a=scene.image_b, image_b=scene.image_a,
                       h_mat=h_inv, seed=scene.seed,
                       gt_labels=GroundTruthLabels(match_indices=pairs))


def _copy_params(params: ModelParams, cfg: RunConfig) -> ModelParams:
    fresh = init_model(cfg)
    for (_, src), (_, dst) in zip(params.named_leaves(), fresh.named_leaves()):
        dst.data = src.data.copy()
    return fresh


def train(scenes: list[PlanarScene], cfg: RunConfig,
          params: ModelParams | None = None,
          log=None) -> tuple[ModelParams, list[float]]:
    """Gradient-descent training loop over the scene list.

    Returns the trained parameters and per-epoch mean total losses. On a
    non-finite loss the last epoch's checkpoint is attached to the raised
    TrainingDiverged.
    """
    if params is None:
        params = init_model(cfg)
    history = []
    checkpoint = _copy_params(params, cfg)
    rate = cfg.learning_rate
    order_rng = Xorshift64Star(cfg.seed ^ 0x5EED0F5EED0F5EED)
    reversed_scenes = None
    if cfg.alternate_directions:
        reversed_scenes = [reverse_scene(s) for s in scenes]
        reversed_scenes = [r if len(r.gt_labels.match_indices) else s
                           for r, s in zip(reversed_scenes, scenes)]
    for epoch in range(cfg.epochs):
        if cfg.lr_decay_every and epoch and epoch % cfg.lr_decay_every == 0:
            rate *= cfg.lr_decay_factor
        epoch_scenes = scenes
        if reversed_scenes is not None and epoch % 2 == 1:
            epoch_scenes = reversed_scenes
        # deterministic Fisher-Yates reshuffle each epoch
        order = list(range(len(epoch_scenes)))
        for i in range(len(order) - 1, 0, -1):
            j = order_rng.integer(i + 1)
            order[i], order[j] = order[j], order[i]
        epoch_losses = []
        for scene in (epoch_scenes[i] for i in order):
            loss = pair_loss(scene, params, cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, checkpoint)
            loss.backward()
            clip_gradients(params)
            sgd_step(params, rate, cfg.weight_decay)
            epoch_losses.append(value)
        mean_loss = float(np.mean(epoch_losses))
        history.append(mean_loss)
        checkpoint = _copy_params(params, cfg)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {mean_loss:.6f} lr {rate:g}")
    return params, history


def coarse_precision(scenes: list[PlanarScene], params: ModelParams,
                     cfg: RunConfig) -> float:
    """Fraction of predicted coarse matches that are ground-truth pairs."""
    hits = 0
    predicted = 0
    for scene in scenes:
        coarse, _ = match_pair(scene.image_a, scene.image_b, params, cfg)
        gt = {tuple(p) for p in scene.gt_labels.match_indices}
        predicted += len(coarse)
        hits += sum(1 for p in coarse.index_pairs if tuple(p) in gt)
    return hits / predicted if predicted else 0.0
