"""End-to-end training loop and evaluation orchestration.

For every target frame the loop predicts multi-scale disparity, relative
poses to the two adjacent source frames, and reflectance/shading
decompositions; warps each source's reconstructed frame (and its
reflectance) into the target view with the predicted depth and pose; and
minimizes the weighted sum of reconstruction, reflectance-consistency,
warped-synthesis, and mask-guided smoothness terms. Runs are deterministic
given the config seed, and frozen parameters are checksum-verified every
epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adapters import InitScheme, InitVariant
from .autodiff import Tensor
from .blocks import DecompositionNet, PoseNet, ToyDepthNet, disparity_to_depth, reconstruct
from .checkpoint import load_checkpoint, restore_module, save_checkpoint
from .config import TrainConfig
from .evalmetrics import DepthEvalReport, Trajectory, ate_5frame, evaluate_depth
from .geometry import PoseSE3, rotation_from_axis_angle, warp_frame
from .losses import SemanticMaskSet, masked_smoothness_loss, reconstruction_loss, ssim, total_loss
from .nn import Module, frozen_checksums
from .optim import Adam


class ModelBundle(Module):
    """Depth network, pose head, and decomposition head under one parameter
    namespace. Base weights depend only on the seed, never on the adapter
    mode, so adapter ablations share their frozen starting point."""

    def __init__(self, config: TrainConfig, image_hw: tuple[int, int]):
        rng = np.random.default_rng(config.seed)
        self.depth = ToyDepthNet(
            image_hw,
            rng,
            embed_dim=config.embed_dim,
            depth_blocks=config.depth_blocks,
            heads=config.heads,
            patch=config.patch,
            mixer_after=config.mixer_after,
            adapter_mode=config.adapter,
            rank=config.rank,
            scheme=InitScheme(InitVariant(config.init), config.seed),
            d_min=config.d_min,
            d_max=config.d_max,
        )
        self.pose = PoseNet(rng)
        self.decomp = DecompositionNet(rng)
        self.config = config

    def predict_depth(self, image: Tensor) -> Tensor:
        """Full-resolution depth from the finest disparity scale."""
        disp = self.depth(image)[0]
        return disparity_to_depth(disp, self.config.d_min, self.config.d_max)


@dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    loss: float
    reconstruction: float
    reflectance: float
    synthesis: float
    smoothness: float
    val_abs_rel: float

    def as_line(self) -> str:
        return (
            f"epoch={self.epoch} step={self.step} lr={self.lr:.8g} loss={self.loss:.8g} "
            f"reconstruction={self.reconstruction:.8g} reflectance={self.reflectance:.8g} "
            f"synthesis={self.synthesis:.8g} smoothness={self.smoothness:.8g} "
            f"val_abs_rel={self.val_abs_rel:.8g}"
        )


def _elementwise_min(a: Tensor, b: Tensor) -> Tensor:
    pick_a = a.data <= b.data
    return ad.mask_fill(a, ~pick_a, 0.0) + ad.mask_fill(b, pick_a, 0.0)


def _photometric_map(a: Tensor, b: Tensor, alpha: float, validity: np.ndarray) -> Tensor:
    """Per-pixel alpha*(1-SSIM)/2 + (1-alpha)*L1 map; invalid pixels get a
    large constant so a per-pixel minimum ignores them."""
    _, ssim_map = ssim(a, b)
    l1_map = ad.tmean(ad.tabs(a - b), axis=0)
    pix = alpha * ((1.0 - ssim_map) * 0.5) + (1.0 - alpha) * l1_map
    return ad.mask_fill(pix, validity < 0.5, 1e6)


def _upsampled_depths(model: ModelBundle, image: Tensor) -> list[Tensor]:
    """Depth per requested scale, each upsampled to full resolution first."""
    cfg = model.config
    disps = model.depth(image)[: cfg.loss_scales]
    depths = []
    for level, disp in enumerate(disps):
        for _ in range(level):
            disp = ad.upsample_nearest2x(disp)
        depths.append(disparity_to_depth(disp, cfg.d_min, cfg.d_max))
    return depths


class _FrameCache:
    """Per-batch cache of frame tensors and decompositions; parameters are
    fixed within one optimizer step, so sub-graphs can be shared across the
    batched targets."""

    def __init__(self, model: ModelBundle, scene):
        self.model = model
        self.scene = scene
        self.images: dict[int, Tensor] = {}
        self.decomps: dict[int, tuple[Tensor, Tensor]] = {}

    def image(self, k: int) -> Tensor:
        if k not in self.images:
            self.images[k] = Tensor(self.scene.frames[k])
        return self.images[k]

    def decomp(self, k: int) -> tuple[Tensor, Tensor]:
        if k not in self.decomps:
            self.decomps[k] = self.model.decomp(self.image(k))
        return self.decomps[k]


def step_loss(model: ModelBundle, scene, t: int, weights, cache: "_FrameCache | None" = None):
    """Assemble the full objective for one target frame."""
    cfg = model.config
    cam = scene.cam
    cache = cache or _FrameCache(model, scene)
    stride = cfg.triplet_stride
    sources = [t - stride, t + stride]
    img_t = cache.image(t)
    masks = SemanticMaskSet(scene.labels[t])

    depths = _upsampled_depths(model, img_t)

    if cfg.bypass_decomposition:
        r_t = s_t = i_t_hat = None
    else:
        r_t, s_t = cache.decomp(t)
        i_t_hat = reconstruct(r_t, s_t)

    recon_terms = []
    refl_terms = []
    synth_terms = []
    synth_maps = []

    per_source = []
    for s in sources:
        img_s = cache.image(s)
        pose6 = model.pose(img_t, img_s)
        rot = rotation_from_axis_angle(ad.reshape(ad.slice_axis(pose6, 0, 0, 3), (3,)))
        trans = ad.reshape(ad.slice_axis(pose6, 0, 3, 6), (3,))
        if cfg.bypass_decomposition:
            sample_stack = img_s
        else:
            r_s, s_s = cache.decomp(s)
            i_s_hat = reconstruct(r_s, s_s)
            recon_terms.append(reconstruction_loss(i_t_hat, img_t, i_s_hat, img_s, cfg.alpha))
            # one bilinear pass carries both the reconstructed frame (for the
            # synthesis term) and the reflectance (for the consistency term)
            sample_stack = ad.concat([i_s_hat, r_s], axis=0)
        per_source.append((img_s, rot, trans, sample_stack))

    for depth in depths:
        scale_synth = []
        scale_maps = []
        scale_valid = []
        scale_refl = []
        for img_s, rot, trans, sample_stack in per_source:
            warped, validity = warp_frame(sample_stack, depth, (rot, trans), cam)
            v = validity.data
            if v.sum() == 0:
                raise RuntimeError("warp produced an empty validity mask; pose diverged")
            if cfg.bypass_decomposition:
                i_warp = warped
            else:
                i_warp = ad.slice_axis(warped, 0, 0, 3)
                warped_reflectance = ad.slice_axis(warped, 0, 3, 6)
                scale_refl.append(_masked_l1(r_t, warped_reflectance, v))
            if cfg.source_aggregation == "min":
                scale_maps.append(_photometric_map(i_warp, img_t, cfg.alpha, v))
                scale_valid.append(v)
            else:
                scale_synth.append(_photometric_scalar(i_warp, img_t, cfg.alpha, v))
        if cfg.source_aggregation == "min":
            combined = scale_maps[0]
            for other in scale_maps[1:]:
                combined = _elementwise_min(combined, other)
            any_valid = np.clip(np.sum(scale_valid, axis=0), 0.0, 1.0)
            synth_maps.append(ad.tsum(combined * Tensor(any_valid)) / max(1.0, any_valid.sum()))
        else:
            synth_terms.append(sum(scale_synth[1:], scale_synth[0]) / len(scale_synth))
        if scale_refl:
            refl_terms.append(sum(scale_refl[1:], scale_refl[0]) / len(scale_refl))

    smooth_terms = [masked_smoothness_loss(depth, img_t, masks) for depth in depths]

    n_scales = len(depths)
    synth_list = synth_maps if cfg.source_aggregation == "min" else synth_terms
    synthesis = sum(synth_list[1:], synth_list[0]) / n_scales
    smoothness = sum(smooth_terms[1:], smooth_terms[0]) / n_scales
    if cfg.bypass_decomposition:
        reconstruction = Tensor(0.0)
        reflectance = Tensor(0.0)
    else:
        reconstruction = sum(recon_terms[1:], recon_terms[0]) / len(recon_terms)
        reflectance = sum(refl_terms[1:], refl_terms[0]) / n_scales

    total = total_loss(reconstruction, reflectance, synthesis, smoothness, weights)
    parts = {
        "reconstruction": float(reconstruction.data),
        "reflectance": float(reflectance.data),
        "synthesis": float(synthesis.data),
        "smoothness": float(smoothness.data),
        "loss": total.item(),
    }
    return total, parts


def _masked_l1(r_t: Tensor, warped: Tensor, validity: np.ndarray) -> Tensor:
    from .losses import reflectance_consistency_loss

    return reflectance_consistency_loss(r_t, warped, validity)


def _photometric_scalar(a: Tensor, b: Tensor, alpha: float, validity: np.ndarray) -> Tensor:
    from .losses import synthesis_loss

    return synthesis_loss(a, b, alpha=alpha, validity=validity)


def validation_abs_rel(model: ModelBundle, scene, frames=None, cap: float = 150.0) -> float:
    """Mean median-scaled Abs Rel over the given frames (default: all)."""
    ids = range(len(scene)) if frames is None else frames
    scores = []
    for k in ids:
        depth = model.predict_depth(Tensor(scene.frames[k]))
        scores.append(evaluate_depth(depth.data, scene.depths[k], cap=cap).abs_rel)
    return float(np.mean(scores))


def _validation_frames(targets: list[int]) -> list[int]:
    """Three spread-out targets; keeps the per-epoch validation cheap."""
    if len(targets) <= 3:
        return list(targets)
    return [targets[0], targets[len(targets) // 2], targets[-1]]


def train(scene, config: TrainConfig, log_path=None, checkpoint_path=None):
    """Run the full loop; returns (model, records). Divergence aborts with
    the last good checkpoint written next to the requested path."""
    hw = (scene.cam.height, scene.cam.width)
    model = ModelBundle(config, hw)
    trainables = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    opt = Adam(
        trainables, lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps
    )
    weights = config.loss_weights()
    frozen_before = frozen_checksums(model)

    stride = config.triplet_stride
    targets = list(range(stride, len(scene) - stride))
    if not targets:
        raise ValueError(f"scene with {len(scene)} frames leaves no target at stride {stride}")

    records: list[EpochRecord] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            if epoch == config.decay_epoch() + 1:
                opt.lr = opt.lr * config.lr_decay
            sums = {"loss": 0.0, "reconstruction": 0.0, "reflectance": 0.0, "synthesis": 0.0, "smoothness": 0.0}
            for start in range(0, len(targets), config.batch_size):
                batch = targets[start : start + config.batch_size]
                cache = _FrameCache(model, scene)
                batch_total = None
                for t in batch:
                    total, parts = step_loss(model, scene, t, weights, cache=cache)
                    if not np.isfinite(total.data):
                        _abort_with_checkpoint(model, config, step, checkpoint_path)
                    batch_total = total if batch_total is None else batch_total + total
                    for key in sums:
                        sums[key] += parts[key]
                (batch_total * (1.0 / len(batch))).backward()
                opt.step()
                opt.zero_grad()
                step += 1
            after = frozen_checksums(model)
            if after != frozen_before:
                changed = [k for k in frozen_before if after.get(k) != frozen_before[k]]
                raise RuntimeError(f"frozen parameters mutated during epoch {epoch}: {changed}")
            record = EpochRecord(
                epoch=epoch,
                step=step,
                lr=opt.lr,
                loss=sums["loss"] / len(targets),
                reconstruction=sums["reconstruction"] / len(targets),
                reflectance=sums["reflectance"] / len(targets),
                synthesis=sums["synthesis"] / len(targets),
                smoothness=sums["smoothness"] / len(targets),
                val_abs_rel=validation_abs_rel(model, scene, frames=_validation_frames(targets)),
            )
            records.append(record)
            if log_fh:
                log_fh.write(record.as_line() + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_model(checkpoint_path, model, config, step)
    return model, records


def _abort_with_checkpoint(model, config, step, checkpoint_path):
    if checkpoint_path:
        rescue = str(checkpoint_path) + ".last_good"
        save_model(rescue, model, config, step)
        raise RuntimeError(f"training diverged (non-finite loss) at step {step}; last good state in {rescue}")
    raise RuntimeError(f"training diverged (non-finite loss) at step {step}")


def save_model(path, model: ModelBundle, config: TrainConfig, step: int) -> None:
    named = [(name, p, not p.requires_grad) for name, p in model.named_parameters()]
    save_checkpoint(path, named, config, step)


def load_model(path, image_hw=None) -> tuple[ModelBundle, int]:
    ck = load_checkpoint(path)
    if image_hw is None:
        pos = ck.tensors["depth.positions"]
        n_tokens = pos.shape[0]
        side = int(round(np.sqrt(n_tokens)))
        image_hw = (side * ck.config.patch, side * ck.config.patch)
    model = ModelBundle(ck.config, image_hw)
    restore_module(model, ck, prefix="")
    return model, ck.step


def evaluate_scene(model: ModelBundle, scene, cap: float = 150.0):
    """Per-frame depth reports plus mean aggregates and the 5-frame ATE."""
    reports: list[DepthEvalReport] = []
    for k in range(len(scene)):
        depth = model.predict_depth(Tensor(scene.frames[k]))
        reports.append(evaluate_depth(depth.data, scene.depths[k], cap=cap))
    aggregate = {
        key: float(np.mean([getattr(r, key) for r in reports]))
        for key in ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")
    }
    ate_mean, segments = evaluate_pose(model, scene)
    return reports, aggregate, (ate_mean, segments)


def predicted_trajectory(model: ModelBundle, scene) -> Trajectory:
    """Chain per-pair pose estimates into a frame-0-anchored trajectory."""
    current = PoseSE3.identity()
    poses = [current]
    for k in range(len(scene) - 1):
        pose6 = model.pose(Tensor(scene.frames[k]), Tensor(scene.frames[k + 1]))
        vec = pose6.data
        t_to_s = PoseSE3.from_axis_angle(vec[:3], vec[3:])
        current = current.compose(t_to_s.inverse())
        poses.append(current)
    return Trajectory(tuple(range(len(scene))), tuple(poses))


def reference_trajectory(scene) -> Trajectory:
    """Ground-truth camera path re-expressed in frame-0 camera coordinates."""
    base = scene.poses[0]
    poses = [base.compose(p.inverse()) for p in scene.poses]
    return Trajectory(tuple(range(len(scene))), tuple(poses))


def evaluate_pose(model: ModelBundle, scene) -> tuple[float, list[float]]:
    return ate_5frame(predicted_trajectory(model, scene), reference_trajectory(scene))


def parse_log_line(line: str) -> dict[str, float]:
    out = {}
    for part in line.split():
        key, value = part.split("=", 1)
        out[key] = float(value)
    return out
