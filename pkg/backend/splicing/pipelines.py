"""
Command pipelines: each cmd_* function loads its inputs, runs the library
operations and writes its outputs, recording everything in a RunManifest.
The management commands are thin argument parsers around these.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torchvision.utils import make_grid

from clsops.operations import ModeSet, interpolate_cls, kmeans_modes, render_interpolation, render_mode_grid
from distillation.descriptor_index import compute_descriptors
from distillation.pairing import PairSet, mutual_knn_pairs, verify_pairs
from extractor.features import DEFAULT_WINDOW, pca_visualize, self_similarity, spatial_keys
from extractor.vit_backend import VitConfig, forward_features, get_extractor
from generators.checkpoints import config_from_dict, load_checkpoint, save_checkpoint
from generators.splicenet import SpliceNet, SpliceNetConfig, build_splicenet, splicenet_forward
from inversion.invert import (InversionConfig, LayerInversions, invert_cls_across_layers, invert_feature,
                              parse_selector, render_inversion_grid)
from splicing.manifest import RunManifest
from training.augment import resize_for_vit, resize_square
from training.config import TrainConfig, config_snapshot
from training.feature_pipeline import FeaturePipeline
from training.losses import appearance_loss, perceptual_distance
from training.splice import render_splice, train_splice
from training.splicenet import train_splicenet
from utils.device import synchronize
from utils.errors import (CheckpointVersionError, ConfigError, ImageReadError, SpliceError, SpliceIOError)
from utils.image_io import ImageStore, list_images, load_image, save_image

logger = logging.getLogger(__name__)


def _write_csv(path, columns: Sequence[str], rows: List[Dict]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(columns))
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise SpliceIOError(f"cannot write {path}: {exc}") from exc
    return path


def _load_input(path, manifest: RunManifest, max_side: int = None) -> torch.Tensor:
    image = load_image(path, max_side)
    manifest.record_input(path)
    return image


def _vit_config_of(payload: Dict, fallback: VitConfig) -> VitConfig:
    values = payload.get("vit_config")
    return config_from_dict(VitConfig, values) if values else fallback


def _load_splicenet(checkpoint, manifest: RunManifest, vit_config: VitConfig, device):
    model, payload = load_checkpoint(checkpoint, expected_kind="splicenet", device=device)
    manifest.record_input(checkpoint)
    vit_config = _vit_config_of(payload, vit_config)
    if model.config.cls_dim != vit_config.token_dim:
        raise CheckpointVersionError(
            f"{checkpoint} expects {model.config.cls_dim}-d tokens but the extractor produces "
            f"{vit_config.token_dim}-d tokens"
        )
    model.eval()
    return model, vit_config


def cmd_splice(structure_path, appearance_path, config: TrainConfig, out_dir, manifest: RunManifest,
               device: torch.device = None, max_side: int = None, progress: bool = True) -> Dict[str, Path]:
    """Train a single-pair generator and write result.png, the checkpoint and losses.csv"""
    out_dir = Path(out_dir)
    structure = _load_input(structure_path, manifest, max_side)
    appearance = _load_input(appearance_path, manifest, max_side)
    manifest.config = config_snapshot(config)
    manifest.seeds["train"] = config.seed

    extractor = get_extractor(config.vit, device)
    with manifest.timed("train"):
        generator, history = train_splice(structure, appearance, config, extractor=extractor,
                                          device=device, progress=progress)
    outputs = {
        "checkpoint": save_checkpoint(out_dir / "splice_generator.pt", generator, iteration=config.iterations,
                                      extra={"vit_config": asdict(config.vit)}),
        "losses": history.to_csv(out_dir / "losses.csv"),
    }
    with manifest.timed("render"):
        outputs["result"] = save_image(render_splice(generator, structure), out_dir / "result.png")
    for name, kind in (("result", "image"), ("checkpoint", "checkpoint"), ("losses", "csv")):
        manifest.record_output(name, outputs[name], kind)
    manifest.metrics["final_total_loss"] = history.reports[-1].total
    return outputs


def cmd_splicenet_train(pairs_path, data_dir, config: TrainConfig, out_dir, manifest: RunManifest,
                        device: torch.device = None, resume=None, model_config: SpliceNetConfig = None,
                        max_side: int = None, progress: bool = True) -> Dict[str, Path]:
    """Train SpliceNet on a pair file; checkpoints go to out_dir/checkpoints"""
    out_dir = Path(out_dir)
    pairs = PairSet.load(pairs_path)
    manifest.record_input(pairs_path)
    if len(pairs) == 0:
        raise ConfigError(f"pair file {pairs_path} contains no pairs")

    store = ImageStore(data_dir, max_side)
    missing = [i for i in pairs.image_ids() if not store.path(i).is_file()]
    if missing:
        raise ImageReadError(
            f"{len(missing)} paired images are missing from {data_dir}, e.g. {store.path(missing[0])}"
        )

    payload = None
    if resume:
        model, payload = load_checkpoint(resume, expected_kind="splicenet", device=device)
        manifest.record_input(resume)
        if model.config.cls_dim != config.vit.token_dim:
            raise CheckpointVersionError(
                f"{resume} expects {model.config.cls_dim}-d tokens but the extractor produces "
                f"{config.vit.token_dim}-d tokens"
            )
    else:
        model_config = model_config or SpliceNetConfig(cls_dim=config.vit.token_dim)
        if model_config.cls_dim != config.vit.token_dim:
            raise ConfigError(f"model expects {model_config.cls_dim}-d tokens but the extractor produces "
                              f"{config.vit.token_dim}-d tokens")
        model = build_splicenet(model_config, seed=config.seed)
    manifest.config = config_snapshot(config)
    manifest.config["model"] = asdict(model.config)
    manifest.seeds["train"] = config.seed

    extractor = get_extractor(config.vit, device)
    with manifest.timed("train"):
        model, history = train_splicenet(pairs, model, config, store, extractor=extractor,
                                         checkpoint_dir=out_dir / "checkpoints", resume=payload,
                                         device=device, progress=progress)

    outputs = {
        "checkpoint": out_dir / "checkpoints" / "splicenet_final.pt",
        "losses": history.to_csv(out_dir / "losses.csv"),
    }
    manifest.record_output("checkpoint", outputs["checkpoint"], "checkpoint")
    manifest.record_output("losses", outputs["losses"], "csv")
    manifest.metrics["start_iteration"] = int(payload["iteration"]) if payload else 0
    manifest.metrics["steps_run"] = len(history)
    return outputs


def load_token(token_file, token_index: Optional[int] = None) -> torch.Tensor:
    """A 1-D token, or row token_index of a token matrix, from .npy or .pt"""
    token_file = Path(token_file)
    if not token_file.is_file():
        raise SpliceIOError(f"token file not found: {token_file}")
    try:
        if token_file.suffix == ".npy":
            token = torch.from_numpy(np.load(token_file))
        else:
            token = torch.as_tensor(torch.load(token_file, map_location="cpu"))
    except Exception as exc:
        raise SpliceIOError(f"cannot read token file {token_file}: {exc}") from exc

    if token.dim() == 2:
        if token_index is None:
            raise ConfigError(f"{token_file} holds {len(token)} tokens; choose one with --token-index")
        if not 0 <= token_index < len(token):
            raise ConfigError(f"token index {token_index} outside 0..{len(token) - 1}")
        token = token[token_index]
    elif token.dim() != 1:
        raise ConfigError(f"{token_file} must hold a token vector or a token matrix")
    return token.float()


def cmd_splicenet_run(checkpoint, structure_path, out_path, manifest: RunManifest, vit_config: VitConfig,
                      appearance_path=None, token_file=None, token_index: int = None,
                      device: torch.device = None, max_side: int = None, vit_resize: int = 224) -> Dict:
    """
    Render structure_path with the appearance of appearance_path (or a saved token).

    Returns:
        Dict with the output path and the measured inference seconds
    """
    if (appearance_path is None) == (token_file is None):
        raise ConfigError("give exactly one of an appearance image or a token file")
    device = torch.device(device or "cpu")
    model, vit_config = _load_splicenet(checkpoint, manifest, vit_config, device)
    structure = _load_input(structure_path, manifest, max_side).to(device)

    if token_file is not None:
        token = load_token(token_file, token_index)
        manifest.record_input(token_file)
    else:
        appearance = _load_input(appearance_path, manifest, max_side).to(device)
        pipeline = FeaturePipeline(get_extractor(vit_config, device), vit_resize)
        with torch.no_grad():
            token = pipeline.cls(appearance).vector
    token = token.to(device)

    with torch.no_grad():
        splicenet_forward(model, structure, token)  # warm-up
        synchronize(device)
        with manifest.timed("inference"):
            output = splicenet_forward(model, structure, token)
            synchronize(device)

    path = save_image(output, out_path)
    manifest.record_output("image", path, "image")
    manifest.metrics["inference_seconds"] = manifest.timings["inference"]
    manifest.metrics["resolution"] = list(structure.shape[-2:])
    return {"image": path, "inference_seconds": manifest.timings["inference"]}


def cmd_distill(data_dir, k: int, out_path, manifest: RunManifest, vit_config: VitConfig,
                window: int = DEFAULT_WINDOW, metric: str = "cosine", vit_resize: int = 224,
                device: torch.device = None, progress: bool = True) -> Dict[str, Path]:
    """Descriptor index, mutual-KNN pair file and its metadata"""
    out_path = Path(out_path)
    paths = list_images(data_dir)
    if len(paths) < 2:
        raise ConfigError(f"{data_dir} holds {len(paths)} images; at least 2 are needed")
    if k >= len(paths):
        raise ConfigError(f"K={k} must be smaller than the number of images ({len(paths)})")
    manifest.config = {"k": k, "window": window, "metric": metric, "vit_resize": vit_resize,
                       "vit": asdict(vit_config)}

    extractor = get_extractor(vit_config, device)
    with manifest.timed("descriptors"):
        index = compute_descriptors({p.name: p for p in paths}, extractor, window, vit_resize, metric,
                                    progress=progress)
    if len(index) < 2:
        raise ConfigError(f"only {len(index)} readable images in {data_dir}; at least 2 are needed")
    if k >= len(index):
        raise ConfigError(f"K={k} must be smaller than the number of readable images ({len(index)})")

    with manifest.timed("pairing"):
        pairs = mutual_knn_pairs(index, k)
    failures = verify_pairs(index, pairs, k)
    if failures:
        raise SpliceError(f"{len(failures)} pairs failed mutual re-verification, e.g. {failures[0]}")

    index_dir = index.save(out_path.with_name(out_path.stem + "_index"))
    pair_file = pairs.save(out_path)
    manifest.record_output("pairs", pair_file, "pairs")
    manifest.record_output("index", index_dir, "index")
    manifest.metrics.update(num_images=len(index), num_pairs=len(pairs),
                            skipped=index.provenance["skipped"], dataset_hash=index.provenance["dataset_hash"])
    return {"pairs": pair_file, "index": index_dir}


def _write_trace(path, inversions: LayerInversions) -> Path:
    rows = [
        {"layer": layer, "step": step, "loss": loss}
        for layer, result in sorted(inversions.results.items())
        for step, loss in enumerate(result.trace)
    ]
    return _write_csv(path, ("layer", "step", "loss"), rows)


def cmd_invert(image_path, config: InversionConfig, out_dir, manifest: RunManifest, vit_config: VitConfig,
               layers: Sequence[int] = None, device: torch.device = None, progress: bool = True) -> Dict[str, Path]:
    """
    Invert one feature (config.feature_selector), or the [CLS] token at every
    layer of `layers`, writing a labeled PNG grid and a CSV loss trace.
    """
    out_dir = Path(out_dir)
    target = _load_input(image_path, manifest)
    manifest.config = {"inversion": asdict(config), "layers": list(layers or []), "vit": asdict(vit_config)}
    manifest.seeds["prior"] = config.prior_seed
    extractor = get_extractor(vit_config, device)

    with manifest.timed("invert"):
        if layers:
            inversions = invert_cls_across_layers(target, layers, config, extractor, device, progress)
        else:
            result = invert_feature(target, config, extractor, device, progress)
            _, layer = parse_selector(config.feature_selector, extractor.config.num_layers)
            inversions = LayerInversions(results={layer: result})

    outputs = {}
    if inversions.results:
        outputs["grid"] = render_inversion_grid(inversions, out_dir / "inversion.png", target)
        outputs["trace"] = _write_trace(out_dir / "trace.csv", inversions)
        manifest.record_output("grid", outputs["grid"], "image")
        manifest.record_output("trace", outputs["trace"], "csv")
    manifest.metrics["final_loss"] = {str(l): r.final_loss for l, r in inversions.results.items()}
    if inversions.failures:
        manifest.metrics["failed_layers"] = sorted(inversions.failures)
        raise inversions.failures[min(inversions.failures)]
    return outputs


def cmd_pca(image_path, out_dir, manifest: RunManifest, vit_config: VitConfig, layer: int = None,
            components: int = 3, vit_resize: int = 224, device: torch.device = None) -> Dict[str, Path]:
    """Leading principal components of an image's key self-similarity, tiled next to the image"""
    out_dir = Path(out_dir)
    device = torch.device(device or "cpu")
    extractor = get_extractor(vit_config, device)
    layer = layer or extractor.config.num_layers
    image = resize_for_vit(_load_input(image_path, manifest), vit_resize, extractor.config.patch_size)
    manifest.config = {"layer": layer, "components": components, "vit_resize": vit_resize,
                       "vit": asdict(vit_config)}

    with manifest.timed("pca"), torch.no_grad():
        features = forward_features(extractor, image.to(device), [layer])
        pca = pca_visualize(self_similarity(spatial_keys(features, layer)), components, features.grid_shape)

    size = list(image.shape[-2:])
    tiles = [image.cpu()] + [
        F.interpolate(m[None, None], size=size, mode="nearest")[0].expand(3, -1, -1) for m in pca.maps
    ]
    outputs = {"grid": save_image(make_grid(tiles, nrow=len(tiles), padding=2), out_dir / "pca.png")}
    try:
        np.save(out_dir / "pca.npy", pca.maps.numpy())
    except OSError as exc:
        raise SpliceIOError(f"cannot write {out_dir / 'pca.npy'}: {exc}") from exc
    outputs["maps"] = out_dir / "pca.npy"
    manifest.record_output("grid", outputs["grid"], "image")
    manifest.record_output("maps", outputs["maps"])
    manifest.metrics["explained_variance_ratio"] = [float(r) for r in pca.explained_variance_ratio]
    logger.info("PCA of layer %d self-similarity: explained variance %s", layer,
                manifest.metrics["explained_variance_ratio"])
    return outputs


def _image_tokens(paths: Sequence[Path], pipeline: FeaturePipeline, device) -> torch.Tensor:
    tokens = []
    with torch.no_grad():
        for path in paths:
            tokens.append(pipeline.cls(load_image(path).to(device)).vector.cpu())
    return torch.stack(tokens)


def cmd_modes(data_dir, k: int, out_dir, manifest: RunManifest, vit_config: VitConfig, seed: int = 0,
              checkpoint=None, samples: int = 3, vit_resize: int = 224,
              device: torch.device = None) -> Dict[str, Path]:
    """K-means appearance modes of a directory's [CLS] tokens (modes.npy + modes.json)"""
    out_dir = Path(out_dir)
    paths = list_images(data_dir)
    if not paths:
        raise ConfigError(f"no images in {data_dir}")
    manifest.config = {"k": k, "vit_resize": vit_resize, "vit": asdict(vit_config)}
    manifest.seeds["kmeans"] = seed

    pipeline = FeaturePipeline(get_extractor(vit_config, device), vit_resize)
    with manifest.timed("tokens"):
        tokens = _image_tokens(paths, pipeline, device)
    with manifest.timed("kmeans"):
        modes = kmeans_modes(tokens, k, seed=seed, image_ids=[p.name for p in paths])

    outputs = {"modes": modes.save(out_dir)}
    manifest.record_output("modes", outputs["modes"], "modes")
    manifest.metrics["inertia"] = modes.inertia
    if checkpoint:
        model, _ = _load_splicenet(checkpoint, manifest, vit_config, device)
        structures = [resize_square(load_image(p), vit_resize) for p in paths[:samples]]
        outputs["grid"] = render_mode_grid(model, structures, modes, out_dir / "mode_grid.png")
        manifest.record_output("grid", outputs["grid"], "image")
    return outputs


def cmd_interpolate(checkpoint, structure_path, appearance_path, alphas: Sequence[float], out_dir,
                    manifest: RunManifest, vit_config: VitConfig, device: torch.device = None,
                    max_side: int = None, vit_resize: int = 224) -> Dict[str, Path]:
    """Render the structure along the token segment from its own [CLS] to the appearance's"""
    out_dir = Path(out_dir)
    device = torch.device(device or "cpu")
    model, vit_config = _load_splicenet(checkpoint, manifest, vit_config, device)
    structure = _load_input(structure_path, manifest, max_side).to(device)
    appearance = _load_input(appearance_path, manifest, max_side).to(device)
    manifest.config = {"alphas": list(alphas), "vit": asdict(vit_config)}

    pipeline = FeaturePipeline(get_extractor(vit_config, device), vit_resize)
    with torch.no_grad():
        cls_structure = pipeline.cls(structure)
        cls_target = pipeline.cls(appearance)
        tokens = interpolate_cls(cls_structure, cls_target, alphas)
        images = render_interpolation(model, structure, tokens)
        rows = [
            {"alpha": alpha, "appearance_loss": float(appearance_loss(pipeline.cls(image.to(device)), cls_target))}
            for alpha, image in zip(alphas, images)
        ]

    outputs = {
        "grid": save_image(make_grid(images, nrow=len(images), padding=2), out_dir / "interpolation.png"),
        "losses": _write_csv(out_dir / "interpolation.csv", ("alpha", "appearance_loss"), rows),
    }
    manifest.record_output("grid", outputs["grid"], "image")
    manifest.record_output("losses", outputs["losses"], "csv")
    return outputs


@dataclass
class ReconReport:
    rows: List[Dict] = field(default_factory=list)

    @property
    def mean_mse(self) -> float:
        return float(np.mean([r["mse"] for r in self.rows])) if self.rows else 0.0

    @property
    def mean_perceptual(self) -> float:
        return float(np.mean([r["perceptual"] for r in self.rows])) if self.rows else 0.0

    def to_csv(self, path) -> Path:
        rows = self.rows + [{"image": "mean", "mse": self.mean_mse, "perceptual": self.mean_perceptual}]
        return _write_csv(path, ("image", "mse", "perceptual"), rows)


@torch.no_grad()
def evaluate_reconstruction(model: SpliceNet, images: Dict[str, torch.Tensor], pipeline: FeaturePipeline,
                            backend: str = "lpips") -> ReconReport:
    """Feed each image as its own structure and appearance and measure how well it comes back"""
    model.eval()
    device = next(model.parameters()).device
    report = ReconReport()
    for image_id, image in images.items():
        image = image.to(device)
        output = splicenet_forward(model, image, pipeline.cls(image))
        report.rows.append({
            "image": image_id,
            "mse": float(F.mse_loss(output, image)),
            "perceptual": float(perceptual_distance(image, output, backend)),
        })
    return report


def cmd_eval_reconstruction(checkpoint, image_dir, out_csv, manifest: RunManifest, vit_config: VitConfig,
                            backend: str = "lpips", device: torch.device = None, image_size: int = 224,
                            vit_resize: int = 224) -> ReconReport:
    """Per-image MSE and perceptual reconstruction error plus a final mean row"""
    paths = list_images(image_dir)
    if not paths:
        raise ConfigError(f"no images in {image_dir}")
    device = torch.device(device or "cpu")
    model, vit_config = _load_splicenet(checkpoint, manifest, vit_config, device)
    manifest.config = {"backend": backend, "image_size": image_size, "vit": asdict(vit_config)}

    images = {}
    for path in paths:
        images[path.name] = resize_square(_load_input(path, manifest), image_size)
    pipeline = FeaturePipeline(get_extractor(vit_config, device), vit_resize)
    with manifest.timed("evaluate"):
        report = evaluate_reconstruction(model, images, pipeline, backend)

    manifest.record_output("report", report.to_csv(out_csv), "csv")
    manifest.metrics.update(mean_mse=report.mean_mse, mean_perceptual=report.mean_perceptual)
    return report
