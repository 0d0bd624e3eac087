"""
Feature extraction as the losses see it: resize for the ViT first, then
read the deepest layer.
"""

from dataclasses import dataclass

import torch

from extractor.features import ClsToken, SelfSimMatrix, extract_cls, self_similarity
from extractor.vit_backend import VitExtractor, forward_features
from training.augment import resize_for_vit
from training.losses import LossReport
from utils.errors import NumericalAbort


@dataclass
class ImageDescriptors:
    cls: ClsToken
    keys: torch.Tensor
    selfsim: SelfSimMatrix


class FeaturePipeline:

    def __init__(self, extractor: VitExtractor, vit_resize: int = 224):
        self.extractor = extractor
        self.vit_resize = vit_resize
        self.layer = extractor.deepest_layer

    def describe(self, image: torch.Tensor) -> ImageDescriptors:
        resized = resize_for_vit(image, self.vit_resize, self.extractor.config.patch_size)
        features = forward_features(self.extractor, resized, [self.layer])
        keys = features.keys(self.layer)
        return ImageDescriptors(
            cls=extract_cls(features, self.layer),
            keys=keys,
            selfsim=self_similarity(keys),
        )

    def cls(self, image: torch.Tensor) -> ClsToken:
        resized = resize_for_vit(image, self.vit_resize, self.extractor.config.patch_size)
        return extract_cls(forward_features(self.extractor, resized, [self.layer]), self.layer)

    def keys(self, image: torch.Tensor) -> torch.Tensor:
        resized = resize_for_vit(image, self.vit_resize, self.extractor.config.patch_size)
        return forward_features(self.extractor, resized, [self.layer]).keys(self.layer)


def check_finite(report: LossReport, iteration: int):
    """Raise NumericalAbort naming the first non-finite term"""
    for term, value in report.terms().items():
        value = torch.as_tensor(value)
        if not torch.isfinite(value).all():
            raise NumericalAbort(
                f"{term} loss is {float(value)} at iteration {iteration}",
                iteration=iteration, term=term,
            )


def mean_report(reports) -> LossReport:
    count = len(reports)
    return LossReport(
        total=sum(r.total for r in reports) / count,
        app=sum(r.app for r in reports) / count,
        structure=sum(r.structure for r in reports) / count,
        identity=sum(r.identity for r in reports) / count,
    )
