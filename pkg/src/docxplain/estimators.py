"""Scikit-learn style estimator wrappers around the functional core.

Each attributor is a transformer: ``transform`` maps a stack of document
pages to a stack of attribution maps for the wrapped black-box classifier.
Parameters follow sklearn conventions (stored verbatim in ``__init__``,
introspectable with ``get_params``, estimators clonable), so the methods
drop into pipelines, grid searches and cross-method comparisons.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import attribution as attr_ops
from .model import ClassifierHandle
from .segmentation import (
    KernelConfig,
    build_masks,
    default_kernels,
)
from .validation import as_raster

__all__ = [
    "DocumentSegmenter",
    "DocXplainAttributor",
    "OcclusionAttributor",
    "RandomAttributor",
]


def _iter_pages(X):
    """Accept a single page, a list of pages, or an (N, H, W[, C]) stack."""
    if isinstance(X, np.ndarray) and X.ndim in (3, 4) and X.shape[0] > 0:
        # Heuristic: a 3-D array is a stack unless it looks like one RGB page.
        if X.ndim == 4 or X.shape[2] != 3:
            return [X[i] for i in range(X.shape[0])]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [X]
    if isinstance(X, (list, tuple)):
        return list(X)
    return [X]


class DocumentSegmenter(BaseEstimator):
    """Transformer producing per-kernel segmentation masks for each page.

    fit is stateless validation; transform returns a list (one entry per
    page) of lists of SegmentationMask (one per kernel configuration).
    """

    def __init__(self, kernels=None, working_size=1024, model_width=224,
                 model_height=224, opening=(5, 5)):
        self.kernels = kernels
        self.working_size = working_size
        self.model_width = model_width
        self.model_height = model_height
        self.opening = opening

    def fit(self, X=None, y=None):
        for cfg in self._kernel_list():
            if self.working_size % cfg.bg_patch[0] or self.working_size % cfg.bg_patch[1]:
                raise ValueError(
                    f"bg_patch {cfg.bg_patch} must divide working_size "
                    f"{self.working_size}"
                )
        self.is_fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self)
        out = []
        for page in _iter_pages(X):
            out.append(build_masks(
                as_raster(page),
                kernels=self._kernel_list(),
                model_res=(self.model_width, self.model_height),
                working_size=self.working_size,
                opening=self.opening,
            ))
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)

    def _kernel_list(self) -> list[KernelConfig]:
        return list(self.kernels) if self.kernels is not None else default_kernels()


class _BaseAttributor(BaseEstimator):
    """Shared plumbing: fit validates the classifier handle, transform maps
    pages to an (N, H, W) stack of attribution values."""

    def fit(self, X=None, y=None):
        classifier = getattr(self, "classifier", None)
        if classifier is not None and not isinstance(classifier, ClassifierHandle):
            raise TypeError(
                f"classifier must be a ClassifierHandle, got {type(classifier)!r}"
            )
        self._validate()
        self.is_fitted_ = True
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self)
        maps = [self.explain(page).values for page in _iter_pages(X)]
        return np.stack(maps)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)

    def _validate(self):
        pass

    def explain(self, page, target=None) -> attr_ops.AttributionMap:
        raise NotImplementedError


class DocXplainAttributor(_BaseAttributor):
    """Segmentation-driven feature-ablation attribution.

    Parameters
    ----------
    classifier : ClassifierHandle
        Black-box model to explain.
    mode : {"fg", "fg+bg"}
        Ablate only foreground groups, or background patches as well.
    kernels : list of KernelConfig, optional
        Segmentation granularities; defaults to the standard three.
    working_size : int
        Square working resolution for segmentation.
    target_class : int, optional
        Class to explain; the model's own prediction when None.
    """

    def __init__(self, classifier=None, mode=attr_ops.MODE_FG_BG, kernels=None,
                 working_size=1024, target_class=None, opening=(5, 5)):
        self.classifier = classifier
        self.mode = mode
        self.kernels = kernels
        self.working_size = working_size
        self.target_class = target_class
        self.opening = opening

    def _validate(self):
        if self.classifier is None:
            raise ValueError("a classifier is required before transform")
        if self.mode not in (attr_ops.MODE_FG, attr_ops.MODE_FG_BG):
            raise ValueError(f"mode must be 'fg' or 'fg+bg', got {self.mode!r}")

    def explain(self, page, target=None) -> attr_ops.AttributionMap:
        if target is None:
            target = self.target_class
        return attr_ops.attribute(
            self.classifier,
            as_raster(page),
            kernels=list(self.kernels) if self.kernels is not None else None,
            target=target,
            mode=self.mode,
            working_size=self.working_size,
            opening=self.opening,
        )


class OcclusionAttributor(_BaseAttributor):
    """Sliding-window occlusion baseline over the model-resolution page."""

    def __init__(self, classifier=None, patch=(16, 16), stride=(8, 8),
                 fill=0.5, target_class=None, working_size=1024):
        self.classifier = classifier
        self.patch = patch
        self.stride = stride
        self.fill = fill
        self.target_class = target_class
        self.working_size = working_size

    def _validate(self):
        if self.classifier is None:
            raise ValueError("a classifier is required before transform")

    def explain(self, page, target=None) -> attr_ops.AttributionMap:
        from .segmentation import prepare_page

        f = self.classifier
        prepared = prepare_page(
            as_raster(page), working_size=self.working_size,
            model_res=(f.input_width, f.input_height),
        )
        if target is None:
            target = self.target_class
        if target is None:
            target = f.predict(prepared.gray_model)
        return attr_ops.occlusion_map(
            f, prepared.gray_model, target,
            patch=tuple(self.patch), stride=tuple(self.stride), fill=self.fill,
        )


class RandomAttributor(_BaseAttributor):
    """Seeded uniform-noise attribution; the no-information reference."""

    def __init__(self, width=224, height=224, seed=0):
        self.width = width
        self.height = height
        self.seed = seed

    def explain(self, page=None, target=None) -> attr_ops.AttributionMap:
        return attr_ops.random_map(self.width, self.height, self.seed)
