"""Trigger-token detection and concept-orthogonal projection of prompt embeddings.

A prompt arrives as one embedding row per token plus a validity mask (content
tokens vs padding). Each token is scored leave-one-out: drop the token, pool
what remains, and measure how far the pooled vector lands from the toxic
concept span. Dropping an innocuous token leaves the pool close to where it
was; dropping the token that carries the toxic content moves the pool notably
farther away, so an above-average jump marks a trigger.

Trigger rows are replaced by a detoxified version: the row is projected
orthogonal to the concept span and then back into the span of the prompt's own
leave-one-out pooled vectors, which keeps the replacement inside the prompt's
input space rather than in arbitrary embedding territory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegeneratePrompt,
    InvalidDimensions,
    InvalidIndex,
    InvalidParameter,
)
from .linalg import DEFAULT_PINV_TOLERANCE, Projector, as_matrix, as_vector

BLEND_MODES = ("projected", "null")


def _lock(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    """Embedded prompt: token labels, an (N, D) row matrix, and a validity mask.

    ``valid[i]`` is False for padding rows, which are carried along untouched
    by every operation in this module.
    """

    tokens: tuple[str, ...]
    matrix: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        matrix = as_matrix(self.matrix, "prompt matrix").copy()
        valid = np.asarray(self.valid, dtype=bool).copy()
        tokens = tuple(str(t) for t in self.tokens)
        if valid.ndim != 1 or valid.shape[0] != matrix.shape[0]:
            raise InvalidDimensions(
                f"valid mask shape {valid.shape} does not match {matrix.shape[0]} token rows"
            )
        if len(tokens) != matrix.shape[0]:
            raise InvalidDimensions(
                f"{len(tokens)} token labels for {matrix.shape[0]} embedding rows"
            )
        if not valid.any():
            raise DegeneratePrompt("prompt has no valid tokens")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "matrix", _lock(matrix))
        object.__setattr__(self, "valid", _lock(valid))

    @property
    def n_tokens(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    def valid_indices(self) -> np.ndarray:
        return np.flatnonzero(self.valid)

    def pooled(self) -> np.ndarray:
        """Mean embedding over valid tokens."""
        return self.matrix[self.valid].mean(axis=0)

    def without_boundary_tokens(self) -> "PromptEmbedding":
        """Copy with the first and last valid tokens marked invalid.

        Encoders usually emit begin/end markers around the content; this drops
        them from pooling and detection. Requires at least three valid tokens
        so something is left.
        """
        idx = self.valid_indices()
        if idx.size < 3:
            raise DegeneratePrompt("dropping boundary tokens would leave fewer than one valid token")
        valid = self.valid.copy()
        valid[idx[0]] = False
        valid[idx[-1]] = False
        return PromptEmbedding(self.tokens, self.matrix, valid)


@dataclass(frozen=True, eq=False)
class ConceptSubspace:
    """Toxic concept span: one column per concept phrase, plus its projector.

    K = 0 (no concepts) is legal and makes the projector the zero map, so the
    whole filter degrades to the identity.
    """

    labels: tuple[str, ...]
    basis: np.ndarray
    projector: Projector

    def __post_init__(self):
        basis = as_matrix(self.basis, "concept basis", allow_empty_cols=True).copy()
        labels = tuple(str(p) for p in self.labels)
        if len(labels) != basis.shape[1]:
            raise InvalidDimensions(
                f"{len(labels)} phrase labels for {basis.shape[1]} concept columns"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "basis", _lock(basis))

    @classmethod
    def from_basis(cls, basis, labels=None, tolerance: float = DEFAULT_PINV_TOLERANCE):
        basis = as_matrix(basis, "concept basis", allow_empty_cols=True)
        if labels is None:
            labels = tuple(f"concept{i}" for i in range(basis.shape[1]))
        return cls(tuple(labels), basis, Projector(basis, tolerance))

    @classmethod
    def empty(cls, dim: int):
        """Subspace with no concepts at all (identity filter)."""
        basis = np.zeros((int(dim), 0))
        return cls((), basis, Projector(basis))

    @property
    def n_concepts(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True, eq=False)
class ProximityReport:
    """Per-token leave-one-out distances to the concept span.

    ``distances[i]`` is how far the pool lands from the concept span once
    token i is removed; ``loo_means[i]`` is the mean of the other valid
    tokens' distances. Padding positions hold zeros. ``mask`` is filled in
    once detection has run.
    """

    distances: np.ndarray
    loo_means: np.ndarray
    valid: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        distances = np.asarray(self.distances, dtype=np.float64).copy()
        loo_means = np.asarray(self.loo_means, dtype=np.float64).copy()
        valid = np.asarray(self.valid, dtype=bool).copy()
        if distances.ndim != 1 or distances.shape != loo_means.shape or distances.shape != valid.shape:
            raise InvalidDimensions("distances, loo_means and valid must share one 1-D shape")
        for name, arr in (("distances", distances), ("loo_means", loo_means)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InvalidParameter(f"{name} must be finite and non-negative")
        object.__setattr__(self, "distances", _lock(distances))
        object.__setattr__(self, "loo_means", _lock(loo_means))
        object.__setattr__(self, "valid", _lock(valid))
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool).copy()
            if mask.shape != valid.shape:
                raise InvalidDimensions("mask shape does not match the report")
            object.__setattr__(self, "mask", _lock(mask))

    @classmethod
    def from_distances(cls, distances, valid=None) -> "ProximityReport":
        distances = np.asarray(distances, dtype=np.float64)
        if valid is None:
            valid = np.ones(distances.shape, dtype=bool)
        valid = np.asarray(valid, dtype=bool)
        return cls(distances, _loo_means(distances, valid), valid)

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    def with_mask(self, mask) -> "ProximityReport":
        return replace(self, mask=np.asarray(mask, dtype=bool))


@dataclass(frozen=True, eq=False)
class TriggerMask:
    """Boolean flags, one per token; True marks a detected trigger."""

    flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool).copy()
        if flags.ndim != 1:
            raise InvalidDimensions("trigger flags must be 1-D")
        object.__setattr__(self, "flags", _lock(flags))

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.flags))

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.flags)


def _pooled_rows(matrix: np.ndarray, valid: np.ndarray) -> np.ndarray:
    return matrix[valid].mean(axis=0)


def _loo_means(distances: np.ndarray, valid: np.ndarray) -> np.ndarray:
    out = np.zeros_like(distances)
    idx = np.flatnonzero(valid)
    for i in idx:
        others = idx[idx != i]
        out[i] = distances[others].mean()
    return out


def masked_pooled(prompt: PromptEmbedding, i: int) -> np.ndarray:
    """Mean embedding over the valid tokens with token ``i`` left out."""
    if not isinstance(i, (int, np.integer)) or not 0 <= i < prompt.n_tokens:
        raise InvalidIndex(f"token index {i} out of range for {prompt.n_tokens} tokens")
    if not prompt.valid[i]:
        raise InvalidIndex(f"token index {i} is padding")
    if prompt.n_valid < 2:
        raise DegeneratePrompt("leave-one-out pooling needs at least two valid tokens")
    keep = prompt.valid.copy()
    keep[i] = False
    return prompt.matrix[keep].mean(axis=0)


def input_space_basis(prompt: PromptEmbedding) -> np.ndarray:
    """Matrix whose columns are the leave-one-out pooled vectors, valid tokens only.

    Shape (D, n_valid); column order follows ascending token index. This span
    is what projected trigger rows are re-embedded into.
    """
    if prompt.n_valid < 2:
        raise DegeneratePrompt("input-space basis needs at least two valid tokens")
    cols = [masked_pooled(prompt, int(i)) for i in prompt.valid_indices()]
    return np.stack(cols, axis=1)


def concept_distances(prompt: PromptEmbedding, subspace: ConceptSubspace) -> ProximityReport:
    """Leave-one-out distances from the pooled prompt to the concept span.

    With no concepts (K = 0) the distance is simply the norm of the pooled
    vector, which still ranks tokens consistently.
    """
    if prompt.dim != subspace.dim:
        raise InvalidDimensions(
            f"prompt dimension {prompt.dim} does not match concept dimension {subspace.dim}"
        )
    if prompt.n_valid < 2:
        raise DegeneratePrompt("leave-one-out distances need at least two valid tokens")
    distances = np.zeros(prompt.n_tokens)
    for i in prompt.valid_indices():
        d = subspace.projector.residual(masked_pooled(prompt, int(i)))
        distances[i] = float(np.linalg.norm(d))
    return ProximityReport(distances, _loo_means(distances, prompt.valid), prompt.valid)


def detect_triggers(report: ProximityReport, alpha: float = 0.01) -> TriggerMask:
    """Flag token i when its distance exceeds ``(1 + alpha)`` times the mean
    of the other valid tokens' distances. Ties resolve to not-flagged."""
    if not np.isfinite(alpha) or alpha < 0:
        raise InvalidParameter(f"alpha must be a finite non-negative float, got {alpha}")
    if report.n_valid < 2:
        raise DegeneratePrompt("trigger detection needs at least two valid tokens")
    flags = report.valid & (report.distances > (1.0 + alpha) * report.loo_means)
    return TriggerMask(flags)


def project_tokens(
    prompt: PromptEmbedding,
    input_basis,
    subspace: ConceptSubspace,
    tolerance: float = DEFAULT_PINV_TOLERANCE,
) -> np.ndarray:
    """Detoxified candidate rows: strip each row's concept component, then
    project the remainder into the span of ``input_basis``. Returns (N, D)."""
    input_basis = as_matrix(input_basis, "input basis")
    if input_basis.shape[0] != prompt.dim:
        raise InvalidDimensions(
            f"input basis dimension {input_basis.shape[0]} does not match prompt dimension {prompt.dim}"
        )
    if prompt.dim != subspace.dim:
        raise InvalidDimensions(
            f"prompt dimension {prompt.dim} does not match concept dimension {subspace.dim}"
        )
    input_projector = Projector(input_basis, tolerance)
    detoxed = subspace.projector.residual(prompt.matrix)
    return input_projector.apply(detoxed)


def blend(
    prompt: PromptEmbedding,
    projected,
    mask: TriggerMask,
    mode: str = "projected",
    null_embedding=None,
) -> np.ndarray:
    """Assemble the safe embedding: flagged rows take the replacement, all
    other rows (padding included) keep their original bits.

    ``mode="projected"`` substitutes the detoxified rows; ``mode="null"``
    substitutes one fixed row (all zeros unless ``null_embedding`` is given).
    """
    if mode not in BLEND_MODES:
        raise InvalidParameter(f"blend mode must be one of {BLEND_MODES}, got {mode!r}")
    projected = as_matrix(projected, "projected rows")
    if projected.shape != prompt.matrix.shape:
        raise InvalidDimensions(
            f"projected shape {projected.shape} does not match prompt shape {prompt.matrix.shape}"
        )
    flags = mask.flags
    if flags.shape[0] != prompt.n_tokens:
        raise InvalidDimensions("trigger mask length does not match the prompt")
    out = prompt.matrix.copy()
    if mode == "projected":
        out[flags] = projected[flags]
    else:
        null_row = (
            np.zeros(prompt.dim)
            if null_embedding is None
            else as_vector(null_embedding, prompt.dim, "null embedding")
        )
        out[flags] = null_row
    return out


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def cosine_similarity(u, v) -> float:
    u = as_vector(u, name="u")
    v = as_vector(v, len(u), name="v")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegeneratePrompt("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def self_validation_threshold(prompt: PromptEmbedding, projected, gamma: float = 10.0) -> float:
    """How many denoising steps deserve the filtered embedding.

    Pools the original and detoxified rows over valid tokens and maps their
    dissimilarity through a scaled sigmoid:
    ``gamma * sigmoid(1 - cos(pooled, pooled_projected))``. A prompt far from
    its own detoxified version earns a longer filtered prefix.
    """
    if not np.isfinite(gamma) or gamma < 0:
        raise InvalidParameter(f"gamma must be a finite non-negative float, got {gamma}")
    projected = as_matrix(projected, "projected rows")
    if projected.shape != prompt.matrix.shape:
        raise InvalidDimensions(
            f"projected shape {projected.shape} does not match prompt shape {prompt.matrix.shape}"
        )
    cos = cosine_similarity(prompt.pooled(), _pooled_rows(projected, prompt.valid))
    return gamma * _sigmoid(1.0 - cos)


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def select_for_timestep(t: int, t_prime: float, safe_embedding, original_embedding):
    """Pick the embedding for step ``t``: the safe one while
    ``t <= round(t_prime)`` (boundary inclusive), the original afterwards.
    Returns one of the two arguments unchanged."""
    if t <= round_half_away(t_prime):
        return safe_embedding
    return original_embedding
