"""End-to-end filter pipeline: configuration, one-shot preparation, and the
per-step hooks a denoising loop calls."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidDimensions, InvalidParameter
from .filtering import (
    BLEND_MODES,
    ConceptSubspace,
    PromptEmbedding,
    ProximityReport,
    TriggerMask,
    blend,
    concept_distances,
    cosine_similarity,
    detect_triggers,
    input_space_basis,
    project_tokens,
    round_half_away,
    self_validation_threshold,
)
from .linalg import DEFAULT_PINV_TOLERANCE, as_vector
from .spectral import COMPARISON_MODES, as_latent, build_lowfreq_mask, reattend

logger = logging.getLogger("concept_guard.pipeline")


@dataclass(frozen=True, eq=False)
class FilterConfig:
    """Every knob of the filter, with the defaults used throughout.

    alpha: detection sensitivity margin; a token is flagged when its
        leave-one-out distance exceeds (1 + alpha) times the others' mean.
    gamma: scale of the self-validating step threshold.
    scale: attenuation applied to over-loud low-frequency coefficients, (0, 1].
    rho: fraction of each spectral axis counted as low-frequency, [0, 1].
    total_steps: length of the denoising schedule the gate indexes into.
    pinv_tolerance: relative singular-value cutoff for all projectors.
    blend_mode: "projected" re-embeds flagged rows; "null" replaces them
        with one fixed row.
    null_embedding: the fixed row for blend_mode="null" (zeros when None).
    spectral_enabled: whether the latent hook does anything at all.
    spectral_comparison: damp coefficients that grew "greater" (default) or
        shrank "less" relative to the original branch.
    exclude_boundary_tokens: drop the encoder's first/last valid tokens
        before detection instead of treating them as content.
    """

    alpha: float = 0.01
    gamma: float = 10.0
    scale: float = 0.8
    rho: float = 0.25
    total_steps: int = 50
    pinv_tolerance: float = DEFAULT_PINV_TOLERANCE
    blend_mode: str = "projected"
    null_embedding: np.ndarray | None = None
    spectral_enabled: bool = True
    spectral_comparison: str = "greater"
    exclude_boundary_tokens: bool = False

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidParameter(f"alpha must be finite and non-negative, got {self.alpha}")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise InvalidParameter(f"gamma must be finite and non-negative, got {self.gamma}")
        if not np.isfinite(self.scale) or not 0.0 < self.scale <= 1.0:
            raise InvalidParameter(f"scale must lie in (0, 1], got {self.scale}")
        if not np.isfinite(self.rho) or not 0.0 <= self.rho <= 1.0:
            raise InvalidParameter(f"rho must lie in [0, 1], got {self.rho}")
        if int(self.total_steps) != self.total_steps or self.total_steps < 1:
            raise InvalidParameter(f"total_steps must be a positive integer, got {self.total_steps}")
        if not np.isfinite(self.pinv_tolerance) or self.pinv_tolerance < 0:
            raise InvalidParameter(
                f"pinv_tolerance must be finite and non-negative, got {self.pinv_tolerance}"
            )
        if self.blend_mode not in BLEND_MODES:
            raise InvalidParameter(f"blend_mode must be one of {BLEND_MODES}, got {self.blend_mode!r}")
        if self.spectral_comparison not in COMPARISON_MODES:
            raise InvalidParameter(
                f"spectral_comparison must be one of {COMPARISON_MODES}, got {self.spectral_comparison!r}"
            )
        object.__setattr__(self, "total_steps", int(self.total_steps))
        if self.null_embedding is not None:
            null = as_vector(self.null_embedding, name="null embedding").copy()
            null.setflags(write=False)
            object.__setattr__(self, "null_embedding", null)


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Everything `prepare` worked out for one prompt.

    ``safe`` holds the blended rows; ``projected`` the detoxified candidates
    for every row; ``rounded_t`` the last step index that still uses ``safe``.
    ``degenerate`` marks prompts too small to analyze, passed through
    unfiltered. ``diagnostics`` carries pooled_cosine, per-token
    concept_component_norms (how much concept-span content is left in each
    projected row), and elapsed_seconds.
    """

    mask: TriggerMask
    report: ProximityReport
    projected: np.ndarray
    safe: np.ndarray
    t_prime: float
    rounded_t: int
    config: FilterConfig
    diagnostics: dict = field(default_factory=dict)
    degenerate: bool = False

    def __post_init__(self):
        for name in ("projected", "safe"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def prepare(prompt: PromptEmbedding, subspace: ConceptSubspace, config: FilterConfig | None = None) -> FilterResult:
    """Run detection, projection, blending, and threshold selection once.

    A prompt with a single valid token cannot be scored leave-one-out; it is
    passed through unfiltered and flagged degenerate rather than failing the
    caller's generation loop.
    """
    if config is None:
        config = FilterConfig()
    started = time.perf_counter()
    if config.exclude_boundary_tokens:
        prompt = prompt.without_boundary_tokens()
    if prompt.dim != subspace.dim:
        raise InvalidDimensions(
            f"prompt dimension {prompt.dim} does not match concept dimension {subspace.dim}"
        )
    n = prompt.n_tokens
    if prompt.n_valid < 2:
        logger.warning("prompt has a single valid token; passing it through unfiltered")
        zeros = np.zeros(n)
        report = ProximityReport(zeros, zeros, prompt.valid, mask=np.zeros(n, dtype=bool))
        return FilterResult(
            mask=TriggerMask(np.zeros(n, dtype=bool)),
            report=report,
            projected=prompt.matrix.copy(),
            safe=prompt.matrix.copy(),
            t_prime=0.0,
            rounded_t=0,
            config=config,
            diagnostics={
                "pooled_cosine": 1.0,
                "concept_component_norms": [0.0] * n,
                "elapsed_seconds": time.perf_counter() - started,
            },
            degenerate=True,
        )
    report = concept_distances(prompt, subspace)
    if subspace.projector.rank == 0:
        # no concept directions exist, so nothing can be toxic; the
        # leave-one-out distances are raw pooled norms and must not trigger
        mask = TriggerMask(np.zeros(n, dtype=bool))
    else:
        mask = detect_triggers(report, config.alpha)
    basis = input_space_basis(prompt)
    projected = project_tokens(prompt, basis, subspace, config.pinv_tolerance)
    safe = blend(prompt, projected, mask, config.blend_mode, config.null_embedding)
    t_prime = self_validation_threshold(prompt, projected, config.gamma)
    pooled_cos = cosine_similarity(prompt.pooled(), projected[prompt.valid].mean(axis=0))
    leakage = subspace.projector.apply(projected)
    diagnostics = {
        "pooled_cosine": pooled_cos,
        "concept_component_norms": [float(x) for x in np.linalg.norm(leakage, axis=1)],
        "elapsed_seconds": time.perf_counter() - started,
    }
    logger.debug(
        "prepared filter: %d/%d tokens flagged, threshold %.4f", mask.count, n, t_prime
    )
    return FilterResult(
        mask=mask,
        report=report.with_mask(mask.flags),
        projected=projected,
        safe=safe,
        t_prime=t_prime,
        rounded_t=round_half_away(t_prime),
        config=config,
        diagnostics=diagnostics,
    )


def embedding_at(result: FilterResult, original, t: int) -> np.ndarray:
    """The embedding the denoiser should condition on at step ``t``: the safe
    rows while ``t <= rounded_t``, the caller's original object afterwards."""
    total = result.config.total_steps
    if int(t) != t or not 0 <= t < total:
        raise InvalidParameter(f"step {t} outside the schedule [0, {total})")
    if t <= result.rounded_t:
        return result.safe
    return original


def latent_hook(result: FilterResult, t: int, h_orig, h_safe, config: FilterConfig | None = None) -> np.ndarray:
    """Per-step latent correction. While the filtered embedding is active
    (and spectral filtering is on), re-attends the filtered branch's latent
    against the original branch's; otherwise the filtered latent passes
    through untouched."""
    if config is None:
        config = result.config
    h_orig = as_latent(h_orig, "original latent")
    h_safe = as_latent(h_safe, "filtered latent")
    if h_orig.shape != h_safe.shape:
        raise InvalidDimensions(f"latent shapes differ: {h_orig.shape} vs {h_safe.shape}")
    if config.spectral_enabled and t <= result.rounded_t:
        mask = build_lowfreq_mask(h_safe.shape[1], h_safe.shape[2], config.rho)
        return reattend(h_orig, h_safe, mask, config.scale, config.spectral_comparison)
    return h_safe
