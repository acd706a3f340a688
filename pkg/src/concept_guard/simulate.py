"""Deterministic toy denoising harness.

The "denoiser" is a fixed linear map: eps(z, p) = A z + B pool(p), with A
scaled so its spectral radius stays below one and both matrices drawn from a
seeded generator. Each step applies classifier-free guidance,

    z <- z - eta * ((1 + omega) * eps(z, p_cond) - omega * eps(z, p_null)),

once with the original prompt (baseline) and once with the filter's per-step
embedding plus the spectral latent hook (filtered), both from the same seeded
starting latent. The point is not image quality; it is a reproducible scalar
trace of how much the filter perturbs a guided trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameter, NumericDivergence
from .filtering import ConceptSubspace, PromptEmbedding
from .pipeline import FilterConfig, FilterResult, embedding_at, prepare
from .spectral import build_lowfreq_mask, reattend

# A trajectory whose latent norm passes this is declared blown up.
BLOWUP_NORM = 1e12


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Harness knobs: schedule length, guidance weight, step size, latent
    shape, seed, and the embedded filter configuration (whose total_steps is
    forced to match ``steps``)."""

    steps: int = 50
    omega: float = 1.0
    eta: float = 0.1
    latent_shape: tuple[int, int, int] = (2, 8, 8)
    seed: int = 0
    filter: FilterConfig | None = None

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidParameter(f"steps must be a positive integer, got {self.steps}")
        if not np.isfinite(self.omega) or self.omega < 0:
            raise InvalidParameter(f"omega must be finite and non-negative, got {self.omega}")
        if not np.isfinite(self.eta) or self.eta <= 0:
            raise InvalidParameter(f"eta must be a positive float, got {self.eta}")
        shape = tuple(int(d) for d in self.latent_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise InvalidParameter(f"latent_shape must be three positive integers, got {self.latent_shape}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidParameter(f"seed must be a non-negative integer, got {self.seed}")
        base = self.filter if self.filter is not None else FilterConfig()
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "latent_shape", shape)
        object.__setattr__(self, "filter", replace(base, total_steps=int(self.steps)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded run: latents after each step for both branches, their
    per-step L2 divergence, and which steps used the filtered embedding."""

    baseline: np.ndarray
    filtered: np.ndarray
    divergence: np.ndarray
    active_steps: np.ndarray
    result: FilterResult

    def __post_init__(self):
        for name in ("baseline", "filtered", "divergence", "active_steps"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _check_norm(z: np.ndarray, step: int) -> None:
    norm = float(np.linalg.norm(z))
    if norm > BLOWUP_NORM:
        raise NumericDivergence(step, norm)


def simulate(config: SimConfig, prompt: PromptEmbedding, subspace: ConceptSubspace) -> Trajectory:
    """Run baseline and filtered trajectories from one seeded start."""
    fc = config.filter
    result = prepare(prompt, subspace, fc)
    channels, height, width = config.latent_shape
    size = channels * height * width
    dim = prompt.dim

    rng = np.random.default_rng(config.seed)
    mixing = rng.standard_normal((size, size))
    mixing /= np.abs(mixing).sum(axis=1).max()
    conditioning = rng.standard_normal((size, dim))
    z0 = rng.standard_normal(size)

    null_vec = (
        np.zeros(dim) if fc.null_embedding is None else np.asarray(fc.null_embedding, dtype=np.float64)
    )
    pooled_orig = prompt.matrix[prompt.valid].mean(axis=0)
    omega, eta = config.omega, config.eta

    def guided_step(z, pooled):
        eps_cond = mixing @ z + conditioning @ pooled
        eps_null = mixing @ z + conditioning @ null_vec
        return z - eta * ((1.0 + omega) * eps_cond - omega * eps_null)

    freq_mask = build_lowfreq_mask(height, width, fc.rho)
    baseline = np.empty((config.steps, channels, height, width))
    filtered = np.empty((config.steps, channels, height, width))
    divergence = np.empty(config.steps)
    active = []

    z_base = z0.copy()
    z_filt = z0.copy()
    for t in range(config.steps):
        z_base = guided_step(z_base, pooled_orig)
        _check_norm(z_base, t)

        emb = embedding_at(result, prompt.matrix, t)
        if t <= result.rounded_t:
            active.append(t)
        pooled_t = emb[prompt.valid].mean(axis=0)
        h_safe = guided_step(z_filt, pooled_t)
        if fc.spectral_enabled and t <= result.rounded_t:
            h_orig = guided_step(z_filt, pooled_orig)
            z_filt = reattend(
                h_orig.reshape(config.latent_shape),
                h_safe.reshape(config.latent_shape),
                freq_mask,
                fc.scale,
                fc.spectral_comparison,
            ).ravel()
        else:
            z_filt = h_safe
        _check_norm(z_filt, t)

        baseline[t] = z_base.reshape(config.latent_shape)
        filtered[t] = z_filt.reshape(config.latent_shape)
        divergence[t] = float(np.linalg.norm(z_filt - z_base))

    return Trajectory(
        baseline=baseline,
        filtered=filtered,
        divergence=divergence,
        active_steps=np.array(active, dtype=np.int64),
        result=result,
    )


def planted_trigger_prompt(n_tokens: int = 6, dim: int = 16, seed: int = 0):
    """Synthetic test payload: one token sitting exactly on a concept
    direction among mutually orthogonal fillers. Returns (prompt, subspace)."""
    if n_tokens < 2:
        raise InvalidParameter(f"need at least two tokens, got {n_tokens}")
    if dim < n_tokens:
        raise InvalidParameter(f"dim {dim} too small for {n_tokens} orthogonal tokens")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, n_tokens)))
    labels = ("trigger",) + tuple(f"filler{i}" for i in range(1, n_tokens))
    prompt = PromptEmbedding(labels, q.T, np.ones(n_tokens, dtype=bool))
    subspace = ConceptSubspace.from_basis(q[:, :1], labels=("planted",))
    return prompt, subspace
