"""Training-free safety filtering for text-conditioned diffusion generation.

The package detects prompt tokens sitting close to a user-defined toxic
concept subspace, projects them concept-orthogonally inside the prompt's own
input space, gates how many denoising steps see the filtered embedding, and
re-weights low-frequency latent spectra so the filtered branch cannot shout
over the original one.
"""

from .errors import (
    ConceptGuardError,
    CorruptFile,
    DegeneratePrompt,
    FormatError,
    InvalidDimensions,
    InvalidIndex,
    InvalidParameter,
    IoError,
    NonFiniteInput,
    NumericDivergence,
    SchemaError,
    UnsupportedVersion,
)
from .linalg import DEFAULT_PINV_TOLERANCE, Projector, project, residual, solve_coefficients
from .filtering import (
    ConceptSubspace,
    PromptEmbedding,
    ProximityReport,
    TriggerMask,
    blend,
    concept_distances,
    cosine_similarity,
    detect_triggers,
    input_space_basis,
    masked_pooled,
    project_tokens,
    round_half_away,
    select_for_timestep,
    self_validation_threshold,
)
from .spectral import FreqMask, build_lowfreq_mask, reattend
from .pipeline import FilterConfig, FilterResult, embedding_at, latent_hook, prepare
from .containers import (
    container_bytes,
    decode_container,
    load_concepts,
    load_prompt,
    read_container,
    write_container,
)
from .simulate import SimConfig, Trajectory, planted_trigger_prompt, simulate

__version__ = "0.1.0"

__all__ = [
    "ConceptGuardError",
    "CorruptFile",
    "DegeneratePrompt",
    "FormatError",
    "InvalidDimensions",
    "InvalidIndex",
    "InvalidParameter",
    "IoError",
    "NonFiniteInput",
    "NumericDivergence",
    "SchemaError",
    "UnsupportedVersion",
    "DEFAULT_PINV_TOLERANCE",
    "Projector",
    "project",
    "residual",
    "solve_coefficients",
    "ConceptSubspace",
    "PromptEmbedding",
    "ProximityReport",
    "TriggerMask",
    "blend",
    "concept_distances",
    "cosine_similarity",
    "detect_triggers",
    "input_space_basis",
    "masked_pooled",
    "project_tokens",
    "round_half_away",
    "select_for_timestep",
    "self_validation_threshold",
    "FreqMask",
    "build_lowfreq_mask",
    "reattend",
    "FilterConfig",
    "FilterResult",
    "embedding_at",
    "latent_hook",
    "prepare",
    "container_bytes",
    "decode_container",
    "load_concepts",
    "load_prompt",
    "read_container",
    "write_container",
    "SimConfig",
    "Trajectory",
    "planted_trigger_prompt",
    "simulate",
    "__version__",
]
