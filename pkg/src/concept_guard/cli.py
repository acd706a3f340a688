"""Command-line interface.

Commands:
    analyze   score a prompt against a concept vocabulary, emit a JSON report
    filter    write the safe embedding container plus a JSON report
    spectral  re-attend one latent container against another
    simulate  run the deterministic toy denoiser and emit divergence metrics
    inspect   print container header fields and checksum status

Exit codes: 0 success, 2 input or format problem, 3 numeric or degenerate
input, 1 internal error. Set CONCEPT_GUARD_LOG to error, warn, info, or debug
to control diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import containers
from .errors import (
    ConceptGuardError,
    DegeneratePrompt,
    FormatError,
    InvalidDimensions,
    InvalidIndex,
    InvalidParameter,
    IoError,
    NonFiniteInput,
    NumericDivergence,
    SchemaError,
)
from .filtering import ConceptSubspace
from .linalg import DEFAULT_PINV_TOLERANCE
from .pipeline import FilterConfig, prepare
from .simulate import SimConfig, planted_trigger_prompt, simulate
from .spectral import build_lowfreq_mask, reattend

logger = logging.getLogger("concept_guard.cli")

_INPUT_ERRORS = (FormatError, SchemaError, IoError, InvalidDimensions, InvalidParameter, InvalidIndex)
_NUMERIC_ERRORS = (DegeneratePrompt, NonFiniteInput, NumericDivergence)

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _json_text(value) -> str:
    """Serialize with floats at 17 significant digits, enough to round-trip
    a double exactly."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, str):
        return json.dumps(value)
    if value is None:
        return "null"
    if isinstance(value, dict):
        inner = ", ".join(f"{json.dumps(str(k))}: {_json_text(v)}" for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_text(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value)!r}")


def _emit_json(doc: dict, out_path: str | None) -> None:
    text = _json_text(doc) + "\n"
    if out_path:
        containers.write_bytes_atomic(out_path, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def _filter_config(args, **overrides) -> FilterConfig:
    fields = dict(
        alpha=args.alpha,
        gamma=args.gamma,
        pinv_tolerance=args.pinv_tolerance,
        exclude_boundary_tokens=args.exclude_boundary_tokens,
    )
    fields.update(overrides)
    return FilterConfig(**fields)


def _load_inputs(args):
    prompt = containers.load_prompt(args.prompt)
    subspace = containers.load_concepts(args.concepts, args.concept_emb, args.pinv_tolerance)
    return prompt, subspace


def _report_doc(result, full: bool) -> dict:
    doc = {
        "distances": list(result.report.distances),
        "looMeans": list(result.report.loo_means),
        "mask": [int(f) for f in result.mask.flags],
        "pooledCosine": result.diagnostics["pooled_cosine"],
        "tPrime": result.t_prime,
    }
    if full:
        doc["roundedT"] = result.rounded_t
        doc["degenerate"] = result.degenerate
        doc["conceptComponentNorms"] = result.diagnostics["concept_component_norms"]
    return doc


def cmd_analyze(args) -> int:
    prompt, subspace = _load_inputs(args)
    result = prepare(prompt, subspace, _filter_config(args))
    if result.degenerate:
        raise DegeneratePrompt("prompt is too small for leave-one-out analysis")
    _emit_json(_report_doc(result, full=False), args.out)
    return 0


def cmd_filter(args) -> int:
    prompt, subspace = _load_inputs(args)
    null_embedding = None
    if args.null_emb:
        null_matrix, _ = containers.read_container(args.null_emb)
        null_embedding = np.asarray(null_matrix, dtype=np.float64).reshape(-1)
    config = _filter_config(args, blend_mode=args.mode, null_embedding=null_embedding)
    result = prepare(prompt, subspace, config)
    safe_bytes = containers.container_bytes(
        result.safe, list(zip(prompt.tokens, (bool(v) for v in prompt.valid)))
    )
    report_text = _json_text(_report_doc(result, full=True)) + "\n"
    containers.write_bytes_atomic(args.out_safe, safe_bytes)
    containers.write_bytes_atomic(args.out_report, report_text.encode("utf-8"))
    return 0


def cmd_spectral(args) -> int:
    h_orig, _ = containers.read_container(args.orig)
    h_safe, _ = containers.read_container(args.safe)
    if h_orig.ndim != 3 or h_safe.ndim != 3:
        raise InvalidDimensions("spectral inputs must be 3-D latent containers")
    mask = build_lowfreq_mask(h_safe.shape[1], h_safe.shape[2], args.rho)
    out = reattend(h_orig, h_safe, mask, args.scale, args.compare)
    containers.write_bytes_atomic(args.out, containers.container_bytes(out))
    return 0


def _sim_config_from_json(path: str, seed: int) -> SimConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("simulation config must be a JSON object")

    known = {"steps", "omega", "eta", "latent", "seed", "filter", "prompt", "concepts", "conceptEmb", "synthetic"}
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"unknown simulation config keys: {sorted(unknown)}")

    filter_doc = doc.get("filter", {})
    if not isinstance(filter_doc, dict):
        raise SchemaError('"filter" must be an object')
    filter_keys = {
        "alpha": "alpha",
        "gamma": "gamma",
        "scale": "scale",
        "rho": "rho",
        "blendMode": "blend_mode",
        "spectralComparison": "spectral_comparison",
        "spectralEnabled": "spectral_enabled",
        "pinvTolerance": "pinv_tolerance",
        "excludeBoundaryTokens": "exclude_boundary_tokens",
    }
    unknown = set(filter_doc) - set(filter_keys)
    if unknown:
        raise SchemaError(f"unknown filter config keys: {sorted(unknown)}")
    try:
        filter_config = FilterConfig(**{filter_keys[k]: v for k, v in filter_doc.items()})
        return SimConfig(
            steps=doc.get("steps", 50),
            omega=doc.get("omega", 1.0),
            eta=doc.get("eta", 0.1),
            latent_shape=tuple(doc.get("latent", (2, 8, 8))),
            seed=seed,
            filter=filter_config,
        )
    except TypeError as exc:
        raise SchemaError(f"simulation config field has the wrong type: {exc}") from exc


def cmd_simulate(args) -> int:
    config = _sim_config_from_json(args.config, args.seed)
    with open(args.config, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    if doc.get("prompt"):
        if not (doc.get("concepts") and doc.get("conceptEmb")):
            raise SchemaError('config with a "prompt" path also needs "concepts" and "conceptEmb"')
        prompt = containers.load_prompt(doc["prompt"])
        subspace = containers.load_concepts(doc["concepts"], doc["conceptEmb"], config.filter.pinv_tolerance)
    else:
        synthetic = doc.get("synthetic", {})
        if not isinstance(synthetic, dict):
            raise SchemaError('"synthetic" must be an object')
        unknown = set(synthetic) - {"tokens", "dim"}
        if unknown:
            raise SchemaError(f"unknown synthetic config keys: {sorted(unknown)}")
        prompt, subspace = planted_trigger_prompt(
            n_tokens=synthetic.get("tokens", 6), dim=synthetic.get("dim", 16), seed=config.seed
        )
    trajectory = simulate(config, prompt, subspace)
    doc = {
        "steps": config.steps,
        "seed": config.seed,
        "tPrime": trajectory.result.t_prime,
        "roundedT": trajectory.result.rounded_t,
        "activeSteps": [int(t) for t in trajectory.active_steps],
        "divergence": list(trajectory.divergence),
        "maxDivergence": float(trajectory.divergence.max()),
        "finalDivergence": float(trajectory.divergence[-1]),
    }
    _emit_json(doc, args.out)
    return 0


def cmd_inspect(args) -> int:
    matrix, tokens = containers.read_container(args.path)
    print(f"magic: {containers.MAGIC.decode('ascii')}")
    print(f"version: {containers.VERSION}")
    print("dtype: f32")
    print(f"dims: {list(matrix.shape)}")
    print(f"tokens: {'none' if tokens is None else len(tokens)}")
    print("crc: OK")
    return 0


def _add_filter_flags(parser: argparse.ArgumentParser, defaults: FilterConfig) -> None:
    parser.add_argument("--prompt", required=True, help="prompt embedding container (SFEB)")
    parser.add_argument("--concepts", required=True, help="concept vocabulary JSON")
    parser.add_argument("--concept-emb", required=True, help="concept embedding container (SFEB)")
    parser.add_argument("--alpha", type=float, default=defaults.alpha, help="detection sensitivity margin")
    parser.add_argument("--gamma", type=float, default=defaults.gamma, help="step-threshold scale")
    parser.add_argument(
        "--pinv-tolerance",
        type=float,
        default=defaults.pinv_tolerance,
        help="relative singular-value cutoff for projectors",
    )
    parser.add_argument(
        "--exclude-boundary-tokens",
        action="store_true",
        default=defaults.exclude_boundary_tokens,
        help="drop the first/last valid tokens before detection",
    )


def build_parser() -> argparse.ArgumentParser:
    defaults = FilterConfig()
    parser = argparse.ArgumentParser(
        prog="concept-guard",
        description="Training-free safety filtering for text-conditioned diffusion embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "analyze",
        help="score a prompt against a concept vocabulary",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_filter_flags(p, defaults)
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser(
        "filter",
        help="write the safe embedding and its report",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_filter_flags(p, defaults)
    p.add_argument("--mode", choices=["projected", "null"], default=defaults.blend_mode, help="row replacement mode")
    p.add_argument("--null-emb", default=None, help="container holding the replacement row for --mode null")
    p.add_argument("--out-safe", required=True, help="output container for the safe embedding")
    p.add_argument("--out-report", required=True, help="output path for the JSON report")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser(
        "spectral",
        help="re-attend one latent container against another",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--orig", required=True, help="original-branch latent container (3-D)")
    p.add_argument("--safe", required=True, help="filtered-branch latent container (3-D)")
    p.add_argument("--rho", type=float, default=defaults.rho, help="low-frequency fraction per axis")
    p.add_argument("--scale", type=float, default=defaults.scale, help="attenuation for over-loud coefficients")
    p.add_argument(
        "--compare",
        choices=["greater", "less"],
        default=defaults.spectral_comparison,
        help="damp coefficients whose magnitude compares this way against the original",
    )
    p.add_argument("--out", required=True, help="output latent container")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser(
        "simulate",
        help="run the deterministic toy denoiser",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--config", required=True, help="simulation config JSON")
    p.add_argument("--seed", type=int, required=True, help="generator seed (overrides the config)")
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "inspect",
        help="print container header fields and checksum status",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("path", help="container file to inspect")
    p.set_defaults(func=cmd_inspect)

    return parser


def _configure_logging() -> None:
    name = os.environ.get("CONCEPT_GUARD_LOG", "warn").lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        logger.error("%s", exc)
        return 2
    except _NUMERIC_ERRORS as exc:
        logger.error("%s", exc)
        return 3
    except ConceptGuardError as exc:
        logger.error("internal error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
