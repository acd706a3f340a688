"""Bridge between a host pipeline and the core CLI.

A session owns one generation run: it exports the host's token embeddings as
a container file, asks the core CLI to filter them, caches the decision
(safe matrix, flag mask, step threshold), and wires the host's callbacks so
the safe embedding is injected for steps 0..roundedT and latent features are
re-attended through the core's spectral command. The core is reached only
through files and its CLI; nothing here imports it.
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import sfeb
from .errors import CoreError, HostError, UnsupportedHost

logger = logging.getLogger("concept_guard_adapter")


def default_core_command() -> list[str]:
    return [sys.executable, "-m", "concept_guard"]


@dataclass(frozen=True)
class AdapterConfig:
    concepts: str
    concept_emb: str
    alpha: float = 0.01
    gamma: float = 10.0
    rho: float = 0.25
    scale: float = 0.8
    mode: str = "projected"
    spectral: bool = True


class AdapterSession:
    """One session per generation run; holds the cached filter decision."""

    def __init__(self, host, config: AdapterConfig, workdir=None, core_command=None):
        self.host = host
        self.config = config
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="concept-guard-"))
        self.core_command = list(core_command) if core_command else default_core_command()
        self.safe_matrix = None
        self.rounded_t = None
        self.mask = None
        self.report = None
        self.installed = False

    def extract_prompt_embeddings(self, prompt_text: str) -> bytes:
        """Encode the prompt with the host and pack it as container bytes."""
        try:
            matrix, tokens = self.host.encode(prompt_text)
        except HostError:
            raise
        except Exception as exc:
            raise HostError(f"host encoder failed: {exc}") from exc
        return sfeb.encode_container(matrix, tokens)

    def _run_core(self, *argv: str) -> None:
        command = [*self.core_command, *argv]
        proc = subprocess.run(command, capture_output=True, text=True)
        if proc.returncode != 0:
            detail = proc.stderr.strip() or proc.stdout.strip()
            raise CoreError(f"core exited {proc.returncode}: {detail}")

    def install_hooks(self, prompt_text: str) -> None:
        for name in ("set_conditioning_hook", "set_latent_hook"):
            if not hasattr(self.host, name):
                raise UnsupportedHost(f"host lacks {name}")
        prompt_path = self.workdir / "prompt.sfeb"
        prompt_path.write_bytes(self.extract_prompt_embeddings(prompt_text))
        safe_path = self.workdir / "safe.sfeb"
        report_path = self.workdir / "report.json"
        self._run_core(
            "filter",
            "--prompt", str(prompt_path),
            "--concepts", self.config.concepts,
            "--concept-emb", self.config.concept_emb,
            "--alpha", repr(self.config.alpha),
            "--gamma", repr(self.config.gamma),
            "--mode", self.config.mode,
            "--out-safe", str(safe_path),
            "--out-report", str(report_path),
        )
        self.safe_matrix, _ = sfeb.decode_container(safe_path.read_bytes())
        self.report = json.loads(report_path.read_text())
        self.rounded_t = int(self.report["roundedT"])
        self.mask = [bool(flag) for flag in self.report["mask"]]

        self.host.set_conditioning_hook(self._conditioning)
        if self.config.spectral and any(self.mask):
            shape = getattr(self.host, "latent_shape", None)
            if shape is not None and len(shape) == 3:
                self.host.set_latent_hook(self._latent)
            else:
                # token-sequence latents have no frequency-grid geometry
                logger.warning(
                    "host latent shape %r is not a spatial grid; skipping spectral re-attention",
                    shape,
                )
        self.installed = True

    def uninstall_hooks(self) -> None:
        self.host.set_conditioning_hook(None)
        self.host.set_latent_hook(None)
        self.installed = False

    def _conditioning(self, t: int, base):
        return self.safe_matrix if t <= self.rounded_t else base

    def _latent(self, t: int, h_orig, h_safe):
        if t > self.rounded_t:
            return None
        orig_path = self.workdir / "h_orig.sfeb"
        safe_path = self.workdir / "h_safe.sfeb"
        out_path = self.workdir / "h_out.sfeb"
        sfeb.write_container(h_orig, orig_path)
        sfeb.write_container(h_safe, safe_path)
        self._run_core(
            "spectral",
            "--orig", str(orig_path),
            "--safe", str(safe_path),
            "--rho", repr(self.config.rho),
            "--scale", repr(self.config.scale),
            "--out", str(out_path),
        )
        matrix, _ = sfeb.decode_container(out_path.read_bytes())
        return matrix
