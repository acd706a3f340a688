"""Deterministic toy generation host.

Stands in for a real text-to-image pipeline so the bridge can be exercised
without model weights: a whitespace tokenizer wrapped in begin/end specials,
a hash-seeded token encoder, and a linear guided scheduler that exposes the
two callback surfaces a session needs — one to swap the conditioning matrix
per step, one to post-process latent features when both branches ran.

Any object with the same surface (encode, set_conditioning_hook,
set_latent_hook, generate, latent_shape, steps) works as a host.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import HostError

START_TOKEN = "<start>"
END_TOKEN = "<end>"


class ToyHost:
    def __init__(self, dim=16, steps=8, omega=1.0, eta=0.1, latent_shape=(1, 6, 6)):
        self.dim = int(dim)
        self.steps = int(steps)
        self.omega = float(omega)
        self.eta = float(eta)
        self.latent_shape = tuple(int(d) for d in latent_shape)
        self._conditioning_hook = None
        self._latent_hook = None

    def tokenize(self, text: str) -> list[str]:
        return [START_TOKEN, *text.split(), END_TOKEN]

    def token_vector(self, token: str) -> np.ndarray:
        # seeded by the token text so the "encoder weights" never change
        seed = zlib.crc32(token.encode("utf-8"))
        return np.random.default_rng(seed).standard_normal(self.dim).astype(np.float32)

    def encode(self, text):
        """Token embedding matrix plus a (text, valid) table, float32."""
        if not isinstance(text, str):
            raise HostError(f"prompt must be text, got {type(text).__name__}")
        tokens = self.tokenize(text)
        matrix = np.stack([self.token_vector(token) for token in tokens])
        return matrix, [(token, True) for token in tokens]

    def set_conditioning_hook(self, fn) -> None:
        self._conditioning_hook = fn

    def set_latent_hook(self, fn) -> None:
        self._latent_hook = fn

    def generate(self, text: str, seed: int) -> np.ndarray:
        """Run the guided scheduler; bitwise-deterministic in (text, seed)."""
        base, _ = self.encode(text)
        size = 1
        for dim in self.latent_shape:
            size *= dim
        rng = np.random.default_rng(seed)
        mixing = rng.standard_normal((size, size))
        mixing /= max(1.0, float(np.abs(mixing).sum(axis=1).max()))
        conditioning = rng.standard_normal((size, self.dim))
        z = rng.standard_normal(size)

        def guided(state, cond_matrix):
            pooled = cond_matrix.mean(axis=0)
            eps_cond = mixing @ state + conditioning @ pooled
            eps_null = mixing @ state
            return (1.0 + self.omega) * eps_cond - self.omega * eps_null

        for t in range(self.steps):
            cond = base if self._conditioning_hook is None else self._conditioning_hook(t, base)
            step_eps = guided(z, cond)
            if self._latent_hook is not None:
                h_safe = step_eps.reshape(self.latent_shape)
                h_orig = guided(z, base).reshape(self.latent_shape)
                replaced = self._latent_hook(t, h_orig, h_safe)
                if replaced is not None:
                    step_eps = np.asarray(replaced, dtype=np.float64).ravel()
            z = z - self.eta * step_eps
        return z.reshape(self.latent_shape)
