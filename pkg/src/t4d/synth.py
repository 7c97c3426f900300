"""Procedural talking motion on a template mesh, for tests and demos.

The lower lip region moves down along -y by ``amplitude * w_v * s(t)`` with
``s(t) = |sin(pi * rate * t + phi(t))|``: a rectified sinusoid, one opening
per half period, whose phase carries a seeded offset and a slow seeded wobble.
``w_v`` is a smooth spatial falloff: 1 on lower-lip landmarks lying half a
lip gap below the mouth midline, 0 at and above that midline.
"""
from __future__ import annotations

import numpy as np

from .mesh import LipLandmarkSet, Mesh, MeshError, MeshSequence

DEFAULT_RATE = 4.0  # mouth openings per second
PHASE_WOBBLE = 0.3  # rad
WOBBLE_FREQ = 0.5   # Hz


def _phases(seed: int):
    rng = np.random.default_rng(seed)
    return float(rng.uniform(0.0, np.pi)), float(rng.uniform(0.0, 2.0 * np.pi))


def lip_signal(times, seed: int, rate: float = DEFAULT_RATE) -> np.ndarray:
    """Opening envelope in [0, 1] at the given times (seconds)."""
    t = np.asarray(times, dtype=np.float64)
    phi0, psi = _phases(seed)
    phase = phi0 + PHASE_WOBBLE * np.sin(2.0 * np.pi * WOBBLE_FREQ * t + psi)
    return np.abs(np.sin(np.pi * rate * t + phase))


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def motion_weights(template: Mesh, lips: LipLandmarkSet, radius_x: float = 35.0,
                   radius_y: float = 40.0) -> np.ndarray:
    """Per-vertex motion weight in [0, 1]."""
    lips.check(template.n_vertices)
    v = template.vertices
    up = v[list(lips.upper)]
    lo = v[list(lips.lower)]
    gap = up[:, 1].mean() - lo[:, 1].mean()
    if gap <= 0:
        raise MeshError("upper lip landmarks must lie above (greater y than) the lower ones")
    mid = lo[:, 1].mean() + 0.5 * gap
    half = 0.5 * gap
    # vertical ramp: 0 at the midline, 1 once half a gap below it
    ramp = _smoothstep((mid - v[:, 1]) / half)
    # horizontal / vertical falloff, flat over the landmark span
    cx = lo[:, 0].mean()
    span = 0.5 * (lo[:, 0].max() - lo[:, 0].min())
    dx = np.maximum(np.abs(v[:, 0] - cx) - span, 0.0)
    dy = np.maximum(lo[:, 1].min() - v[:, 1], 0.0)
    fall = np.exp(-(dx / radius_x) ** 2 - (dy / radius_y) ** 2)
    return ramp * fall


def synth_talking_sequence(template: Mesh, lips: LipLandmarkSet, T: int = 120,
                           fps: float = 30.0, amplitude: float = 4.0, seed: int = 0,
                           rate: float = DEFAULT_RATE) -> MeshSequence:
    """Animate ``template`` for ``T`` frames; the template becomes the neutral frame."""
    if T < 2:
        raise ValueError("synthetic sequences need T >= 2")
    if fps <= 0:
        raise ValueError("fps must be positive")
    w = motion_weights(template, lips)
    s = lip_signal(np.arange(T) / fps, seed, rate)
    pos = np.repeat(template.vertices[None], T, axis=0)
    pos[:, :, 1] -= amplitude * s[:, None] * w[None, :]
    return MeshSequence.from_positions(pos, template.faces, fps=fps, neutral=template)
