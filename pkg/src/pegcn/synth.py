"""Synthetic labelled skeleton sequences.

Four motion families are built in, one per default class:

``wave``    sinusoidal sideways displacement of the topology's limb chain,
            growing linearly toward the chain's end
``bounce``  vertical oscillation of the whole body
``twist``   rotation about the center joint (x-z plane in 3-D, x-y in 2-D)
``still``   static rest pose

Each clip draws amplitude and frequency uniformly from its class range and a
phase uniformly from [0, 2 pi), then adds i.i.d. Gaussian jitter.  All draws
come from one SplitMix64 stream seeded with ``derive_seed(seed, "synth")`` in
the order: per clip (class-major, then sample index) amplitude, frequency,
phase, then the ``C_spatial * T * V`` jitter normals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64, derive_seed
from .skeleton import SkeletonClip, Topology, get_topology

FAMILIES = ("wave", "bounce", "twist", "still")

DEFAULT_RANGES = {
    "wave": {"amplitude": (0.15, 0.3), "frequency": (1.0, 2.0)},
    "bounce": {"amplitude": (0.05, 0.15), "frequency": (1.0, 2.0)},
    "twist": {"amplitude": (0.4, 0.8), "frequency": (0.5, 1.5)},
    "still": {"amplitude": (0.0, 0.0), "frequency": (0.0, 0.0)},
}


@dataclass
class ClassMotion:
    family: str
    amplitude: tuple = (0.0, 0.0)
    frequency: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown motion family {self.family!r}")


@dataclass
class SyntheticSpec:
    classes: int = 4
    per_class: int = 8
    frames: int = 32
    topology: str = "chain9"
    jitter: float = 0.01
    seed: int = 0
    persons: int = 1
    class_motions: list | None = None
    id_prefix: str = "synth"

    def motions(self) -> list[ClassMotion]:
        if self.classes < 2:
            raise ValueError("synthetic spec needs at least 2 classes")
        if self.class_motions is not None:
            motions = [m if isinstance(m, ClassMotion) else ClassMotion(**m)
                       for m in self.class_motions]
            if len(motions) != self.classes:
                raise ValueError(f"{len(motions)} class motions given for {self.classes} classes")
            return motions
        if self.classes > len(FAMILIES):
            raise ValueError(f"{self.classes} classes requested but only {len(FAMILIES)} "
                             "built-in families; pass class_motions")
        return [ClassMotion(f, **DEFAULT_RANGES[f]) for f in FAMILIES[: self.classes]]

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticSpec":
        return cls(**obj)


def _rest_pose(topo: Topology) -> np.ndarray:
    if topo.rest_pose is not None:
        return np.asarray(topo.rest_pose, dtype=np.float64)
    return np.stack([np.zeros(topo.joint_count), 0.1 * np.arange(topo.joint_count)]
                    + [np.zeros(topo.joint_count)] * (topo.spatial_channels - 2), axis=1)


def _motion(family, pose, topo, amp, freq, phase, T) -> np.ndarray:
    """Spatial coordinates ``(T, V, Cs)`` for one clip, before jitter."""
    t = np.arange(T) / T
    s = np.sin(2 * np.pi * freq * t + phase)  # (T,)
    out = np.repeat(pose[None], T, axis=0)
    if family == "wave":
        chain = list(topo.limb) or list(range(topo.joint_count))
        for rank, j in enumerate(chain):
            out[:, j, 0] += amp * (rank + 1) / len(chain) * s
    elif family == "bounce":
        out[:, :, 1] += amp * s[:, None]
    elif family == "twist":
        plane = 2 if pose.shape[1] >= 3 else 1
        rel = pose - pose[topo.center]
        ang = amp * s
        c, sn = np.cos(ang)[:, None], np.sin(ang)[:, None]
        x, y = rel[None, :, 0], rel[None, :, plane]
        out[:, :, 0] = pose[topo.center, 0] + c * x - sn * y
        out[:, :, plane] = pose[topo.center, plane] + sn * x + c * y
    return out


def synth_generate(spec: SyntheticSpec) -> list[SkeletonClip]:
    """Deterministic, label-balanced dataset for ``spec``."""
    motions = spec.motions()
    if spec.per_class < 1 or spec.frames < 1:
        raise ValueError("per_class and frames must be positive")
    if spec.persons not in (1, 2):
        raise ValueError("persons must be 1 or 2")
    topo = get_topology(spec.topology)
    pose = _rest_pose(topo)
    Cs, V, T = topo.spatial_channels, topo.joint_count, spec.frames
    rng = SplitMix64(derive_seed(spec.seed, "synth"))
    clips = []
    for label, m in enumerate(motions):
        for i in range(spec.per_class):
            u = rng.uniform(3)
            amp = m.amplitude[0] + u[0] * (m.amplitude[1] - m.amplitude[0])
            freq = m.frequency[0] + u[1] * (m.frequency[1] - m.frequency[0])
            phase = 2 * np.pi * u[2]
            xyz = _motion(m.family, pose, topo, amp, freq, phase, T)
            if spec.jitter > 0:
                xyz = xyz + spec.jitter * rng.normal(T * V * Cs).reshape(Cs, T, V).transpose(1, 2, 0)
            coords = np.zeros((topo.channels, T, V, spec.persons))
            coords[:Cs, :, :, 0] = xyz.transpose(2, 0, 1)
            if topo.confidence:
                coords[Cs, :, :, 0] = 1.0
            clips.append(SkeletonClip(coords, topo.name, label, f"{spec.id_prefix}-{label}-{i:04d}"))
    return clips
