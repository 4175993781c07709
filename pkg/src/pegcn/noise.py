"""Bounding-box joint noise.

A fixed random subset of joint indices is chosen once per clip; in every
frame each chosen joint is overwritten with coordinates drawn uniformly from
the clip's bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .skeleton import SkeletonClip, clip_bbox, get_topology


@dataclass(frozen=True)
class NoiseSpec:
    level: int
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"noise level must be nonnegative, got {self.level}")


def _spatial_channels(clip: SkeletonClip) -> tuple[int, bool]:
    C = clip.coords.shape[0]
    try:
        topo = get_topology(clip.topology)
    except KeyError:
        return C, False
    if topo.confidence and C == topo.spatial_channels + 1:
        return topo.spatial_channels, True
    return C, False


def inject_noise(clip: SkeletonClip, spec: NoiseSpec) -> SkeletonClip:
    """Return a noised copy of ``clip``; the input is left untouched.

    Draw order from ``SplitMix64(spec.seed)``: the Fisher-Yates prefix picking
    ``level`` joints, then ``M * T * level * C_spatial`` uniforms laid out
    row-major over (person, frame, selected joint in ascending index order,
    channel).  Values for absent persons are drawn but discarded.  The
    confidence channel of noised joints, when the topology has one, is 1.
    """
    C, T, V, M = clip.coords.shape
    if spec.level > V:
        raise ValueError(f"noise level {spec.level} exceeds joint count {V}")
    out = clip.copy()
    if spec.level == 0:
        return out
    box = clip_bbox(clip)
    rng = SplitMix64(spec.seed)
    joints = sorted(rng.permutation_prefix(V, spec.level))
    Cs, has_conf = _spatial_channels(clip)
    u = rng.uniform(M * T * spec.level * Cs).reshape(M, T, spec.level, Cs)
    lo, hi = box[:Cs, 0], box[:Cs, 1]
    # rounding in lo + u * (hi - lo) can land one ulp past hi
    vals = np.minimum(lo + u * (hi - lo), hi)  # (M, T, L, Cs)
    present = clip.present_persons()
    for m in range(M):
        if not present[m]:
            continue
        out.coords[:Cs, :, joints, m] = vals[m].transpose(2, 0, 1)
        if has_conf:
            out.coords[Cs, :, joints, m] = 1.0
    return out


def noisy_copies(clips, level: int, seeds) -> list[SkeletonClip]:
    return [inject_noise(c, NoiseSpec(level, s)) for c, s in zip(clips, seeds)]
