"""Skeleton clips, body topologies and partitioned adjacency matrices."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed clip or topology record."""


@dataclass(frozen=True)
class Topology:
    name: str
    joint_count: int
    edges: tuple
    center: int
    spatial_channels: int = 3
    confidence: bool = False
    limb: tuple = ()
    rest_pose: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        V = self.joint_count
        if V < 1:
            raise ValueError(f"topology {self.name!r}: joint_count must be positive")
        if not 0 <= self.center < V:
            raise ValueError(f"topology {self.name!r}: center {self.center} out of range")
        for i, j in self.edges:
            if not (0 <= i < V and 0 <= j < V):
                raise ValueError(f"topology {self.name!r}: edge ({i}, {j}) out of range")
            if i == j:
                raise ValueError(f"topology {self.name!r}: self-loop ({i}, {i}) in edge list")

    @property
    def channels(self) -> int:
        return self.spatial_channels + int(self.confidence)

    def neighbors(self) -> list[list[int]]:
        nbrs = [set() for _ in range(self.joint_count)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return [sorted(s) for s in nbrs]

    def hop_distance(self) -> np.ndarray:
        """Hop distance of every joint from the center; -1 where unreachable."""
        dist = np.full(self.joint_count, -1, dtype=int)
        dist[self.center] = 0
        nbrs = self.neighbors()
        queue = deque([self.center])
        while queue:
            u = queue.popleft()
            for w in nbrs[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def is_connected(self) -> bool:
        return bool((self.hop_distance() >= 0).all())

    def to_json(self) -> dict:
        out = {"format_version": FORMAT_VERSION, "name": self.name,
               "joint_count": self.joint_count, "edges": [list(e) for e in self.edges],
               "center": self.center, "spatial_channels": self.spatial_channels,
               "confidence": self.confidence, "limb": list(self.limb)}
        if self.rest_pose is not None:
            out["rest_pose"] = self.rest_pose.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Topology":
        if obj.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"topology: unsupported format_version {obj.get('format_version')!r}")
        for key in ("name", "joint_count", "edges", "center"):
            if key not in obj:
                raise FormatError(f"topology: missing field {key!r}")
        pose = obj.get("rest_pose")
        return cls(name=obj["name"], joint_count=int(obj["joint_count"]),
                   edges=tuple((int(i), int(j)) for i, j in obj["edges"]),
                   center=int(obj["center"]),
                   spatial_channels=int(obj.get("spatial_channels", 3)),
                   confidence=bool(obj.get("confidence", False)),
                   limb=tuple(int(j) for j in obj.get("limb", ())),
                   rest_pose=None if pose is None else np.asarray(pose, dtype=np.float64))


_BUILTIN = ("ntu25", "openpose18", "chain9")
_cache: dict[str, Topology] = {}


def get_topology(name: str) -> Topology:
    """Built-in topology by name (``ntu25``, ``openpose18``, ``chain9``)."""
    if name not in _cache:
        if name not in _BUILTIN:
            raise KeyError(f"unknown topology {name!r}; built-ins are {', '.join(_BUILTIN)}")
        text = resources.files("pegcn.data").joinpath(f"{name}.json").read_text()
        _cache[name] = Topology.from_json(json.loads(text))
    return _cache[name]


def load_topology(path) -> Topology:
    with open(path) as fh:
        return Topology.from_json(json.load(fh))


def builtin_topologies() -> tuple:
    return _BUILTIN


# ---------------------------------------------------------------------------
# graph partitions

def _row_normalize(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


def build_graph(topology: Topology, strategy: str = "spatial") -> np.ndarray:
    """Stack of row-normalized partition adjacencies, shape ``(K, V, V)``.

    Row ``v`` of each matrix lists the joints that joint ``v`` aggregates from.

    ``uni``: K=2, self-loops and all bone neighbours.
    ``spatial``: K=3, self-loops, centripetal neighbours (hop distance to the
    center no greater than the joint's own) and centrifugal neighbours
    (strictly farther).
    """
    if not topology.is_connected():
        raise ValueError(f"topology {topology.name!r} is not connected")
    V = topology.joint_count
    eye = np.eye(V)
    nbr = np.zeros((V, V))
    for i, j in topology.edges:
        nbr[i, j] = nbr[j, i] = 1.0
    if strategy == "uni":
        return np.stack([eye, _row_normalize(nbr)])
    if strategy != "spatial":
        raise ValueError(f"unknown partition strategy {strategy!r}")
    dist = topology.hop_distance()
    farther = dist[None, :] > dist[:, None]  # column joint farther than row joint
    inward = np.where(farther, 0.0, nbr)
    outward = np.where(farther, nbr, 0.0)
    return np.stack([eye, _row_normalize(inward), _row_normalize(outward)])


# ---------------------------------------------------------------------------
# clips

@dataclass
class SkeletonClip:
    """One labelled sequence; ``coords`` is ``(C, T, V, M)``."""

    coords: np.ndarray
    topology: str
    label: int
    clip_id: str

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 4:
            raise ValueError(f"clip {self.clip_id}: coords must be 4-D (C, T, V, M), "
                             f"got shape {self.coords.shape}")
        if not np.isfinite(self.coords).all():
            raise ValueError(f"clip {self.clip_id}: non-finite coordinates")

    @property
    def shape(self) -> tuple:
        return self.coords.shape

    def present_persons(self) -> np.ndarray:
        """Boolean mask over M; an absent person is all-zero everywhere."""
        return np.any(self.coords != 0, axis=(0, 1, 2))

    def copy(self) -> "SkeletonClip":
        return SkeletonClip(self.coords.copy(), self.topology, self.label, self.clip_id)

    def __eq__(self, other):
        if not isinstance(other, SkeletonClip):
            return NotImplemented
        return (self.topology == other.topology and self.label == other.label
                and self.clip_id == other.clip_id and self.coords.shape == other.coords.shape
                and np.array_equal(self.coords, other.coords))


def clip_bbox(clip: SkeletonClip) -> np.ndarray:
    """Per-channel ``[min, max]`` over all frames, joints and present persons.

    Returns an array of shape ``(C, 2)``.
    """
    present = clip.present_persons()
    if clip.coords.size == 0 or not present.any():
        raise ValueError(f"clip {clip.clip_id}: no valid joints for a bounding box")
    pts = clip.coords[..., present]
    C = pts.shape[0]
    flat = pts.reshape(C, -1)
    return np.stack([flat.min(axis=1), flat.max(axis=1)], axis=1)


def stack_clips(clips, dtype=np.float64) -> np.ndarray:
    """``(N, C, T, V, M)`` batch array."""
    if not clips:
        raise ValueError("cannot stack an empty clip list")
    return np.stack([c.coords for c in clips]).astype(dtype, copy=False)


# ---------------------------------------------------------------------------
# JSONL interchange

def _clip_record(clip: SkeletonClip) -> dict:
    return {"format_version": FORMAT_VERSION, "clip_id": clip.clip_id,
            "topology": clip.topology, "label": int(clip.label),
            "shape": list(clip.coords.shape),
            # repr of a float round-trips exactly
            "coords": [float(v) for v in clip.coords.reshape(-1)]}


def save_clips(clips, path) -> None:
    with open(path, "w") as fh:
        for clip in clips:
            fh.write(json.dumps(_clip_record(clip)))
            fh.write("\n")


def _expected_joints(name: str) -> int | None:
    try:
        return get_topology(name).joint_count
    except KeyError:
        return None


def load_clips(path) -> list[SkeletonClip]:
    clips = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            clips.append(_parse_record(rec, path, lineno))
    return clips


def _parse_record(rec, path, lineno) -> SkeletonClip:
    def fail(fieldname, msg):
        raise FormatError(f"{path}:{lineno}: field {fieldname!r}: {msg}")

    if not isinstance(rec, dict):
        fail("<record>", "expected a JSON object")
    if rec.get("format_version") != FORMAT_VERSION:
        fail("format_version", f"unsupported value {rec.get('format_version')!r}")
    for key, typ in (("clip_id", str), ("topology", str), ("label", int),
                     ("shape", list), ("coords", list)):
        if key not in rec:
            fail(key, "missing")
        if not isinstance(rec[key], typ) or isinstance(rec[key], bool):
            fail(key, f"expected {typ.__name__}")
    shape = rec["shape"]
    if len(shape) != 4 or not all(isinstance(s, int) and s >= 0 for s in shape):
        fail("shape", "expected four nonnegative integers [C, T, V, M]")
    if len(rec["coords"]) != int(np.prod(shape)):
        fail("coords", f"length {len(rec['coords'])} does not match shape {shape}")
    try:
        coords = np.asarray(rec["coords"], dtype=np.float64).reshape(shape)
    except (TypeError, ValueError):
        fail("coords", "non-numeric entries")
    if not np.isfinite(coords).all():
        fail("coords", "non-finite entries")
    V = _expected_joints(rec["topology"])
    if V is not None and shape[2] != V:
        fail("shape", f"clip {rec['clip_id']!r} has {shape[2]} joints but topology "
                      f"{rec['topology']!r} has {V}")
    return SkeletonClip(coords, rec["topology"], rec["label"], rec["clip_id"])
