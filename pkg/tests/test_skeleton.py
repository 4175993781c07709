import json

import numpy as np
import pytest

from pegcn.skeleton import (FormatError, SkeletonClip, Topology, build_graph, builtin_topologies,
                            clip_bbox, get_topology, load_clips, load_topology, save_clips)
from pegcn.synth import SyntheticSpec, synth_generate

CHAIN3 = Topology("chain3", 3, ((0, 1), (1, 2)), center=1)


def test_single_joint_uni():
    A = build_graph(Topology("dot", 1, (), 0), "uni")
    np.testing.assert_array_equal(A, [[[1.0]], [[0.0]]])


def test_chain3_uni_rows():
    A = build_graph(CHAIN3, "uni")
    np.testing.assert_array_equal(A[1], [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])


def test_chain3_spatial_rows():
    A = build_graph(CHAIN3, "spatial")
    np.testing.assert_array_equal(A[1][0], [0, 1, 0])  # centripetal, joint 0
    np.testing.assert_array_equal(A[2][1], [0.5, 0, 0.5])  # centrifugal, joint 1
    np.testing.assert_array_equal(A[1][1], [0, 0, 0])  # centripetal, joint 1


def test_equidistant_neighbour_is_centripetal():
    # triangle 0-1-2 with center 0: joints 1 and 2 are both one hop away
    topo = Topology("tri", 3, ((0, 1), (1, 2), (0, 2)), center=0)
    A = build_graph(topo, "spatial")
    assert A[1][1, 2] > 0 and A[2][1, 2] == 0


def test_disconnected_rejected():
    with pytest.raises(ValueError, match="not connected"):
        build_graph(Topology("split", 3, ((0, 1),), center=0))


def test_self_loop_in_edges_rejected():
    with pytest.raises(ValueError, match="self-loop"):
        Topology("bad", 2, ((0, 0), (0, 1)), center=0)


@pytest.mark.parametrize("name", builtin_topologies())
@pytest.mark.parametrize("strategy", ["uni", "spatial"])
def test_partitions_disjoint_and_complete(name, strategy):
    topo = get_topology(name)
    A = build_graph(topo, strategy)
    expected = {(v, v) for v in range(topo.joint_count)}
    for i, j in topo.edges:
        expected |= {(i, j), (j, i)}
    seen = []
    for k in range(A.shape[0]):
        seen.extend(zip(*np.nonzero(A[k])))
    assert len(seen) == len(set(seen))
    assert set(map(tuple, seen)) == expected
    sums = A.sum(axis=2)
    nonzero = A.any(axis=2)
    np.testing.assert_allclose(sums[nonzero], 1.0, rtol=0, atol=1e-9)


def test_builtin_facts():
    ntu, op, ch = (get_topology(n) for n in ("ntu25", "openpose18", "chain9"))
    assert (ntu.joint_count, ntu.channels, ntu.center) == (25, 3, 1)
    assert (op.joint_count, op.spatial_channels, op.confidence) == (18, 2, True)
    assert (ch.joint_count, ch.center) == (9, 4)
    assert len(ntu.edges) == 24 and len(op.edges) == 17  # trees
    for t in (ntu, op, ch):
        assert t.is_connected()


def test_topology_file_roundtrip(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps(get_topology("openpose18").to_json()))
    assert load_topology(path) == get_topology("openpose18")


def _clip(coords, cid="c"):
    return SkeletonClip(np.asarray(coords, dtype=float), "custom", 0, cid)


def test_bbox_two_points():
    coords = np.zeros((3, 1, 2, 1))
    coords[:, 0, 1, 0] = [1, 2, 3]
    np.testing.assert_array_equal(clip_bbox(_clip(coords)), [[0, 1], [0, 2], [0, 3]])


def test_bbox_degenerate():
    coords = np.ones((3, 4, 5, 1)) * np.array([0.5, -1.0, 2.0])[:, None, None, None]
    box = clip_bbox(_clip(coords))
    np.testing.assert_array_equal(box[:, 0], box[:, 1])


def test_bbox_matches_scan_and_skips_absent_person():
    rng = np.random.default_rng(11)
    coords = np.zeros((3, 3, 4, 2))
    coords[..., 0] = rng.uniform(1.0, 5.0, (3, 3, 4))  # person 1 absent, zeros would drag min to 0
    lo, hi = [np.inf] * 3, [-np.inf] * 3
    for c in range(3):
        for t in range(3):
            for v in range(4):
                lo[c] = min(lo[c], coords[c, t, v, 0])
                hi[c] = max(hi[c], coords[c, t, v, 0])
    np.testing.assert_array_equal(clip_bbox(_clip(coords)), np.stack([lo, hi], axis=1))


def test_bbox_empty_clip_rejected():
    with pytest.raises(ValueError, match="no valid joints"):
        clip_bbox(_clip(np.zeros((3, 2, 2, 1))))


def test_clip_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        _clip(np.full((3, 1, 1, 1), np.nan))


# synthetic data ------------------------------------------------------------

def test_synth_deterministic():
    spec = SyntheticSpec(seed=7, per_class=3, frames=10)
    a, b = synth_generate(spec), synth_generate(spec)
    assert all(x.coords.tobytes() == y.coords.tobytes() and x == y for x, y in zip(a, b))


def test_synth_seed_matters():
    a = synth_generate(SyntheticSpec(seed=1, per_class=1))
    b = synth_generate(SyntheticSpec(seed=2, per_class=1))
    assert not np.array_equal(a[0].coords, b[0].coords)


def test_synth_balanced():
    clips = synth_generate(SyntheticSpec(classes=4, per_class=8))
    assert len(clips) == 32
    assert np.bincount([c.label for c in clips]).tolist() == [8, 8, 8, 8]
    assert len({c.clip_id for c in clips}) == 32


def test_still_without_jitter_is_static():
    clips = synth_generate(SyntheticSpec(classes=4, per_class=2, jitter=0.0, topology="ntu25"))
    for c in clips:
        if c.label == 3:
            assert np.array_equal(c.coords, np.repeat(c.coords[:, :1], c.coords.shape[1], axis=1))
        else:
            assert not np.array_equal(c.coords[:, 0], c.coords[:, 5])


def test_synth_confidence_channel():
    clips = synth_generate(SyntheticSpec(topology="openpose18", per_class=1))
    assert clips[0].shape[0] == 3
    assert np.all(clips[0].coords[2] == 1.0)


def test_synth_too_many_classes():
    with pytest.raises(ValueError, match="class_motions"):
        synth_generate(SyntheticSpec(classes=5))


def test_synth_custom_motions():
    motions = [{"family": "wave", "amplitude": (0.1, 0.2), "frequency": (1, 2)},
               {"family": "wave", "amplitude": (0.4, 0.5), "frequency": (1, 2)},
               {"family": "still"}, {"family": "bounce", "amplitude": (0.1, 0.1), "frequency": (1, 1)},
               {"family": "twist", "amplitude": (0.2, 0.3), "frequency": (1, 1)}]
    clips = synth_generate(SyntheticSpec(classes=5, per_class=2, class_motions=motions))
    assert len(clips) == 10


def test_synth_two_persons_second_absent():
    clips = synth_generate(SyntheticSpec(per_class=1, persons=2))
    assert clips[0].shape[-1] == 2
    assert clips[0].present_persons().tolist() == [True, False]


# interchange format --------------------------------------------------------

def test_roundtrip(tmp_path):
    clips = synth_generate(SyntheticSpec(topology="openpose18", per_class=2, frames=6, seed=3))
    path = tmp_path / "clips.jsonl"
    save_clips(clips, path)
    back = load_clips(path)
    assert back == clips
    for a, b in zip(back, clips):
        assert a.coords.tobytes() == b.coords.tobytes()


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_clips(path) == []


def test_wrong_joint_count_names_clip(tmp_path):
    clip = SkeletonClip(np.ones((3, 2, 7, 1)), "ntu25", 0, "bad-clip-7")
    path = tmp_path / "x.jsonl"
    save_clips([clip], path)
    with pytest.raises(FormatError, match="bad-clip-7"):
        load_clips(path)


@pytest.mark.parametrize("mutate, field", [
    (lambda r: r.pop("label"), "label"),
    (lambda r: r.update(coords=r["coords"][:-1]), "coords"),
    (lambda r: r.update(shape=[3, 2]), "shape"),
    (lambda r: r.update(format_version=2), "format_version"),
    (lambda r: r.update(label="x"), "label"),
])
def test_malformed_record_reports_line_and_field(tmp_path, mutate, field):
    good = synth_generate(SyntheticSpec(per_class=1, frames=2))
    path = tmp_path / "m.jsonl"
    save_clips(good[:2], path)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    mutate(rec)
    lines[1] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match=rf":2: field '{field}'"):
        load_clips(path)
