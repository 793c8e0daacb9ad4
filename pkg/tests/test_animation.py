import numpy as np
import pytest

from gesturegen import animation
from gesturegen.errors import InvalidInputError
from gesturegen.poses import (
    PoseSequence,
    Skeleton,
    coords_to_dirvecs,
    dirvecs_to_coords,
    spine_center,
)

from test_poses import random_valid_poses


@pytest.fixture()
def dirvec_seq(rng):
    return coords_to_dirvecs(spine_center(random_valid_poses(rng)))


def test_csv_shape(dirvec_seq, tmp_path):
    path = tmp_path / "anim.csv"
    animation.export_animation(dirvec_seq, None, path, "csv")
    lines = path.read_text().strip().split("\n")
    assert lines[0] == animation.CSV_HEADER
    assert len(lines) == 1 + 34
    assert all(len(ln.split(",")) == 31 for ln in lines[1:])


def test_csv_round_trip(dirvec_seq, tmp_path):
    path = tmp_path / "anim.csv"
    animation.export_animation(dirvec_seq, None, path, "csv")
    coords = dirvecs_to_coords(dirvec_seq)
    back = animation.load_pose_csv(path, fps=15.0)
    assert np.abs(back.frames - coords.frames).max() < 1e-9


def test_json_round_trip(dirvec_seq, tmp_path):
    path = tmp_path / "anim.json"
    animation.export_animation(dirvec_seq, None, path, "json")
    coords = dirvecs_to_coords(dirvec_seq)
    back = animation.load_pose_json(path)
    assert np.abs(back.frames - coords.frames).max() < 1e-6
    assert back.fps == 15.0


def test_bvh_header_fields(dirvec_seq, tmp_path):
    path = tmp_path / "anim.bvh"
    animation.export_animation(dirvec_seq, None, path, "bvh")
    text = path.read_text()
    assert "HIERARCHY" in text and "ROOT spine" in text
    assert f"Frames: {len(dirvec_seq)}" in text
    assert f"Frame Time: {1.0 / 15.0:.8f}" in text
    motion = text.split("MOTION")[1].strip().split("\n")[2:]
    assert len(motion) == len(dirvec_seq)
    # 3 root position channels + 3 rotation channels per joint
    assert all(len(row.split()) == 3 + 3 * 10 for row in motion)
    assert text.count("JOINT") == 9
    assert text.count("End Site") == 3


def test_bvh_rotations_reproduce_directions(dirvec_seq):
    # forward kinematics with the written local rotations reproduces the
    # bone directions: exactly where the parent joint has a single child,
    # as a close best-fit at the neck (three children, one rotation)
    from scipy.spatial.transform import Rotation

    from gesturegen.animation import _DFS_ORDER, _REST_DIRS, _frame_eulers
    from gesturegen.poses import BONE_ORDER, PARENT_INDEX

    frame = dirvec_seq.frames[5]
    eulers = _frame_eulers(frame)
    glob = {}
    for j in _DFS_ORDER:
        local = Rotation.from_euler("ZXY", eulers[j], degrees=True)
        parent = PARENT_INDEX[j]
        glob[j] = (glob[parent] * local) if parent >= 0 else local
    single_child_bones = (0, 2, 5, 6, 7, 8)
    for b, (p, c) in enumerate(BONE_ORDER):
        got = glob[p].apply(_REST_DIRS[b])
        if b in single_child_bones:
            assert np.abs(got - frame[b]).max() < 1e-6
        else:
            assert float(np.dot(got, frame[b])) > 0.95


def test_unknown_format(dirvec_seq, tmp_path):
    with pytest.raises(InvalidInputError):
        animation.export_animation(dirvec_seq, None, tmp_path / "x.gif", "gif")


def test_unwritable_path(dirvec_seq, tmp_path):
    with pytest.raises(OSError):
        animation.export_animation(dirvec_seq, None, tmp_path / "missing" / "x.csv", "csv")
