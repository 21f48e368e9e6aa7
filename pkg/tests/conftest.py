import json
from pathlib import Path

import numpy as np
import pytest

from aggregates.elements import ElementPrototype, root_tree
from aggregates.geometry import Sphere, icosphere

ROOT = Path(__file__).resolve().parents[1]
SCENES = ROOT / "scenes"


def scene_doc(**overrides):
    """Small box scene: 8^3 grid, top load, bottom anchor, one sphere item."""
    doc = {
        "domain": {"type": "box", "min": [0, 0, 0], "max": [8, 8, 8]},
        "loads": [{"region": {"type": "box", "min": [3, 3, 7.9], "max": [5, 5, 8.1]}, "force": [0, 0, -1]}],
        "anchors": [{"region": {"type": "box", "min": [-0.1, -0.1, -0.1], "max": [8.1, 8.1, 0.1]}}],
        "inventory": [{"id": "ball", "shape": {"type": "sphere", "center": [0, 0, 0], "radius": 1.0},
                       "samples": 1, "count": 1}],
        "grid": {"dims": [8, 8, 8]},
    }
    doc.update(overrides)
    return doc


def write_scene(tmp_path, doc, name="scene.json"):
    p = Path(tmp_path) / name
    p.write_text(json.dumps(doc))
    return p


def ball_prototype(pid="ball", radius=1.0, A=None):
    """Single-sample rigid prototype centred at the origin."""
    return ElementPrototype(pid, icosphere(radius, 1), np.zeros((1, 3)), np.array([radius]),
                            np.eye(3) if A is None else np.asarray(A, float), Sphere((0.0, 0.0, 0.0), radius))


def tree_prototype(Y, edges, root, radii=None, pid="tree"):
    """Deformable prototype on a given skeleton."""
    Y = np.asarray(Y, float)
    sk = root_tree(Y, edges, root)
    r = np.full(len(Y), 0.3) if radii is None else np.asarray(radii, float)
    return ElementPrototype(pid, icosphere(1.0, 0), Y, r, np.eye(3), Sphere((0.0, 0.0, 0.0), 1.0), sk)


def random_tree_edges(m, rng):
    """Random labelled tree by attaching each vertex to an earlier one."""
    perm = rng.permutation(m)
    return np.array([[perm[rng.integers(0, k)], perm[k]] for k in range(1, m)], dtype=int).reshape(-1, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
