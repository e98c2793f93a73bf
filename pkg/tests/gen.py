"""Random structured values for round-trip testing."""

import numpy as np

from unifiedvl.grammar import BoundingBox, Detection, InstanceOutline, Polygon, PoseInstance

_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz "))


def box(rng, n=2048):
    x = np.sort(rng.integers(0, n, size=2))
    y = np.sort(rng.integers(0, n, size=2))
    return BoundingBox(int(x[0]), int(y[0]), int(x[1]), int(y[1]))


def category(rng):
    name = "".join(rng.choice(_LETTERS, size=rng.integers(1, 10))).strip()
    return name or "obj"


def detections(rng, n=2048):
    out = []
    for _ in range(rng.integers(1, 5)):
        cat = category(rng)
        if out and out[-1].category == cat:
            cat += "x"
        out.append(Detection(cat, tuple(box(rng, n) for _ in range(rng.integers(1, 4)))))
    return out


def polygon(rng, n=2048):
    return Polygon(tuple(map(tuple, rng.integers(0, n, size=(rng.integers(3, 21), 2)))))


def outline(rng, n=2048):
    return InstanceOutline(tuple(polygon(rng, n) for _ in range(rng.integers(1, 4))))


def pose(rng, n=2048):
    kps = tuple((int(x), int(y), float(v)) for x, y, v in
                zip(rng.integers(0, n, 16), rng.integers(0, n, 16), rng.integers(0, 2, 16)))
    return PoseInstance(box(rng, n), kps)


def poses(rng, n=2048):
    return [pose(rng, n) for _ in range(rng.integers(1, 4))]


GENERATORS = {"box": box, "detections": detections, "poly": outline, "pose": poses}
