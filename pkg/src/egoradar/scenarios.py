"""Scripted driving scenes built from point-scatterer vehicles."""
from __future__ import annotations

import numpy as np

from .simulate import EgoTrajectory, PointTarget, Scene, SceneError

# Scatterer layout of one car relative to its rear corner nearest the road:
# (lateral offset away from the road, longitudinal offset, height above radar).
CAR_POINTS = (
    (0.0, 0.0, -0.2),
    (0.9, 0.0, 0.3),
    (0.0, 1.5, 0.4),
    (0.0, 3.0, -0.1),
    (0.0, 4.4, 0.5),
)
CAR_LENGTH_M = 4.4


def car(x_road_edge: float, y_rear: float, side: int, velocity=(0.0, 0.0, 0.0), label: str = "",
        amplitude: float = 1.0) -> list[PointTarget]:
    """Point scatterers of one car; ``side`` is -1 (left of the road) or +1 (right)."""
    return [
        PointTarget((x_road_edge + side * dx, y_rear + dy, dz), tuple(velocity), amplitude, f"{label}.{i}")
        for i, (dx, dy, dz) in enumerate(CAR_POINTS)
    ]


def rear_of_car(x_center: float, y_rear: float, velocity, label: str = "") -> list[PointTarget]:
    """Rear face of a car driving ahead of the radar."""
    pts = ((-0.8, 0.0, -0.1), (0.8, 0.0, 0.0), (0.0, 0.0, 0.4), (-0.9, 1.5, 0.2), (0.9, 1.5, 0.2))
    return [PointTarget((x_center + dx, y_rear + dy, dz), tuple(velocity), 1.0, f"{label}.{i}")
            for i, (dx, dy, dz) in enumerate(pts)]


def paper_drive(num_frames: int = 40, noise_std: float = 0.0, seed: int = 0) -> Scene:
    """Straight road with three parked cars per side and one car driving ahead.

    Axis convention: +y is forward (radar boresight), +x right, +z up.  The
    ego car drives forward at 8 m/s, sinks at 0.5 m/s, accelerates 2 m/s^2
    forward and drifts left at 1 m/s^2; the lead car drives at 5 m/s.
    """
    ego = EgoTrajectory((0.0, 8.0, -0.5), (-1.0, 2.0, 0.0))
    targets: list[PointTarget] = []
    for i, y in enumerate((8.0, 17.0, 27.0)):
        targets += car(-3.5, y, -1, label=f"parked_left{i}")
    for i, y in enumerate((12.0, 22.0, 31.0)):
        targets += car(3.5, y, +1, label=f"parked_right{i}")
    targets += rear_of_car(0.3, 14.0, (0.0, 5.0, 0.0), label="lead")
    return Scene(ego, tuple(targets), num_frames, noise_std, seed, out_of_range="drop")


def random_drive(num_static: int, num_moving: int, rng: np.random.Generator, num_frames: int = 1,
                 max_attempts: int = 100) -> Scene:
    """Procedural scene: parked cars off-road, movers on the road.

    Mover speeds are drawn from 2-12 m/s (forward or oncoming).  Overlapping
    cars are resampled up to ``max_attempts`` times each.
    """
    ego = EgoTrajectory((0.0, float(rng.uniform(6.0, 10.0)), float(rng.uniform(-0.5, 0.5))), (0.0, 0.0, 0.0))
    boxes: list[tuple[float, float, float, float]] = []

    def place(x_lo, x_hi, y_lo, y_hi, half_width, length):
        for _ in range(max_attempts):
            x = rng.uniform(x_lo, x_hi)
            y = rng.uniform(y_lo, y_hi)
            box = (x - half_width, x + half_width, y - 0.5, y + length + 0.5)
            if all(box[1] < b[0] or box[0] > b[1] or box[3] < b[2] or box[2] > b[3] for b in boxes):
                boxes.append(box)
                return x, y
        raise SceneError(f"could not place a car without overlap in {max_attempts} attempts")

    targets: list[PointTarget] = []
    for i in range(num_static):
        side = -1 if i % 2 == 0 else 1
        lo, hi = (-7.0, -3.5) if side < 0 else (3.5, 7.0)
        x, y = place(lo, hi, 4.0, 24.0, 1.0, CAR_LENGTH_M)
        # (x, y) is the car's road-side rear corner
        targets += car(x, y, side, label=f"static{i}")
    for i in range(num_moving):
        x, y = place(-2.5, 2.5, 4.0, 26.0, 1.0, 1.5)
        speed = rng.uniform(2.0, 12.0) * rng.choice([-1.0, 1.0])
        targets += rear_of_car(x, y, (0.0, speed, 0.0), label=f"mover{i}")
    return Scene(ego, tuple(targets), num_frames, 0.0, int(rng.integers(2**31)), out_of_range="drop")
