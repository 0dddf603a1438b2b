import numpy as np
import pytest

from scenmine.types import TrackPoint, Trajectory


def make_traj(
    ax=None,
    vy=None,
    n=None,
    vehicle_id=1,
    recording_id="test",
    dt=0.04,
    first_frame=0,
    vx0=25.0,
    x0=0.0,
    y0=0.0,
    lane_id=2,
    ay=None,
):
    """Trajectory with prescribed per-frame ax and vy; x, vx, y integrated."""
    if n is None:
        n = len(ax) if ax is not None else len(vy)
    ax = np.zeros(n) if ax is None else np.asarray(ax, dtype=float)
    vy = np.zeros(n) if vy is None else np.asarray(vy, dtype=float)
    ay = np.zeros(n) if ay is None else np.asarray(ay, dtype=float)
    vx = vx0 + np.concatenate([[0.0], np.cumsum(ax[:-1]) * dt])
    x = x0 + np.concatenate([[0.0], np.cumsum(vx[:-1]) * dt])
    y = y0 + np.concatenate([[0.0], np.cumsum(vy[:-1]) * dt])
    points = tuple(
        TrackPoint(
            frame_index=first_frame + i,
            x=float(x[i]),
            y=float(y[i]),
            vx=float(vx[i]),
            vy=float(vy[i]),
            ax=float(ax[i]),
            ay=float(ay[i]),
            lane_id=lane_id,
        )
        for i in range(n)
    )
    return Trajectory(vehicle_id=vehicle_id, recording_id=recording_id, points=points, dt=dt)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
