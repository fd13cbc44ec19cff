"""Robot-centric scene representation and prediction-instance assembly.

A scene holds one designated robot track plus surrounding agent tracks on
a shared integer time base with fixed dt. Targets are the agents within
the perception radius of the robot during an observed window; each target
gets the neighbors within the same radius of itself. Selection uses only
observed timesteps so training and inference see identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PEDESTRIAN = "pedestrian"
VEHICLE = "vehicle"

DEFAULT_PERCEPTION_PEDESTRIAN = 10.0  # meters
DEFAULT_PERCEPTION_VEHICLE = 30.0


@dataclass
class AgentTrack:
    """One agent's identity, category, and uniformly sampled 2D positions
    starting at integer time `start_time`."""

    agent_id: int
    category: str = PEDESTRIAN
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    start_time: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)

    @property
    def end_time(self) -> int:
        """Last timestep covered (inclusive)."""
        return self.start_time + len(self.positions) - 1

    def covers(self, t0: int, t1: int) -> bool:
        return self.start_time <= t0 and t1 <= self.end_time

    def position_at(self, t: int) -> np.ndarray:
        return self.positions[t - self.start_time]

    def window(self, t0: int, t1: int) -> np.ndarray:
        """Positions for timesteps t0..t1 inclusive."""
        return self.positions[t0 - self.start_time:t1 - self.start_time + 1]

    def overlap(self, t0: int, t1: int):
        """Covered sub-range of [t0, t1], or None."""
        lo = max(t0, self.start_time)
        hi = min(t1, self.end_time)
        return (lo, hi) if lo <= hi else None


@dataclass
class OccupancyGrid:
    """Binary traversability grid; cell (row, col) covers the square with
    lower-left corner origin + (col, row) * cell_size. 1 = traversable."""

    cells: np.ndarray
    cell_size: float
    origin: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        self.origin = np.asarray(self.origin, dtype=np.float64)

    @property
    def height(self):
        return self.cells.shape[0]

    @property
    def width(self):
        return self.cells.shape[1]

    def cell_of(self, point) -> tuple:
        col = int(np.floor((point[0] - self.origin[0]) / self.cell_size))
        row = int(np.floor((point[1] - self.origin[1]) / self.cell_size))
        return row, col


def write_occupancy_grid(path, grid: OccupancyGrid):
    with open(path, "w") as fh:
        fh.write(f"{grid.width} {grid.height} {grid.cell_size:.9g} "
                 f"{grid.origin[0]:.9g} {grid.origin[1]:.9g}\n")
        for row in grid.cells:
            fh.write("".join("1" if c > 0.5 else "0" for c in row) + "\n")


def read_occupancy_grid(path) -> OccupancyGrid:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ValueError(f"occupancy grid header needs 5 fields, got {len(header)}")
        width, height = int(header[0]), int(header[1])
        cell_size = float(header[2])
        origin = np.array([float(header[3]), float(header[4])])
        rows = []
        for i in range(height):
            line = fh.readline().strip()
            if len(line) != width:
                raise ValueError(f"grid row {i} has {len(line)} cells, expected {width}")
            rows.append([1.0 if ch == "1" else 0.0 for ch in line])
    return OccupancyGrid(cells=np.array(rows), cell_size=cell_size, origin=origin)


@dataclass
class Scene:
    """Robot track, surrounding agent tracks, time step, optional map."""

    robot: AgentTrack
    agents: list
    dt: float = 0.4
    grid: OccupancyGrid | None = None
    scene_id: str = "scene"

    def all_tracks(self):
        return [self.robot] + list(self.agents)

    def time_range(self):
        tracks = self.all_tracks()
        return (min(t.start_time for t in tracks),
                max(t.end_time for t in tracks))


@dataclass
class PredictionInstance:
    """Inputs for one forecast: the target's observed history, neighbor
    histories, a local map patch, and (training only) ground-truth
    futures. History spans t_obs+1 frames, future t_future - t_obs."""

    instance_id: str
    target_history: np.ndarray
    neighbor_histories: list
    map_patch: np.ndarray
    has_map: bool
    t_obs: int
    t_future: int
    dt: float
    category: str = PEDESTRIAN
    target_future: np.ndarray | None = None
    neighbor_futures: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.t_future - self.t_obs

    @property
    def last_observed(self) -> np.ndarray:
        return self.target_history[-1]


def default_perception_distance(scene: Scene) -> float:
    cats = {t.category for t in scene.all_tracks()}
    return DEFAULT_PERCEPTION_VEHICLE if VEHICLE in cats else DEFAULT_PERCEPTION_PEDESTRIAN


def _within(a: AgentTrack, b: AgentTrack, d: float, t0: int, t1: int) -> bool:
    """True when the tracks come within d at any shared timestep in
    [t0, t1] (Euclidean distance, closed threshold)."""
    ov_a = a.overlap(t0, t1)
    ov_b = b.overlap(t0, t1)
    if ov_a is None or ov_b is None:
        return False
    lo = max(ov_a[0], ov_b[0])
    hi = min(ov_a[1], ov_b[1])
    if lo > hi:
        return False
    pa = a.window(lo, hi)
    pb = b.window(lo, hi)
    dist = np.linalg.norm(pa - pb, axis=1)
    return bool(np.any(dist <= d))


def select_neighbors(scene: Scene, target: AgentTrack, d: float,
                     t_start: int | None = None, t_end: int | None = None) -> list:
    """Agents (the robot included) within d of the target at any timestep
    of the window; the target itself is excluded. Deterministic order by
    agent_id regardless of input ordering."""
    if d <= 0:
        raise ValueError("perception distance must be positive")
    if t_start is None or t_end is None:
        lo, hi = scene.time_range()
        t_start = lo if t_start is None else t_start
        t_end = hi if t_end is None else t_end
    found = [a for a in scene.all_tracks()
             if a.agent_id != target.agent_id and _within(target, a, d, t_start, t_end)]
    return sorted(found, key=lambda a: a.agent_id)


def extract_map_patch(grid: OccupancyGrid | None, position, patch_cells: int):
    """Axis-aligned square patch centered on the agent's cell.

    Cells falling outside the grid are non-traversable. With no map at
    all, returns an all-traversable patch and has_map=False so the map
    encoder can be bypassed downstream.
    """
    if patch_cells <= 0:
        raise ValueError("patch_cells must be positive")
    if grid is None:
        return np.ones((patch_cells, patch_cells)), False
    row, col = grid.cell_of(position)
    r0 = row - patch_cells // 2
    c0 = col - patch_cells // 2
    patch = np.zeros((patch_cells, patch_cells))
    rlo, rhi = max(r0, 0), min(r0 + patch_cells, grid.height)
    clo, chi = max(c0, 0), min(c0 + patch_cells, grid.width)
    if rlo < rhi and clo < chi:
        patch[rlo - r0:rhi - r0, clo - c0:chi - c0] = grid.cells[rlo:rhi, clo:chi]
    return patch, True


def build_prediction_instances(scene: Scene, d: float, t_obs: int, t_future: int,
                               with_future=True, patch_cells=8):
    """Sliding-window instance construction (stride one frame).

    For each window, every agent within d of the robot during the
    observed frames becomes a target; its neighbors are recomputed around
    the target itself. Tracks that only partially cover a window are
    counted in `skipped` rather than silently dropped.

    Returns (instances, skipped_count).
    """
    if t_obs < 1 or t_future <= t_obs:
        raise ValueError(f"bad horizon config t_obs={t_obs} t_future={t_future}")
    instances = []
    skipped = 0
    lo, hi = scene.time_range()
    for s in range(lo, hi - t_future + 1):
        obs_lo, obs_hi = s, s + t_obs
        fut_hi = s + t_future
        if not scene.robot.covers(obs_lo, obs_hi):
            continue
        for agent in scene.agents:
            if not agent.covers(obs_lo, fut_hi if with_future else obs_hi):
                if agent.overlap(obs_lo, fut_hi) is not None:
                    skipped += 1
                continue
            if not _within(agent, scene.robot, d, obs_lo, obs_hi):
                continue
            neighbors = select_neighbors(scene, agent, d, obs_lo, obs_hi)
            histories = []
            futures = []
            for nb in neighbors:
                ov = nb.overlap(obs_lo, obs_hi)
                histories.append(nb.window(*ov))
                if with_future and nb.covers(obs_hi + 1, fut_hi):
                    futures.append(nb.window(obs_hi + 1, fut_hi))
            patch, has_map = extract_map_patch(scene.grid, agent.position_at(obs_hi),
                                               patch_cells)
            instances.append(PredictionInstance(
                instance_id=f"{scene.scene_id}/a{agent.agent_id}/t{s}",
                target_history=agent.window(obs_lo, obs_hi),
                neighbor_histories=histories,
                map_patch=patch,
                has_map=has_map,
                t_obs=t_obs,
                t_future=t_future,
                dt=scene.dt,
                category=agent.category,
                target_future=agent.window(obs_hi + 1, fut_hi) if with_future else None,
                neighbor_futures=futures,
            ))
    return instances, skipped
