"""Dataset ingestion, synthetic-scene generation, and evaluation metrics.

The canonical trajectory text format is whitespace-separated
`frame_id agent_id x y`, one record per line, with frames at uniform
spacing (the stride is inferred, and a track is split wherever its frame
gap exceeds one stride). Synthetic scenes are deterministic by seed and
provide the desk-scale stand-in for real captures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import AgentTrack, Scene

MAX_REPULSION_ACCEL = 2.0  # m/s^2 cap on pairwise repulsion
GOAL_GAIN = 0.8
MAX_SPEED = 2.5


# ---------------------------------------------------------------------------
# trajectory text format

def load_trajectory_file(path, dt=0.4, obs_frames=8, pred_frames=12):
    """Parse one recording into a Scene (empty list for an empty file).

    The robot is the longest-duration track (ties toward the lowest id),
    which only anchors instance grouping; model inputs are unaffected.
    Tracks with non-uniform frame gaps are split at the gap. Returns a
    list of scenes for interface uniformity.
    """
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns "
                                 f"(frame_id agent_id x y), got {len(parts)}")
            try:
                frame = int(float(parts[0]))
                agent = int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: malformed record: {err}") from None
            records.append((frame, agent, x, y))
    if not records:
        return []

    frames = np.array(sorted({r[0] for r in records}))
    if len(frames) > 1:
        stride = int(np.min(np.diff(frames)))
    else:
        stride = 1
    base = int(frames[0])

    by_agent = {}
    seen = set()
    for frame, agent, x, y in records:
        if (frame, agent) in seen:
            raise ValueError(f"{path}: duplicate (frame_id, agent_id) = ({frame}, {agent})")
        seen.add((frame, agent))
        by_agent.setdefault(agent, []).append((frame, x, y))

    tracks = []
    for agent, rows in sorted(by_agent.items()):
        rows.sort()
        run_frames = [rows[0][0]]
        run_pts = [rows[0][1:]]
        segments = []
        for frame, x, y in rows[1:]:
            if frame - run_frames[-1] == stride:
                run_frames.append(frame)
                run_pts.append((x, y))
            else:
                segments.append((run_frames[0], run_pts))
                run_frames = [frame]
                run_pts = [(x, y)]
        segments.append((run_frames[0], run_pts))
        for idx, (start_frame, pts) in enumerate(segments):
            track_id = agent if len(segments) == 1 else agent * 1000 + idx
            tracks.append(AgentTrack(
                agent_id=track_id,
                positions=np.asarray(pts),
                start_time=(start_frame - base) // stride,
            ))

    robot = max(tracks, key=lambda t: (len(t.positions), -t.agent_id))
    agents = [t for t in tracks if t is not robot]
    min_len = obs_frames + pred_frames
    usable = any(len(t.positions) >= min_len for t in tracks)
    scene = Scene(robot=robot, agents=agents, dt=dt,
                  scene_id=str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0])
    if not usable:
        return [scene]  # still loadable; windowing downstream will yield nothing
    return [scene]


def write_trajectory_file(path, scene: Scene):
    """Inverse of the loader for a single scene (stride-1 frames)."""
    with open(path, "w") as fh:
        for track in scene.all_tracks():
            for t in range(len(track.positions)):
                x, y = track.positions[t]
                fh.write(f"{track.start_time + t} {track.agent_id} {x:.12g} {y:.12g}\n")


def load_scene_source(path, dt=0.4, obs_frames=8, pred_frames=12):
    """Load a trajectory file or every *.txt scene file in a directory."""
    import os
    if os.path.isdir(path):
        scenes = []
        for name in sorted(os.listdir(path)):
            if name.endswith(".txt"):
                scenes.extend(load_trajectory_file(os.path.join(path, name), dt,
                                                   obs_frames, pred_frames))
        return scenes
    return load_trajectory_file(path, dt, obs_frames, pred_frames)


# ---------------------------------------------------------------------------
# synthetic scenes

DYNAMICS = ("constant_velocity", "turning", "social_repulsion")


def simulate_social(starts, goals, n_frames, dt=0.4, repulsion=True, initial_speed=1.2):
    """Goal-attracted walkers with capped inverse-distance pairwise
    repulsion, integrated at fixed dt. Returns (n_agents, n_frames, 2)."""
    starts = np.asarray(starts, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    n = len(starts)
    pos = starts.copy()
    to_goal = goals - starts
    dist = np.linalg.norm(to_goal, axis=1, keepdims=True)
    vel = initial_speed * to_goal / np.maximum(dist, 1e-9)
    out = np.empty((n, n_frames, 2))
    out[:, 0] = pos
    for t in range(1, n_frames):
        acc = np.zeros_like(pos)
        to_goal = goals - pos
        dist = np.linalg.norm(to_goal, axis=1, keepdims=True)
        acc += GOAL_GAIN * to_goal / np.maximum(dist, 1e-9)
        if repulsion:
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    diff = pos[i] - pos[j]
                    r = np.linalg.norm(diff)
                    if r < 1e-9:
                        continue
                    mag = min(1.5 / r, MAX_REPULSION_ACCEL)
                    acc[i] += mag * diff / r
        vel = vel + acc * dt
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        vel = np.where(speed > MAX_SPEED, vel * (MAX_SPEED / speed), vel)
        pos = pos + vel * dt
        out[:, t] = pos
    return out


def generate_synthetic_scenes(seed, n_scenes, agents_per_scene, dynamics,
                              n_frames=21, dt=0.4):
    """Deterministic-by-seed synthetic scenes; the first track is the
    designated robot."""
    if dynamics not in DYNAMICS:
        raise ValueError(f"dynamics must be one of {DYNAMICS}, got {dynamics!r}")
    if n_scenes < 1 or agents_per_scene < 1 or n_frames < 2:
        raise ValueError("n_scenes, agents_per_scene, n_frames must be positive")
    rng = np.random.default_rng(np.random.SeedSequence((seed, DYNAMICS.index(dynamics))))
    scenes = []
    for s in range(n_scenes):
        starts = rng.uniform(-6.0, 6.0, size=(agents_per_scene, 2))
        if dynamics == "constant_velocity":
            speeds = rng.uniform(0.5, 2.0, size=agents_per_scene)
            headings = rng.uniform(0, 2 * math.pi, size=agents_per_scene)
            tracks = []
            for i in range(agents_per_scene):
                v = speeds[i] * np.array([math.cos(headings[i]), math.sin(headings[i])])
                t = np.arange(n_frames)[:, None]
                tracks.append(starts[i] + t * v * dt)
            positions = np.stack(tracks)
        elif dynamics == "turning":
            speeds = rng.uniform(0.6, 1.8, size=agents_per_scene)
            headings = rng.uniform(0, 2 * math.pi, size=agents_per_scene)
            turn_rates = rng.uniform(0.08, 0.35, size=agents_per_scene)
            turn_rates *= rng.choice([-1.0, 1.0], size=agents_per_scene)
            positions = np.empty((agents_per_scene, n_frames, 2))
            positions[:, 0] = starts
            theta = headings.copy()
            for t in range(1, n_frames):
                step = np.stack([np.cos(theta), np.sin(theta)], axis=1)
                positions[:, t] = positions[:, t - 1] + speeds[:, None] * dt * step
                theta = theta + turn_rates
        else:  # social_repulsion
            goals = rng.uniform(-6.0, 6.0, size=(agents_per_scene, 2))
            # pull goals across the plane so agents actually cross paths
            goals = np.where(np.abs(goals - starts) < 4.0, -starts, goals)
            positions = simulate_social(starts, goals, n_frames, dt)
        tracks = [AgentTrack(agent_id=i, positions=positions[i])
                  for i in range(agents_per_scene)]
        scenes.append(Scene(robot=tracks[0], agents=tracks[1:], dt=dt,
                            scene_id=f"{dynamics}-{seed}-{s:04d}"))
    return scenes


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    """Aggregate displacement metrics in the data's units."""

    ade: float
    fde: float
    min_ade_k: float
    min_fde_k: float
    k: int
    per_horizon_fde: dict = field(default_factory=dict)
    units: str = "m"
    n_instances: int = 0

    def to_dict(self):
        return {
            "ade": self.ade,
            "fde": self.fde,
            f"min_ade_{self.k}": self.min_ade_k,
            f"min_fde_{self.k}": self.min_fde_k,
            "per_horizon_fde": {f"{s}s": v for s, v in self.per_horizon_fde.items()},
            "units": self.units,
            "n_instances": self.n_instances,
        }


def trajectory_ade(pred, gt) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"horizon mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)))


def trajectory_fde(pred, gt) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"horizon mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def horizon_second_marks(horizon: int, dt: float):
    """Whole-second marks representable in the horizon: second -> frame
    index (1-based; nearest frame, ties toward the earlier frame)."""
    marks = {}
    total = horizon * dt
    for s in range(1, int(math.floor(total + 1e-9)) + 1):
        k = min(range(1, horizon + 1), key=lambda f: (abs(f * dt - s), f))
        marks[s] = k
    return marks


def compute_metrics(ground_truths, sample_sets, designated=None, dt=0.4, units="m",
                    instance_ids=None):
    """Displacement metrics over a dataset.

    `sample_sets[i]` holds k sampled trajectories for instance i;
    `designated[i]` is the single selected prediction (defaults to the
    first sample). Returns (aggregate MetricsReport, per-instance rows).
    """
    if len(ground_truths) != len(sample_sets):
        raise ValueError("ground truth and sample sets differ in length")
    if len(ground_truths) == 0:
        raise ValueError("compute_metrics requires at least one instance")
    rows = []
    k = len(sample_sets[0])
    horizon = len(np.asarray(ground_truths[0]))
    marks = horizon_second_marks(horizon, dt)
    for i, (gt, samples) in enumerate(zip(ground_truths, sample_sets)):
        gt = np.asarray(gt)
        best = np.asarray(designated[i]) if designated is not None else np.asarray(samples[0])
        ades = [trajectory_ade(s, gt) for s in samples]
        fdes = [trajectory_fde(s, gt) for s in samples]
        row = {
            "instance_id": instance_ids[i] if instance_ids else f"instance-{i}",
            "ade": trajectory_ade(best, gt),
            "fde": trajectory_fde(best, gt),
            f"min_ade_{k}": min(ades),
            f"min_fde_{k}": min(fdes),
        }
        for s, frame in marks.items():
            row[f"fde_{s}s"] = float(np.linalg.norm(best[frame - 1] - gt[frame - 1]))
        rows.append(row)

    agg = MetricsReport(
        ade=float(np.mean([r["ade"] for r in rows])),
        fde=float(np.mean([r["fde"] for r in rows])),
        min_ade_k=float(np.mean([r[f"min_ade_{k}"] for r in rows])),
        min_fde_k=float(np.mean([r[f"min_fde_{k}"] for r in rows])),
        k=k,
        per_horizon_fde={s: float(np.mean([r[f"fde_{s}s"] for r in rows])) for s in marks},
        units=units,
        n_instances=len(rows),
    )
    return agg, rows


def constant_velocity_baseline(instance) -> np.ndarray:
    """Extrapolate the last observed velocity over the horizon."""
    hist = instance.target_history
    v = hist[-1] - hist[-2] if len(hist) >= 2 else np.zeros(2)
    steps = np.arange(1, instance.horizon + 1)[:, None]
    return hist[-1] + steps * v
