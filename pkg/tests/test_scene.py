import numpy as np
import pytest

from trajcast import scene as sc


def straight_track(agent_id, start, velocity, n, start_time=0, category=sc.PEDESTRIAN):
    t = np.arange(n)[:, None]
    pos = np.asarray(start) + t * np.asarray(velocity)
    return sc.AgentTrack(agent_id=agent_id, category=category, positions=pos,
                         start_time=start_time)


def make_scene(tracks, robot=None, grid=None):
    robot = robot or tracks[0]
    agents = [t for t in tracks if t is not robot]
    return sc.Scene(robot=robot, agents=agents, grid=grid)


class TestSelectNeighbors:
    def test_colocated_at_t0_included(self):
        a = straight_track(1, (0, 0), (1, 0), 5)
        b = straight_track(2, (0, 0), (0, 1), 5)
        scene = make_scene([a, b])
        got = sc.select_neighbors(scene, a, d=0.5, t_start=0, t_end=4)
        assert [n.agent_id for n in got] == [2]

    def test_agent_outside_radius_excluded(self):
        a = straight_track(1, (0, 0), (0, 0), 5)
        b = straight_track(2, (20, 0), (0, 0), 5)
        scene = make_scene([a, b])
        assert sc.select_neighbors(scene, a, d=10.0) == []

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(42)
        tracks = [sc.AgentTrack(agent_id=i, positions=rng.uniform(-8, 8, size=(6, 2)))
                  for i in range(5)]
        scene = make_scene(tracks)
        d = 5.0
        for target in tracks:
            got = {n.agent_id for n in sc.select_neighbors(scene, target, d, 0, 5)}
            want = set()
            for other in tracks:
                if other.agent_id == target.agent_id:
                    continue
                for t in range(6):
                    if np.linalg.norm(target.positions[t] - other.positions[t]) <= d:
                        want.add(other.agent_id)
                        break
            assert got == want

    @pytest.mark.parametrize("seed", range(5))
    def test_symmetry_per_timestep(self, seed):
        rng = np.random.default_rng(seed)
        a = sc.AgentTrack(agent_id=1, positions=rng.uniform(-5, 5, (4, 2)))
        b = sc.AgentTrack(agent_id=2, positions=rng.uniform(-5, 5, (4, 2)))
        d = 4.0
        assert sc._within(a, b, d, 0, 3) == sc._within(b, a, d, 0, 3)

    def test_order_independent_of_input_ordering(self):
        rng = np.random.default_rng(1)
        tracks = [sc.AgentTrack(agent_id=i, positions=rng.uniform(-2, 2, (4, 2)))
                  for i in range(6)]
        target = tracks[0]
        s1 = make_scene(tracks, robot=tracks[1])
        shuffled = [tracks[0]] + tracks[:0:-1]
        s2 = sc.Scene(robot=tracks[1], agents=[t for t in shuffled if t is not tracks[1]])
        ids1 = [n.agent_id for n in sc.select_neighbors(s1, target, 3.0)]
        ids2 = [n.agent_id for n in sc.select_neighbors(s2, target, 3.0)]
        assert ids1 == ids2 == sorted(ids1)

    def test_nonpositive_distance_rejected(self):
        a = straight_track(1, (0, 0), (1, 0), 3)
        scene = make_scene([a])
        with pytest.raises(ValueError):
            sc.select_neighbors(scene, a, d=0.0)


class TestBuildInstances:
    def test_far_agent_yields_no_instances(self):
        robot = straight_track(0, (0, 0), (0, 0), 25)
        far = straight_track(1, (500, 500), (0, 0), 25)
        scene = make_scene([robot, far], robot=robot)
        instances, _ = sc.build_prediction_instances(scene, d=10, t_obs=8, t_future=20)
        assert instances == []

    def test_window_arithmetic(self):
        n = 26
        robot = straight_track(0, (0, 0), (0.1, 0), n)
        agent = straight_track(1, (1, 0), (0.1, 0), n)
        scene = make_scene([robot, agent], robot=robot)
        instances, skipped = sc.build_prediction_instances(scene, d=10, t_obs=8, t_future=20)
        assert len(instances) == n - 20  # one start offset per frame
        assert skipped == 0
        inst = instances[0]
        assert inst.target_history.shape == (9, 2)
        assert inst.target_future.shape == (12, 2)

    def test_neighbor_sets_match_bruteforce_replay(self):
        rng = np.random.default_rng(3)
        tracks = [sc.AgentTrack(agent_id=i, positions=rng.uniform(-4, 4, (22, 2)))
                  for i in range(3)]
        scene = make_scene(tracks, robot=tracks[0])
        d = 5.0
        instances, _ = sc.build_prediction_instances(scene, d=d, t_obs=8, t_future=20)
        for inst in instances:
            sid, aid, tid = inst.instance_id.split("/")
            target = next(t for t in tracks if t.agent_id == int(aid[1:]))
            s = int(tid[1:])
            expect = set()
            for other in tracks:
                if other.agent_id == target.agent_id:
                    continue
                dists = np.linalg.norm(
                    target.positions[s:s + 9] - other.positions[s:s + 9], axis=1)
                if np.any(dists <= d):
                    expect.add(other.agent_id)
            assert len(inst.neighbor_histories) == len(expect)

    def test_partial_track_counted_as_skipped(self):
        robot = straight_track(0, (0, 0), (0, 0), 25)
        short = straight_track(1, (1, 0), (0, 0), 10)  # too short for any window
        scene = make_scene([robot, short], robot=robot)
        _, skipped = sc.build_prediction_instances(scene, d=10, t_obs=8, t_future=20)
        assert skipped > 0

    def test_history_and_future_lengths_exact(self):
        robot = straight_track(0, (0, 0), (0.2, 0), 30)
        agent = straight_track(1, (0.5, 0.5), (0.2, 0), 30)
        scene = make_scene([robot, agent], robot=robot)
        t_obs, t_future = 6, 14
        instances, _ = sc.build_prediction_instances(scene, 10, t_obs, t_future)
        for inst in instances:
            assert len(inst.target_history) == t_obs + 1
            assert len(inst.target_future) == t_future - t_obs


class TestMapPatch:
    def test_uniform_free_grid(self):
        grid = sc.OccupancyGrid(cells=np.ones((16, 16)), cell_size=1.0, origin=(0, 0))
        patch, has_map = sc.extract_map_patch(grid, (8.0, 8.0), 8)
        assert has_map
        assert np.array_equal(patch, np.ones((8, 8)))

    def test_corner_padded_non_traversable(self):
        grid = sc.OccupancyGrid(cells=np.ones((16, 16)), cell_size=1.0, origin=(0, 0))
        patch, _ = sc.extract_map_patch(grid, (0.5, 0.5), 8)
        # center cell (0,0); patch rows/cols -4..3 → negative side all padding
        assert np.array_equal(patch[:4, :], np.zeros((4, 8)))
        assert np.array_equal(patch[:, :4], np.zeros((8, 4)))
        assert np.array_equal(patch[4:, 4:], np.ones((4, 4)))

    def test_checkerboard_equals_direct_slice(self):
        cells = np.indices((12, 12)).sum(axis=0) % 2
        grid = sc.OccupancyGrid(cells=cells.astype(float), cell_size=1.0, origin=(0, 0))
        patch, _ = sc.extract_map_patch(grid, (4.5, 4.5), 4)
        # center cell (4,4), patch offset 4//2=2 → rows 2..5, cols 2..5
        assert np.array_equal(patch, cells[2:6, 2:6].astype(float))

    def test_missing_map_flag(self):
        patch, has_map = sc.extract_map_patch(None, (0, 0), 8)
        assert not has_map
        assert np.array_equal(patch, np.ones((8, 8)))


class TestGridRoundTrip:
    def test_write_read(self, tmp_path):
        rng = np.random.default_rng(5)
        cells = (rng.uniform(size=(7, 9)) > 0.4).astype(float)
        grid = sc.OccupancyGrid(cells=cells, cell_size=0.25, origin=(-3.5, 2.0))
        path = tmp_path / "grid.txt"
        sc.write_occupancy_grid(path, grid)
        back = sc.read_occupancy_grid(path)
        assert np.array_equal(back.cells, cells)
        assert back.cell_size == pytest.approx(0.25)
        assert np.allclose(back.origin, [-3.5, 2.0])

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3 3\n000\n000\n000\n")
        with pytest.raises(ValueError, match="header"):
            sc.read_occupancy_grid(path)
