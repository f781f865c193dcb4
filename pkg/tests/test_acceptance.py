"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
"""

import json
import shutil
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from planner_cases import brute_force_best, random_instance
from densepack import cli
from densepack.boxes import OrientedBox3D, box_overlap, fit_min_volume_box, intersection_volume
from densepack.frustum import Frustum, OccupancyGrid, extract_mesh, occupancy_from_mesh
from densepack.geometry import PinholeIntrinsics, Pose, Rotation, sample_uniform_rotation
from densepack.heightmap import (
    Container,
    Footprint,
    HeightMap,
    integrated_volume,
    lowest_placeable_height,
    place,
    placeable_height_map,
    rasterize,
    write_heightmap,
)
from densepack.meshes import box_mesh, lshape_mesh
from densepack.metrics import chamfer, f1_tau
from densepack.planner import DBLF, EXHAUSTIVE, HM, FootprintCache, PlannerConfig, cost_hm, plan
from densepack.scene_io import load_scene, save_scene, synth_scene, write_cloud
from densepack.simulator import (
    ALL_PLACED,
    NO_PLAN,
    CompletionProvider,
    Configuration,
    SuiteConfig,
    make_item,
    run_episode,
    run_trials,
    synthetic_item_pool,
)


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# --- 1: chamfer against brute force ------------------------------------------------


def brute_chamfer(x, y):
    d = x[:, None, :] - y[None, :, :]
    l2 = (d**2).sum(-1)
    l1 = np.abs(d).sum(-1)
    return l1.min(1).mean() + l1.min(0).mean(), l2.min(1).mean() + l2.min(0).mean()


def test_criterion_01_chamfer_oracle():
    rng = np.random.default_rng(101)
    worst, elapsed = 0.0, 0.0
    for _ in range(200):
        x = rng.normal(size=(int(rng.integers(1, 513)), 3))
        y = rng.normal(size=(int(rng.integers(1, 513)), 3)) + rng.normal(size=3)
        t0 = time.perf_counter()
        r = chamfer(x, y)
        elapsed += time.perf_counter() - t0
        l1, l2 = brute_chamfer(x, y)
        worst = max(worst, abs(r.cd_l1 - l1), abs(r.cd_l2 - l2))
    report(1, worst <= 1e-9 and elapsed < 5.0, f"200 pairs, max |accelerated - brute| = {worst:.2e} (<= 1e-9), accelerated runtime {elapsed:.2f} s (< 5 s)")


# --- 2: F1 monotone in tau + fixture -----------------------------------------------


def test_criterion_02_f1_monotone_and_fixture():
    rng = np.random.default_rng(102)
    taus = np.linspace(0.01, 3.0, 50)
    violations = 0
    for _ in range(50):
        x = rng.normal(size=(int(rng.integers(1, 300)), 3))
        y = rng.normal(size=(int(rng.integers(1, 300)), 3)) * rng.uniform(0.5, 2.0)
        f = [f1_tau(x, y, t)[2] for t in taus]
        violations += int(np.sum(np.diff(f) < 0))
    pred = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    gt = np.array([[0.0, 0, 0]])
    p, r, f1 = f1_tau(pred, gt, 1.0)
    fixture = (p, r, f1) == (0.5, 1.0, 2.0 / 3.0)
    report(2, violations == 0 and fixture, f"{violations} monotonicity violations over 50 pairs x 50 taus; fixture (p, r, f1) = ({p}, {r}, {f1:.17g}) vs (0.5, 1, 2/3)")


# --- 3: minimum-volume box ---------------------------------------------------------

CORNERS_123 = np.array([[x, y, z] for x in (0, 1) for y in (0, 2) for z in (0, 3)], float)


def test_criterion_03_min_volume_box():
    t0 = time.perf_counter()
    b = fit_min_volume_box(CORNERS_123, 4096, np.random.default_rng(0))
    slowest = time.perf_counter() - t0
    in_window = 6.0 - 1e-9 <= b.volume <= 6.3
    rng = np.random.default_rng(103)
    worst = 0.0
    for i in range(20):
        r = sample_uniform_rotation(rng)
        t0 = time.perf_counter()
        bi = fit_min_volume_box(r.apply(CORNERS_123), 4096, np.random.default_rng(i))
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, float(np.max(np.abs(np.sort(bi.dimensions) / np.array([1.0, 2.0, 3.0]) - 1))))
    ok = in_window and worst <= 0.03 and slowest < 1.0
    report(3, ok, f"volume {b.volume:.6f} in [6.0, 6.3]; worst relative dimension error over 20 rotations {worst:.2%} (<= 3%); slowest fit {slowest:.3f} s (< 1 s)")


# --- 4: box intersection vs Monte Carlo --------------------------------------------


def test_criterion_04_box_overlap():
    rng = np.random.default_rng(104)
    worst, n = 0.0, 1_000_000
    for _ in range(100):
        a, b = (
            OrientedBox3D(Pose(sample_uniform_rotation(rng), tuple(rng.uniform(-0.3, 0.3, 3))), tuple(rng.uniform(0.4, 1.5, 3)))
            for _ in range(2)
        )
        exact = intersection_volume(a, b)
        # sample the overlap of the two axis-aligned bounds: independent of the clipper
        ca, cb = a.corners(), b.corners()
        lo, hi = np.maximum(ca.min(0), cb.min(0)), np.minimum(ca.max(0), cb.max(0))
        if np.any(hi <= lo):
            err = 0.0 if exact == 0 else np.inf
        else:
            pts = lo + rng.random((n, 3)) * (hi - lo)
            est = float(np.prod(hi - lo) * np.mean(a.contains(pts) & b.contains(pts)))
            err = abs(est - exact) / exact if exact > 0 else float(est > 0) * np.inf
        worst = max(worst, err)
    unit = OrientedBox3D(Pose(), (1.0, 1.0, 1.0))
    shifted = OrientedBox3D(Pose(Rotation.identity(), (0.5, 0.0, 0.0)), (1.0, 1.0, 1.0))
    iou_same = box_overlap(unit, unit)[1]
    iou_half = box_overlap(unit, shifted)[1]
    analytic = abs(iou_same - 1.0) <= 1e-9 and abs(iou_half - 1.0 / 3.0) <= 1e-9
    report(4, worst <= 0.01 and analytic, f"worst MC relative error {worst:.3%} over 100 pairs (<= 1%); IoU identical {iou_same:.12f}, 0.5-offset {iou_half:.12f} (1/3)")


# --- 5: lowest placeable height ----------------------------------------------------


def random_case(rng, cell=1e-3):
    nu, nv = rng.integers(4, 30, 2)
    h = HeightMap(Container((nu * cell, nv * cell, 1.0)), cell, rng.uniform(0, 0.05, (nu, nv)))
    fu, fv = rng.integers(1, min(nu, 8) + 1), rng.integers(1, min(nv, 8) + 1)
    cells = np.argwhere(rng.random((fu, fv)) < 0.7)
    if len(cells) == 0:
        cells = np.zeros((1, 2), int)
    cells -= cells.min(axis=0)
    bottom = rng.uniform(0, 0.03, len(cells))
    fp = Footprint(cells, bottom, bottom + 0.02, (0.0, 0.0), cell)
    eu, ev = fp.extent
    at = (int(rng.integers(0, nu - eu + 1)), int(rng.integers(0, nv - ev + 1)))
    return h, fp, at


def descent(h, fp, at, step=1e-4, start=1.0):
    u = fp.offsets[:, 0] + at[0]
    v = fp.offsets[:, 1] + at[1]
    z = start
    while np.all(z - step + fp.bottom >= h.grid[u, v]):
        z -= step
    return z


def test_criterion_05_lowest_placeable_height():
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(500):
        h, fp, at = random_case(rng)
        worst = max(worst, abs(lowest_placeable_height(h, fp, at) - descent(h, fp, at)))
    # stair: heights rise along u, footprint bottoms vary per cell; dyadic values keep it exact
    h = HeightMap(Container((0.4, 0.1, 2.0)), 0.1, np.array([[0.0], [0.25], [0.5], [0.75]]))
    fp = Footprint(np.array([[0, 0], [1, 0], [2, 0], [3, 0]]), np.array([0.0, 0.125, 0.625, 0.25]), np.full(4, 1.0), (0.0, 0.0), 0.1)
    z_stair = lowest_placeable_height(h, fp, (0, 0))
    z_map = float(placeable_height_map(h, fp)[0, 0])
    ok = worst <= 1e-4 + 1e-12 and z_stair == 0.5 and z_map == 0.5
    report(5, ok, f"max |analytic - 0.1 mm descent| = {worst:.2e} over 500 cases (<= 1e-4); stair fixture z = {z_stair} (max rule 0.5)")


# --- 6: planner optimality ---------------------------------------------------------


def test_criterion_06_planner_optimality():
    rng = np.random.default_rng(0)
    exact = {DBLF: 0, HM: 0}
    within = {DBLF: 0, HM: 0}
    n = 50
    for i in range(n):
        h, grasps = random_instance(rng)
        for cost in (DBLF, HM):
            cache = FootprintCache()
            cfg = PlannerConfig(mode=EXHAUSTIVE, exhaustive_stride=h.cell_size)
            ex = plan(h, grasps, cost, cfg, cache)
            fps = [[cache.get(g.object_cloud, k, r, h.cell_size) for k, r in enumerate(cfg.orientations)] for g in grasps]
            best = brute_force_best(h, fps, cfg.orientations, cost)
            same_cost = abs(ex.cost - best[0]) <= 1e-9 * max(1.0, abs(best[0]))
            exact[cost] += int(same_cost and (ex.grasp_index, ex.rotation_index, ex.cell) == best[1:4])
            sp = plan(h, grasps, cost, PlannerConfig(samples=4096, seed=i), cache)
            within[cost] += int(abs(sp.cost - ex.cost) <= 0.10 * abs(ex.cost))
    ok = all(exact[c] == n for c in exact) and all(within[c] >= 0.9 * n for c in within)
    report(
        6,
        ok,
        f"exhaustive == re-scan on {exact[DBLF]}/{n} (dblf), {exact[HM]}/{n} (hm); "
        f"sampled within 10% on {within[DBLF] / n:.0%} (dblf), {within[HM] / n:.0%} (hm), need >= 90%",
    )


# --- 7, 8: episode fixtures --------------------------------------------------------


def unit_cubes(n):
    rng = np.random.default_rng(0)
    return [make_item(f"cube-{i}", box_mesh((1, 1, 1)), rng) for i in range(n)]


def test_criterion_07_perfect_packing():
    cfg = PlannerConfig(mode=EXHAUSTIVE, exhaustive_stride=0.05)
    t0 = time.perf_counter()
    r = run_episode(unit_cubes(8), Container((2, 2, 2)), CompletionProvider(), cfg, DBLF, cell_size=0.05)
    elapsed = time.perf_counter() - t0
    ok = r.success and r.termination_reason == ALL_PLACED and abs(r.packed_volume_fraction - 1.0) <= 0.005 and elapsed < 30
    report(7, ok, f"success={r.success}, packed_volume_fraction={r.packed_volume_fraction:.6f} (1 +- 0.5%), {elapsed:.1f} s (< 30 s)")


def test_criterion_08_failure_bookkeeping():
    cfg = PlannerConfig(mode=EXHAUSTIVE, exhaustive_stride=0.05)
    r = run_episode(unit_cubes(2), Container((1.05, 1.05, 1.5)), CompletionProvider(), cfg, DBLF, cell_size=0.05)
    ok = r.termination_reason == NO_PLAN and not r.success and r.packed_volume_fraction == 1.0
    report(8, ok, f"termination={r.termination_reason}, packed_volume_fraction={r.packed_volume_fraction!r} (exactly 1.0)")


# --- 9: direction of effect --------------------------------------------------------


def test_criterion_09_direction_of_effect():
    suite = SuiteConfig()
    pool = synthetic_item_pool(suite.pool_size, seed=9, size_range=suite.size_range, n_points=suite.n_points)
    providers = ["ground_truth", "inflate:1.3", "outlier_noise:0.05:0.05"]
    confs = [Configuration(CompletionProvider.parse(p), c) for c in (DBLF, HM) for p in providers]
    t0 = time.perf_counter()
    rep = run_trials(pool, 50, confs, 9, container=suite.container, cfg=PlannerConfig(), cell_size=suite.cell_size)
    elapsed = time.perf_counter() - t0
    ok, parts = elapsed < 600, []
    for c in (DBLF, HM):
        gt = rep.row(f"ground_truth/{c}")
        for p in providers[1:]:
            other = rep.row(f"{CompletionProvider.parse(p).name}/{c}")
            ok &= gt.packed_volume_mean <= other.packed_volume_mean and gt.success_rate_mean >= other.success_rate_mean
        parts.append(
            f"{c}: " + ", ".join(
                f"{rep.row(CompletionProvider.parse(p).name + '/' + c).packed_volume_mean:.3f}/"
                f"{rep.row(CompletionProvider.parse(p).name + '/' + c).success_rate_mean:.2f}"
                for p in providers
            )
        )
    report(9, ok, f"packed/success for gt, inflate, noise -> {'; '.join(parts)}; {elapsed:.0f} s (< 600 s)")


# --- 10: frustum invariants --------------------------------------------------------

INTR = PinholeIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
CUBE_BOX = (218.0, 138.0, 422.0, 342.0)


def test_criterion_10_frustum_invariants():
    f = Frustum(INTR, CUBE_BOX, 2.45, 3.6, (96, 64, 64))
    c = f.voxel_centers()
    direction = c[-1] / np.linalg.norm(c[-1], axis=-1, keepdims=True)
    off_ray = np.linalg.norm(np.cross(c, direction[None]), axis=-1)
    collinear = float(np.max(off_ray / c[..., 2]))
    expected_z = f.near + (np.arange(96) + 0.5) * f.depth_step
    linear = bool(np.all(c[..., 2] == expected_z[:, None, None]))
    occ = occupancy_from_mesh(f, box_mesh((1, 1, 1)), Pose(translation=(0, 0, 3)))
    cube_vol = float((occ.probabilities * f.voxel_volumes()).sum())
    p = np.zeros(f.resolution)
    p[20:70, 10:50, 15:45] = 1.0
    block = OccupancyGrid(f, p)
    warped = float((p * f.voxel_volumes()).sum())
    mesh_vol = extract_mesh(block).signed_volume()
    ok = collinear < 1e-9 and linear and abs(cube_vol - 1) <= 0.05 and abs(mesh_vol - warped) <= 0.10 * warped
    report(
        10,
        ok,
        f"max off-ray distance / depth {collinear:.1e} (< 1e-9); depth linear exactly: {linear}; "
        f"cube volume {cube_vol:.4f} (1 +- 5%); block mesh/warped {mesh_vol / warped:.4f} (1 +- 10%)",
    )


# --- 11: volume integration --------------------------------------------------------


def test_criterion_11_volume_consistency():
    rng = np.random.default_rng(111)
    worst, bit_exact, count = 0.0, 0, 0
    while count < 100:
        h, grasps = random_instance(rng, n_grasps=1)
        fp = rasterize(grasps[0].object_cloud, Rotation.from_yaw(rng.uniform(0, 2 * np.pi)), h.cell_size)
        eu, ev = fp.extent
        if eu > h.shape[0] or ev > h.shape[1]:
            continue
        at = (int(rng.integers(0, h.shape[0] - eu + 1)), int(rng.integers(0, h.shape[1] - ev + 1)))
        after = place(h, fp, at, lowest_placeable_height(h, fp, at))
        direct = cost_hm(h, after)
        delta = (integrated_volume(after) - integrated_volume(h)) / h.cell_size**2
        worst = max(worst, abs(direct - delta) / max(abs(delta), 1e-300))
        bit_exact += int(direct == delta)
        count += 1
    report(11, worst <= 1e-12, f"max relative gap {worst:.1e} over 100 placements (<= 1e-12, floating-point reading of exact equality); bit-identical in {bit_exact}/100")


# --- 12: I/O round trip and CLI determinism ----------------------------------------


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def scene_spec(rng):
    cam = {"fx": 200.0, "fy": 200.0, "cx": 60.0, "cy": 40.0, "width": 120, "height": 80}
    items = []
    for i in range(int(rng.integers(1, 4))):
        pos = [-0.3 + 0.3 * i, float(rng.uniform(-0.05, 0.05)), float(rng.uniform(1.4, 1.8))]
        kind = ["cuboid", "cylinder", "lshape"][int(rng.integers(3))]
        if kind == "cuboid":
            shape = {"dims": [float(v) for v in rng.uniform(0.08, 0.2, 3)]}
        elif kind == "cylinder":
            shape = {"radius": float(rng.uniform(0.04, 0.08)), "height": float(rng.uniform(0.08, 0.2))}
        else:
            shape = {"length_x": 0.18, "length_y": 0.14, "thickness": 0.05, "height": float(rng.uniform(0.05, 0.15))}
        items.append({"kind": kind, "position": pos, "yaw": float(rng.uniform(0, 360)), **shape})
    return {"camera": cam, "voxel_resolution": 8, "items": items}


def run_twice(tmp_path, name, argv_for):
    outs = []
    for k in ("a", "b"):
        out = tmp_path / f"{name}-{k}"
        code = cli.main([*argv_for(out), "--out", str(out)])
        outs.append((code, files(out)))
    return outs[0][0] == 0 and outs[0] == outs[1]


def test_criterion_12_io_round_trip(tmp_path):
    rng = np.random.default_rng(112)
    identical = 0
    for i in range(20):
        b, _ = synth_scene(scene_spec(rng), seed=i)
        save_scene(b, tmp_path / "a")
        save_scene(load_scene(tmp_path / "a"), tmp_path / "b")
        identical += int(files(tmp_path / "a") == files(tmp_path / "b"))
        shutil.rmtree(tmp_path / "a")
        shutil.rmtree(tmp_path / "b")

    spec = tmp_path / "scene.json"
    spec.write_text(json.dumps(scene_spec(np.random.default_rng(5))))
    sim = tmp_path / "sim.json"
    sim.write_text(json.dumps({
        "container": [0.32, 0.26, 0.18], "cell_mm": 5, "points": 2048, "samples": 512,
        "items": {"synthetic": {"count": 6, "seed": 2}}, "items_per_trial": [3, 5], "trials": 2,
        "configurations": [{"provider": "ground_truth", "cost": "dblf"}, {"provider": "outlier_noise:0.05:0.05", "cost": "hm"}],
    }))
    rng = np.random.default_rng(6)
    box_cloud = tmp_path / "box.npy"
    write_cloud(make_item("l", lshape_mesh(0.1, 0.08, 0.03, 0.05), rng, 2048).cloud, box_cloud)
    hm_path = tmp_path / "map.dphm"
    with open(hm_path, "wb") as fh:
        write_heightmap(HeightMap(Container((0.2, 0.2, 0.2)), 0.005, rng.uniform(0, 0.02, (40, 40))), fh)

    checks = {
        "synth": run_twice(tmp_path, "synth", lambda out: ["synth", str(spec), "--seed", "3"]),
        "simulate": run_twice(tmp_path, "simulate", lambda out: ["simulate", str(sim), "--seed", "3"]),
        "fit-box": run_twice(tmp_path, "fit-box", lambda out: ["fit-box", str(box_cloud), "--seed", "3"]),
        "plan": run_twice(tmp_path, "plan", lambda out: ["plan", str(hm_path), str(box_cloud), "--seed", "3"]),
    }
    scene_dir = tmp_path / "synth-a"
    preds = []
    bundle = load_scene(scene_dir)
    for i in range(bundle.n_objects):
        preds.append(str(tmp_path / f"pred{i}.npy"))
        write_cloud(make_item(f"p{i}", bundle.posed_mesh(i), np.random.default_rng(i), 1024).cloud, preds[-1])
    checks["eval"] = run_twice(tmp_path, "eval", lambda out: ["eval", str(scene_dir), *preds, "--points", "2048", "--seed", "3"])
    ok = identical == 20 and all(checks.values())
    detail = ", ".join(f"{k}={'same' if v else 'DIFFERS'}" for k, v in checks.items())
    report(12, ok, f"{identical}/20 bundles byte-identical after save/load/save; CLI reruns: {detail}")
