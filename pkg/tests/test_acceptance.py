"""The twelve acceptance criteria, one test each.

Every test records a PASS/FAIL verdict line (collected in the terminal
summary) before asserting, so a failing trend criterion still reports the
numbers it saw. Run standalone with ``python tests/test_acceptance.py``.
"""

import time
from functools import lru_cache

import numpy as np
import pytest
from conftest import NOISELESS, verdict
from gradcheck import LOSSES, REL_TOL, GradCase, check_case

from mvfuse import container
from mvfuse.bodymodel import load_model, save_model
from mvfuse.fusion import filter_joint, init_virtual_pose
from mvfuse.losses import ViewState, loss_consistency_star, new_counter
from mvfuse.metrics import AUC_THRESHOLDS_MM, auc, mpjpe, pa_mpjpe, pck
from mvfuse.optimizer import TTAConfig, clip_gradient, run_tta
from mvfuse.prior import decode, decode_vector, load_head, save_head, synth_head
from mvfuse.rotmath import (
    aa_to_rotmat,
    geodesic_dist,
    random_rotations,
    rotmat_to_6d,
    rotmat_to_aa,
    sixd_to_rotmat,
)
from mvfuse.sceneio import load_scene, save_scene, scene_fields
from mvfuse.synth import SceneSpec, generate_scene, make_rig

SEEDS = range(10)
ELBOW = 18


@lru_cache(maxsize=None)
def _rig():
    return make_rig(), synth_head(1)


@lru_cache(maxsize=None)
def _scene(seed):
    model, head = _rig()
    return generate_scene(model, head, SceneSpec(seed=seed))


def _final(scene, **kw):
    return run_tta(scene, config=TTAConfig(**kw)).final_report.mpjpe


@lru_cache(maxsize=None)
def trend_runs():
    """Final MPJPE per seed for every variant the trend criteria compare."""
    rows, t0 = [], time.perf_counter()
    for seed in SEEDS:
        sc = _scene(seed)
        res = run_tta(sc, config=TTAConfig())
        rows.append({"seed": seed, "step0": res.metric_trace[0].mpjpe,
                     "weighted": res.final_report.mpjpe,
                     "averaged": _final(sc, strategy="averaged"),
                     "t-pose": _final(sc, strategy="t-pose")})
    strategy_seconds = time.perf_counter() - t0
    for row in rows:
        sc = _scene(row["seed"])
        row["v2"] = _final(sc.subset(range(2)))
        row["v3"] = _final(sc.subset(range(3)))
        row["star"] = _final(sc, consistency_mode="star")
        row["direct"] = _final(sc, component="smpl_params")
    return rows, strategy_seconds


def _fmt(values):
    return "[" + " ".join(f"{v:.1f}" for v in values) + "]"


# ---------------------------------------------------------------------------


def test_c01_gradients_match_finite_differences():
    model, head = _rig()
    t0 = time.perf_counter()
    worst = {}
    for kind in ("token", "smpl"):
        for seed in range(20):
            case = GradCase(model, head, seed, kind)
            for loss in LOSSES:
                key = f"{kind}/{loss}"
                worst[key] = max(worst.get(key, 0.0), check_case(case, loss))
    seconds = time.perf_counter() - t0
    ok = max(worst.values()) < REL_TOL and seconds < 60
    verdict(1, ok, f"worst rel err {max(worst.values()):.1e} over 2x5x20 configs "
                   f"(tol {REL_TOL:g}), {seconds:.1f} s")
    assert ok, worst


def test_c02_rotation_suite():
    rng = np.random.default_rng(0)
    axis = rng.normal(size=(1000, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    aa = axis * rng.uniform(1e-6, np.pi - 1e-3, size=(1000, 1))
    R = aa_to_rotmat(aa)
    err_aa = geodesic_dist(R, aa_to_rotmat(rotmat_to_aa(R))).max()
    Rr = random_rotations(rng, 1000)
    err_6d = np.abs(sixd_to_rotmat(rotmat_to_6d(Rr)) - Rr).max()
    d = rng.normal(size=(1000, 6))
    k = rng.uniform(1e-3, 1e3, size=(1000, 1))
    scaled = d.copy()
    scaled[:, :3] *= k
    err_scale = np.abs(sixd_to_rotmat(scaled) - sixd_to_rotmat(d)).max()
    ok = err_aa < 1e-9 and err_6d < 1e-9 and err_scale <= 1e-12
    verdict(2, ok, f"aa round trip {err_aa:.1e}, 6D round trip {err_6d:.1e}, "
                   f"scale invariance {err_scale:.1e}")
    assert ok


def test_c03_filtering_oracle():
    model, head = _rig()
    sc = generate_scene(model, head, SceneSpec(seed=0, outlier_views=((2, ELBOW, 1.5),)))
    poses = [decode(head, z)[0] for z in sc.tokens]
    six = rotmat_to_6d(np.stack([p.rotmats[ELBOW] for p in poses]))
    kept = filter_joint(six).tolist()
    fused, _ = init_virtual_pose(poses, sc.extrinsics())
    clean = sixd_to_rotmat(six[[0, 1, 3]].mean(axis=0))
    gap = float(geodesic_dist(fused.rotmats[ELBOW], clean))
    quarter = rotmat_to_6d(aa_to_rotmat(np.array([[0.0, 0.0, j * np.pi / 2] for j in range(4)])))
    symmetric = filter_joint(quarter).tolist()
    ok = kept == [0, 1, 3] and gap < 1e-9 and symmetric == [0, 1, 2, 3]
    verdict(3, ok, f"outlier scene kept {kept}, gap to clean mean {gap:.1e} rad; "
                   f"symmetric case kept {symmetric}")
    assert ok


def test_c04_noiseless_fixed_point():
    model, head = _rig()
    sc = generate_scene(model, head, SceneSpec(seed=0, **NOISELESS))
    res = run_tta(sc, config=TTAConfig())
    drift = max(np.abs(v.params - z).max() for v, z in zip(res.views, sc.tokens))
    init = run_tta(sc, config=TTAConfig(steps=0, warmup_steps=0)).virtual.params
    drift = max(drift, np.abs(res.virtual.params - init).max())
    worst_loss = max(e["total"] for e in res.loss_trace)
    ok = drift < 1e-9 and worst_loss < 1e-12 and len(res.loss_trace) == 201
    verdict(4, ok, f"200 steps: parameter drift {drift:.1e}, max total loss {worst_loss:.1e}")
    assert ok


def test_c05_convergence_trend():
    rows, seconds = trend_runs()
    ratio_ok = all(r["weighted"] < 0.6 * r["step0"] for r in rows)
    ordered = [r["weighted"] <= r["averaged"] <= r["t-pose"] for r in rows]
    ok = ratio_ok and sum(ordered) >= 8 and seconds < 300
    worst_ratio = max(r["weighted"] / r["step0"] for r in rows)
    verdict(5, ok, f"final/step0 <= {worst_ratio:.2f} on all seeds (need < 0.6); ordering "
                   f"weighted<=averaged<=t-pose on {sum(ordered)}/10 (need 8); "
                   f"weighted {_fmt(r['weighted'] for r in rows)} "
                   f"averaged {_fmt(r['averaged'] for r in rows)} "
                   f"t-pose {_fmt(r['t-pose'] for r in rows)} mm; {seconds:.0f} s")
    assert ok


def test_c06_view_count_monotonicity():
    rows, _ = trend_runs()
    mono = [r["v2"] >= r["v3"] >= r["weighted"] for r in rows]
    ok = sum(mono) >= 8
    verdict(6, ok, f"MPJPE nonincreasing over 2/3/4 views on {sum(mono)}/10 (need 8); "
                   f"2v {_fmt(r['v2'] for r in rows)} 3v {_fmt(r['v3'] for r in rows)} "
                   f"4v {_fmt(r['weighted'] for r in rows)} mm")
    assert ok


def _star_ops(n):
    model, head = _rig()
    sc = _scene(0)
    views = [ViewState(model, head, sc.tokens[i % 4], sc.cameras[i % 4], sc.detections[i % 4])
             for i in range(n)]
    counter = new_counter()
    loss_consistency_star(views, TTAConfig().weights, True, counter)
    return sum(counter.values())


def test_c07_star_versus_pairwise():
    rows, _ = trend_runs()
    rel = [abs(r["star"] - r["weighted"]) / r["weighted"] for r in rows]
    op_ratio = _star_ops(8) / _star_ops(4)
    ok = max(rel) < 0.10 and 1.8 <= op_ratio <= 2.2
    verdict(7, ok, f"|star-pairwise|/pairwise max {max(rel):.2f} (need < 0.10 on every seed, "
                   f"{sum(x < 0.1 for x in rel)}/10 within); op count N=8/N=4 = {op_ratio:.2f}")
    assert ok


def test_c08_component_ordering():
    rows, _ = trend_runs()
    direct = float(np.median([r["direct"] for r in rows]))
    token = float(np.median([r["weighted"] for r in rows]))
    ok = direct >= token
    verdict(8, ok, f"median final MPJPE direct {direct:.2f} mm vs token {token:.2f} mm")
    assert ok


def test_c09_metrics_oracle():
    rng = np.random.default_rng(3)
    gt = rng.normal(0.0, 0.3, size=(24, 3))
    pa_inv = max(pa_mpjpe(rng.uniform(0.2, 5.0) * gt @ R.T + rng.normal(size=3), gt)
                 for R in random_rotations(rng, 20))
    order_ok = True
    for _ in range(1000):
        g = rng.normal(0.0, 0.3, size=(24, 3))
        p = g + rng.normal(0.0, rng.uniform(0.001, 0.2), size=g.shape)
        order_ok &= pa_mpjpe(p, g) <= mpjpe(p, g) + 1e-9
    at = np.zeros((24, 3))
    at[1:, 0] = 0.150
    boundary = pck(at, np.zeros((24, 3))) == 100.0
    pred = gt + rng.normal(0.0, 0.05, size=gt.shape)
    err = 1000 * np.linalg.norm((pred - pred[0]) - (gt - gt[0]), axis=1)
    t = AUC_THRESHOLDS_MM
    curve = [100.0 * np.mean(err <= x) for x in t]
    direct = sum((t[i + 1] - t[i]) * (curve[i] + curve[i + 1]) / 2 for i in range(len(t) - 1))
    auc_gap = abs(auc(pred, gt) - direct / (t[-1] - t[0]))
    ok = pa_inv < 1e-9 and order_ok and boundary and auc_gap < 1e-12
    verdict(9, ok, f"PA under similarity {pa_inv:.1e} mm, pa<=mpjpe on 1000 clouds {order_ok}, "
                   f"PCK boundary inclusive {boundary}, AUC gap {auc_gap:.1e}")
    assert ok


def test_c10_clipping_and_warmup():
    rng = np.random.default_rng(4)
    clip_err = 0.0
    for _ in range(1000):
        g = rng.normal(size=154) * rng.uniform(0.0, 0.02)
        clip_err = max(clip_err, abs(np.linalg.norm(clip_gradient(g, 0.1))
                                     - min(np.linalg.norm(g), 0.1)))
    res = run_tta(_scene(0), config=TTAConfig(steps=40))
    lr = np.array(res.lr_trace)
    ramp_ok = bool(np.all(np.diff(lr[:20]) >= 0) and np.all(lr[19:] == lr[19]))
    ok = clip_err < 1e-12 and ramp_ok
    verdict(10, ok, f"clip error {clip_err:.1e}; lr nondecreasing over steps 1-20 and constant "
                    f"at {lr[19]:g} after: {ramp_ok}")
    assert ok


def test_c11_io_round_trip_and_bit_flips(tmp_path):
    model, head = _rig()
    sc = _scene(0)
    save_model(model, tmp_path / "m.bin")
    save_head(head, tmp_path / "h.bin")
    save_scene(sc, tmp_path / "s.bin")
    m2, h2, s2 = load_model(tmp_path / "m.bin"), load_head(tmp_path / "h.bin"), load_scene(tmp_path / "s.bin")
    exact = (np.array_equal(m2.template_vertices, model.template_vertices)
             and np.array_equal(m2.skin_weights, model.skin_weights)
             and np.array_equal(h2.W, head.W) and np.array_equal(h2.b, head.b))
    f1, f2 = scene_fields(sc), scene_fields(s2)
    exact &= all(np.array_equal(f1[k], f2[k]) if isinstance(f1[k], np.ndarray) else f1[k] == f2[k]
                 for k in f1)
    rng = np.random.default_rng(11)
    detected = 0
    loaders = [(tmp_path / "m.bin", load_model), (tmp_path / "h.bin", load_head),
               (tmp_path / "s.bin", load_scene)]
    for trial in range(100):
        path, loader = loaders[trial % 3]
        blob = bytearray(path.read_bytes())
        bit = int(rng.integers(len(blob) * 8))
        blob[bit // 8] ^= 1 << (bit % 8)
        (tmp_path / "x.bin").write_bytes(bytes(blob))
        try:
            loader(tmp_path / "x.bin")
        except container.FormatError:
            detected += 1
    ok = exact and detected == 100
    verdict(11, ok, f"bit-exact round trip {exact}; corrupted files detected {detected}/100")
    assert ok


def test_c12_determinism():
    a = run_tta(_scene(1), config=TTAConfig())
    b = run_tta(_scene(1), config=TTAConfig())
    same = a.metric_trace == b.metric_trace and a.loss_trace == b.loss_trace
    gap = max(abs(x.mpjpe - y.mpjpe) for x, y in zip(a.metric_trace, b.metric_trace))
    verdict(12, same, f"two 200-step runs bitwise identical {same} (max mpjpe gap {gap:.1e})")
    assert same


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
