"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -s tests/test_acceptance.py`` (or ``python3
tests/test_acceptance.py``); the result lines are also shown without ``-s``.
"""
import contextlib
import json
import time

import numpy as np
import pytest

from posecanon import adcore as ad
from posecanon import cli
from posecanon import datagen as D
from posecanon import geom3d as G
from posecanon import kinematics as K
from posecanon import model as M
from posecanon import trainer as T
from posecanon.geocanon import geometric_canonicalize
from posecanon.losses import COMPONENTS, LossWeights, model_losses
from posecanon.metrics import mpjpe, pa_mpjpe, rotation_error_deg

pytestmark = pytest.mark.slow


@contextlib.contextmanager
def criterion(n, title, capsys):
    """Print ``CRITERION n PASS|FAIL`` with details, whatever the outcome."""
    info = {}
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield info
        status = "PASS"
    finally:
        info["time_s"] = round(time.perf_counter() - t0, 2)
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        with capsys.disabled():
            print(f"\nCRITERION {n} {status}: {title} [{detail}]")


def _fmt(x):
    return float(f"{x:.3g}")


# 1 -------------------------------------------------------------------------------------

def test_criterion_1_rotation_math(capsys):
    with criterion(1, "Rot6D orthogonality, round trip, geodesic left-invariance", capsys) as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        n = 100_000
        r = G.rot_from_6d(rng.normal(size=(n, 6)))
        orth = np.max(np.abs(np.einsum("nji,njk->nik", r, r) - np.eye(3)))
        det = np.max(np.abs(np.linalg.det(r) - 1.0))
        trip = np.max(np.abs(G.rot_from_6d(G.rot_to_6d(r)) - r))
        a, b, c = G.random_rotation(rng, n), G.random_rotation(rng, n), G.random_rotation(rng, n)
        d0 = G.geodesic_angle_exact(a, b)
        d1 = G.geodesic_angle_exact(np.einsum("nij,njk->nik", c, a), np.einsum("nij,njk->nik", c, b))
        inv = np.max(np.abs(d1 - d0))
        elapsed = time.perf_counter() - t0
        info.update(orth=_fmt(orth), det=_fmt(det), roundtrip=_fmt(trip), left_inv=_fmt(inv))
        assert orth < 1e-9 and det < 1e-9 and trip < 1e-9 and inv < 1e-9
        assert elapsed < 10


# 2 -------------------------------------------------------------------------------------

def test_criterion_2_geometric_oracle(capsys):
    with criterion(2, "geometric baseline on 50 x 40 clean pairs", capsys) as info:
        t0 = time.perf_counter()
        bases = D.generate_base_poses(50, seed=2)
        rng = np.random.default_rng(2)
        rot, mp, pa = [], [], []
        for b in bases:
            target, _ = geometric_canonicalize(b)
            for _ in range(40):
                r = G.sample_camera_rotation(rng)[0]
                x = target @ r.T
                c, r_hat = geometric_canonicalize(x)
                rot.append(float(rotation_error_deg(r_hat, r)))
                mp.append(mpjpe(c, target))
                pa.append(pa_mpjpe(c, target))
        elapsed = time.perf_counter() - t0
        info.update(mean_rot_deg=_fmt(np.mean(rot)), mpjpe_mm=_fmt(np.mean(mp)),
                    max_pa_mpjpe_mm=_fmt(np.max(pa)), n=len(rot))
        assert np.mean(rot) < 1e-6 and np.mean(mp) < 1e-6 and np.max(pa) < 1e-9
        assert elapsed < 30


# 3 -------------------------------------------------------------------------------------

def test_criterion_3_gradients(capsys):
    with criterion(3, "finite-difference gradients, toy model + every loss term", capsys) as info:
        t0 = time.perf_counter()
        cfg = M.ModelConfig.toy()
        pool = D.generate_base_poses(40, seed=3)
        worst, checked, skipped, failures = 0.0, 0, 0, []
        per_term = {k: 0.0 for k in ("total", *COMPONENTS)}
        for seed in range(20):
            rng = np.random.default_rng(seed)
            params = M.init_params(cfg, seed)
            x = pool[rng.choice(len(pool), 4, replace=False)]
            r = G.random_rotation(rng, 4)
            target = np.einsum("bjk,bkl->bjl", x, r) / cfg.pose_scale
            # the weighted total every seed, plus one isolated component in rotation
            term = COMPONENTS[seed % len(COMPONENTS)]
            for name in ("total", term):
                def f(name=name):
                    total, comps = model_losses(M.forward(params, x, cfg), target, r, params,
                                                LossWeights())
                    return total if name == "total" else comps[name]
                rep = ad.grad_check(f, params, step=1e-4, tol=1e-4, max_entries=2, rng=rng)
                worst = max(worst, rep.worst)
                per_term[name] = max(per_term[name], rep.worst)
                checked += rep.checked
                skipped += rep.skipped_near_clamp + rep.skipped_nonsmooth
                failures += rep.failures
        elapsed = time.perf_counter() - t0
        info.update(seeds=20, worst_rel=_fmt(worst), checked=checked, skipped=skipped,
                    per_term={k: _fmt(v) for k, v in per_term.items()})
        assert not failures, failures[:3]
        assert worst < 1e-4 and elapsed < 300


# 4 and 5 ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_run():
    corpus = D.build_corpus(D.generate_base_poses(500, seed=0), 4, seed=0)
    cfg = T.TrainConfig(seed=0)
    t0 = time.perf_counter()
    res = T.train(cfg, corpus, log=None)
    res["elapsed"] = time.perf_counter() - t0
    res["corpus"] = corpus
    return res


def test_criterion_4_learning(toy_run, capsys):
    with criterion(4, "toy preset, 1600/200 pairs, 30 epochs, seed 0", capsys) as info:
        corpus = toy_run["corpus"]
        counts = {k: len(v) for k, v in corpus.items()}
        x, y, r = D.stack(corpus["test"])
        held = T.evaluate_arrays(toy_run["params"], toy_run["cfg"], x, y, r)
        untrained = T.evaluate_arrays(M.init_params(toy_run["cfg"], 0), toy_run["cfg"], x, y, r)
        input_mpjpe = float(np.mean(np.linalg.norm(x - y, axis=-1)))
        ratio = untrained["rot_err_deg"] / held["rot_err_deg"]
        info.update(splits=counts, epochs=len(toy_run["log"]) - 1,
                    heldout_rot_deg=_fmt(held["rot_err_deg"]),
                    untrained_rot_deg=_fmt(untrained["rot_err_deg"]), reduction=_fmt(ratio),
                    mpjpe_mm=_fmt(held["mpjpe_mm"]), input_mpjpe_mm=_fmt(input_mpjpe),
                    train_s=round(toy_run["elapsed"], 1))
        assert counts["train"] == 1600 and counts["val"] == 200
        assert held["rot_err_deg"] < 10.0
        assert ratio >= 5.0
        assert held["mpjpe_mm"] < input_mpjpe
        assert toy_run["elapsed"] < 20 * 60


def test_criterion_5_loss_arithmetic(toy_run, capsys):
    with criterion(5, "logged total equals the weighted component sum", capsys) as info:
        w = LossWeights()
        assert (w.cyc, w.perc) == (0.25, 0.15)
        worst = 0.0
        for rec in toy_run["log"][1:]:
            s = (w.pose * rec["loss_pose"] + w.rot * rec["loss_rot"] + w.cyc * rec["loss_cyc"]
                 + w.perc * rec["loss_perc"] + w.reg * rec["loss_reg"])
            worst = max(worst, abs(rec["loss_total"] - s))
        info.update(epochs=len(toy_run["log"]) - 1, max_abs_diff=_fmt(worst))
        assert len(toy_run["log"]) == 31
        assert worst <= 1e-12


# 6 -------------------------------------------------------------------------------------

def test_criterion_6_metric_ordering(capsys):
    with criterion(6, "PA-MPJPE <= MPJPE and rigid invariance on 1000 pairs", capsys) as info:
        rng = np.random.default_rng(6)
        bases = D.generate_base_poses(50, seed=6)
        worst_order, worst_inv = -np.inf, 0.0
        for i in range(1000):
            gt = bases[i % 50]
            pred = gt @ G.random_rotation(rng).T * rng.uniform(0.7, 1.3) \
                + rng.normal(0, rng.uniform(1, 80), size=gt.shape) + rng.normal(0, 200, size=3)
            pa, mp = pa_mpjpe(pred, gt), mpjpe(pred, gt)
            worst_order = max(worst_order, pa - mp)
            r1, r2 = G.random_rotation(rng, 2)
            t1, t2 = rng.normal(0, 500, size=(2, 3))
            worst_inv = max(worst_inv, abs(pa_mpjpe(pred @ r1.T + t1, gt) - pa),
                            abs(pa_mpjpe(pred, gt @ r2.T + t2) - pa))
        info.update(max_pa_minus_mpjpe=_fmt(worst_order), max_invariance_err=_fmt(worst_inv))
        assert worst_order <= 0.0
        assert worst_inv < 1e-9


# 7 -------------------------------------------------------------------------------------

def test_criterion_7_kinematics(capsys):
    with criterion(7, "finite differences, z-score, gravity, comparison", capsys) as info:
        t = K.time_grid(200, 30.0)
        accel = np.array([9.81, -3.0, 0.5])
        s = K.SignalSeries(t, 0.5 * accel * t[:, None] ** 2 + np.array([1.0, 2.0, -4.0]) * t[:, None] + 7.0)
        d2 = K.finite_diff(s, 2).v
        quad = np.max(np.abs(d2 - accel) / np.abs(accel))
        z = K.normalize_signal(K.SignalSeries(t, np.random.default_rng(7).normal(5, 3, (200, 3))))
        idem = np.max(np.abs(K.normalize_signal(z).v - z.v))
        g = K.imu_to_world([K.ImuSample((0, 0, 9.81), np.eye(3), 0.0)]).v
        base = np.sin(np.arange(300) * 0.21) + 0.3 * np.cos(np.arange(300) * 0.057)
        x = K.SignalSeries(K.time_grid(250, 30.0), base[25:275])
        same = K.compare_signals(x, x)
        lags = {}
        for k in (-6, 4, 11):
            y = K.SignalSeries(x.t, base[25 - k:275 - k])
            lags[k] = K.compare_signals(x, y)["lag"][0]
        info.update(quad_rel=_fmt(quad), zscore_idem=_fmt(idem), gravity=g[0].tolist(),
                    pearson=same["pearson"][0], lag0=same["lag"][0], lags=lags)
        assert quad <= 1e-9 and idem <= 1e-12
        assert np.all(g == 0.0)
        assert abs(same["pearson"][0] - 1.0) < 1e-12 and same["lag"] == [0]
        assert all(k == v for k, v in lags.items())


# 8 -------------------------------------------------------------------------------------

def test_criterion_8_view_invariance(capsys):
    with criterion(8, "five-view wrist acceleration agreement", capsys) as info:
        t0 = time.perf_counter()
        seq = D.generate_motion_sequence(150, rate=30.0, seed=8)
        views = [(0, 0, 0), (-120, -20, 5), (45, 10, -10), (170, 25, 12), (-60, -5, -15)]
        signals = []
        for ypr in views:
            r = G.euler_to_matrix(G.EulerYPR(*np.deg2rad(ypr)))
            canon = K.canonicalize_sequence(seq @ r.T, geometric_canonicalize)
            assert not canon.errors
            traj = K.extract_trajectory(canon.poses, "r_wrist", rate=30.0)
            signals.append(K.normalize_signal(K.finite_diff(traj, 2)))
        worst = 1.0
        for i in range(5):
            for j in range(i + 1, 5):
                worst = min(worst, min(K.compare_signals(signals[i], signals[j])["pearson"]))
        elapsed = time.perf_counter() - t0
        info.update(views=len(views), min_pairwise_pearson=float(f"{worst:.12f}"))
        assert worst > 0.999 and elapsed < 60


# 9 -------------------------------------------------------------------------------------

def _same_tree(a, b):
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    return all((a / n).read_bytes() == (b / n).read_bytes() for n in names)


def test_criterion_9_determinism(tmp_path, capsys):
    with criterion(9, "bit-identical gen-data/train reruns and resume", capsys) as info:
        for run in ("a", "b"):
            assert cli.main(["gen-data", "--bases", "30", "--pairs", "4", "--seed", "9",
                             "--out", str(tmp_path / f"data_{run}")]) == 0
        data_same = _same_tree(tmp_path / "data_a", tmp_path / "data_b")
        train = ["train", "--data", str(tmp_path / "data_a"), "--toy", "--epochs", "3",
                 "--batch-size", "16", "--seed", "9"]
        for run in ("a", "b"):
            assert cli.main(train + ["--out", str(tmp_path / f"run_{run}")]) == 0
        train_same = _same_tree(tmp_path / "run_a", tmp_path / "run_b")
        corpus = D.read_corpus(tmp_path / "data_a")
        cfg = T.TrainConfig(epochs=3, batch_size=16, seed=9)
        T.train(cfg, corpus, out_dir=tmp_path / "part", stop_after=1, log=None)
        T.resume(tmp_path / "part" / "checkpoint_last.json", cfg, corpus,
                 out_dir=tmp_path / "part", log=None)
        resume_same = all((tmp_path / "run_a" / n).read_bytes() == (tmp_path / "part" / n).read_bytes()
                          for n in ("log.jsonl", "checkpoint_last.json", "checkpoint_best.json"))
        info.update(dataset_identical=data_same, train_identical=train_same,
                    resume_identical=resume_same)
        assert data_same and train_same and resume_same


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
