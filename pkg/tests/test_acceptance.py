"""Acceptance suite: one test per criterion, each recorded as a PASS/FAIL line.

The desk-scale pipeline (criteria 9 and 11) runs through the CLI once per
session and is shared between the two tests.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from acceptance_record import record
from oracles import (brute_kendall_b, brute_srcc, central_difference, grid_min_norm, ms_ssim_direct,
                     relative_error, ssim_direct, svr_dual_projected_gradient)
from proxyvqa import autodiff as ad
from proxyvqa import fr_metrics as fr
from proxyvqa import model as M
from proxyvqa import storage
from proxyvqa.cli import EXIT_OK, main
from proxyvqa.metrics import evaluate_predictions, krcc, logistic4, logistic_fit, plcc_rmse, srcc
from proxyvqa.mgda import GradientBundle, min_norm_pair, min_norm_solve
from proxyvqa.regression import ridge_fit, svr_fit
from proxyvqa.synth import build_corpus
from proxyvqa.trainer import MultiTaskModel, TrainConfig, train_step


def cli(*argv):
    rc = main(["--threads", "1"] + [str(a) for a in argv])
    assert rc == EXIT_OK, f"{argv[0]} exited {rc}"


# --- 1 ---------------------------------------------------------------------------------

def test_criterion_01_fr_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_ssim = worst_ms = 0.0
    for i in range(100):
        if i % 2:
            x = rng.uniform(size=(64, 64))
        else:
            x = np.clip(gaussian_filter(rng.uniform(size=(64, 64)), rng.uniform(0.5, 3)) * 2 - 0.5, 0, 1)
        y = np.clip(gaussian_filter(x, rng.uniform(0, 1.5)) + rng.normal(0, rng.uniform(0.005, 0.4), x.shape),
                    0, 1)
        worst_ssim = max(worst_ssim, abs(fr.ssim(x, y) - ssim_direct(x, y)))
        worst_ms = max(worst_ms, abs(fr.ms_ssim(x, y) - ms_ssim_direct(x, y)))
    ident = max(abs(fr.ssim(x, x) - 1.0) for x in rng.uniform(size=(10, 64, 64)))
    z = np.zeros((32, 32))
    psnr_err = max(abs(fr.psnr(z, z + 0.1) - 20.0), abs(fr.psnr(z, z + 0.01) - 40.0),
                   abs(fr.psnr(z + 0.5, z + 0.25) - 20 * np.log10(4)), abs(fr.psnr(z, z) - 100.0))
    elapsed = time.perf_counter() - t0
    ok = worst_ssim <= 1e-6 and worst_ms <= 1e-6 and ident <= 1e-9 and psnr_err <= 1e-6 and elapsed < 30
    record(1, "FR-metric oracles", ok,
           f"max|SSIM-oracle|={worst_ssim:.1e} max|MS-SSIM-oracle|={worst_ms:.1e} "
           f"|SSIM(x,x)-1|={ident:.1e} PSNR err={psnr_err:.1e} in {elapsed:.1f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------------------

def test_criterion_02_ladder_monotonicity():
    t0 = time.perf_counter()
    corpus = build_corpus(seed=21, n_contents=20, frames_per_clip=4, width=96, height=96)
    refs = {c.content_id: c for c in corpus if c.distortion_level == 0}
    per_level = {m: {lv: [] for lv in range(1, 6)} for m in ("ssim", "ms_ssim", "psnr")}
    for c in corpus:
        if c.distortion_level == 0:
            continue
        r = refs[c.content_id]
        for m, fn in (("ssim", fr.ssim), ("ms_ssim", fr.ms_ssim), ("psnr", fr.psnr)):
            per_level[m][c.distortion_level].append(np.mean([fn(a, b) for a, b in zip(r.frames, c.frames)]))
    medians = {m: [float(np.median(v[lv])) for lv in range(1, 6)] for m, v in per_level.items()}
    elapsed = time.perf_counter() - t0
    ok = all(np.all(np.diff(v) < 0) for v in medians.values()) and elapsed < 60
    detail = "; ".join(f"{m} " + ">".join(f"{x:.3f}" if m != "psnr" else f"{x:.1f}" for x in v)
                       for m, v in medians.items())
    record(2, "ladder monotonicity (20 contents)", ok, f"{detail} in {elapsed:.1f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------------------

def test_criterion_03_mgda():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    pair_err = 0.0
    for _ in range(1000):
        p = int(rng.integers(2, 50))
        g1, g2 = rng.normal(size=p), rng.normal(size=p) * rng.uniform(0.05, 5)
        d = g1 - g2
        closed = float(np.clip(((g2 - g1) @ g2) / (d @ d), 0, 1))
        a = min_norm_pair(g1, g2).alpha
        pair_err = max(pair_err, abs(a[0] - closed), abs(a[1] - (1 - closed)))
    grid_err = feas_err = 0.0
    dominance_gap = -np.inf
    for _ in range(100):
        vecs = rng.normal(size=(3, 10))
        sol = min_norm_solve(GradientBundle.from_list(vecs))
        grid_err = max(grid_err, abs(np.sqrt(sol.achieved_norm_sq) - grid_min_norm(vecs)))
        feas_err = max(feas_err, abs(sol.alpha.sum() - 1), -sol.alpha.min())
        pts = rng.dirichlet(np.ones(3), size=1000)
        best = np.sqrt(((pts @ vecs) ** 2).sum(axis=1)).min()
        dominance_gap = max(dominance_gap, np.sqrt(sol.achieved_norm_sq) - best)
    elapsed = time.perf_counter() - t0
    ok = pair_err <= 1e-9 and grid_err <= 1e-3 and feas_err <= 1e-12 and dominance_gap <= 1e-6 and elapsed < 60
    record(3, "MGDA min-norm solver", ok,
           f"pair max|alpha-closed form|={pair_err:.1e}; T=3 max|norm-grid|={grid_err:.1e}; "
           f"simplex violation={feas_err:.1e}; max(solver-best random)={dominance_gap:.1e} in {elapsed:.1f}s")
    assert ok


# --- 4 ---------------------------------------------------------------------------------

def _op_error(build, shapes, rng):
    arrays = [rng.normal(size=s) for s in shapes]
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    probe = rng.normal(size=out.shape)
    out.backward(probe)
    value = lambda: float(np.sum(build(*[ad.Tensor(a) for a in arrays]).data * probe))
    return max(relative_error(leaf.grad.ravel(), central_difference(value, a, h=1e-5))
               for leaf, a in zip(leaves, arrays))


def test_criterion_04_autodiff():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    ops = {
        "conv2d": (lambda x, w, b: ad.conv2d(x, w, b), [(2, 2, 8, 8), (3, 2, 3, 3), (3,)]),
        "relu": (ad.relu, [(5, 7)]),
        "mean-pool": (lambda a: ad.mean(a, axis=(2, 3)), [(2, 3, 4, 4)]),
        "temporal-pool": (lambda a: M.mean_pool(a), [(5, 4)]),
        "linear": (lambda x, w, b: x @ w + b, [(4, 6), (6, 3), (3,)]),
        "smooth-l1": (lambda p, t: ad.smooth_l1(p, t), [(16,), (16,)]),
    }
    errs = {name: max(_op_error(b, s, rng) for _ in range(20)) for name, (b, s) in ops.items()}

    enc = M.init_encoder(4, 16, 16)
    heads = [M.init_head(4, t, task_index=i) for i, t in enumerate(fr.DEFAULT_TASKS)]
    frames, targets = rng.uniform(size=(4, 16, 16)), rng.uniform(size=(3, 4))
    alpha = (0.2, 0.5, 0.3)

    def joint():
        z = M.encode_batch(enc, frames)
        return ad.weighted_sum([M.task_loss_from_embeddings(h, z, targets[i]) for i, h in enumerate(heads)],
                               alpha)

    joint().backward()
    full = 0.0
    for p in enc.parameters() + [t for h in heads for t in h.parameters()]:
        idx = rng.choice(p.data.size, size=min(p.data.size, 15), replace=False)
        num = central_difference(lambda: joint().item(), p.data, h=1e-6, indices=idx)
        full = max(full, relative_error(p.grad.ravel()[idx], num))
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and full < 1e-4 and elapsed < 60
    record(4, "autodiff vs finite differences", ok,
           " ".join(f"{k}={v:.1e}" for k, v in errs.items()) + f" encoder+heads(16x16)={full:.1e} "
           f"in {elapsed:.1f}s")
    assert ok


# --- 5 ---------------------------------------------------------------------------------

def test_criterion_05_smooth_l1():
    v_quad, v_lin = M.smooth_l1(0.5, 0.0, 1.0), M.smooth_l1(2.0, 0.0, 1.0)
    t = ad.smooth_l1(np.array([0.5, 2.0]), np.zeros(2), 1.0).data
    h = 1e-7
    jump = max(abs(M.smooth_l1(r + h, 0, 1) - M.smooth_l1(r - h, 0, 1)) for r in (1.0, -1.0))
    p = ad.Tensor(np.array([1 - 1e-12, 1 + 1e-12, -1 - 1e-12, -1 + 1e-12]), requires_grad=True)
    ad.total(ad.smooth_l1(p, np.zeros(4), 1.0)).backward()
    slope_gap = max(abs(p.grad[0] - p.grad[1]), abs(p.grad[2] - p.grad[3]))
    ok = v_quad == 0.125 and v_lin == 1.5 and list(t) == [0.125, 1.5] and jump < 3 * h and slope_gap < 1e-9
    record(5, "Smooth-L1 branches", ok,
           f"L(0.5)={v_quad!r} L(2)={v_lin!r}; value jump at |r|=1: {jump:.1e}; slope jump {slope_gap:.1e}")
    assert ok


# --- 6 ---------------------------------------------------------------------------------

def test_criterion_06_two_pass_consistency():
    rng = np.random.default_rng(606)
    cfg = TrainConfig()
    net = MultiTaskModel.init(cfg, 32, 32)
    worst = 0.0
    for step in range(20):
        frames, targets = rng.uniform(size=(6, 32, 32)), rng.uniform(size=(6, 3))
        rec = train_step(net, frames, targets, cfg, step, keep_grads=True)
        worst = max(worst, float(np.max(np.abs(rec.applied_encoder_grad - rec.alpha @ rec.task_grads))))
    ok = worst <= 1e-8
    record(6, "two-pass gradient consistency", ok, f"max|applied - sum alpha_t g_t| = {worst:.1e} over 20 steps")
    assert ok


# --- 7 ---------------------------------------------------------------------------------

def test_criterion_07_regressors():
    rng = np.random.default_rng(707)
    ridge_err = 0.0
    for _ in range(20):
        n, d = int(rng.integers(5, 60)), int(rng.integers(1, 10))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10, size=d)
        y = rng.normal(size=n)
        lam = float(rng.uniform(0.01, 10))
        sd = X.std(axis=0)
        A = np.hstack([(X - X.mean(0)) / sd, np.ones((n, 1))])
        P = np.diag(np.r_[np.full(d, lam), 0.0])
        w = np.linalg.solve(A.T @ A + P, A.T @ y)
        ridge_err = max(ridge_err, float(np.max(np.abs(ridge_fit(X, y, lam).predict(X) - A @ w))))
    dual_err = kkt = 0.0
    for trial in range(10):
        n = 6 if trial < 3 else int(rng.integers(3, 11))
        X = rng.normal(size=(n, 1 if trial < 3 else 2))
        y = np.cos(2 * X[:, 0]) + 0.1 * rng.normal(size=n)
        C, gamma, eps = [0.1, 1.0, 10.0][trial % 3], float(rng.uniform(0.2, 2)), 0.05
        m = svr_fit(X, y, C, gamma, eps)
        Xs = (X - X.mean(0)) / X.std(0)
        K = np.exp(-gamma * ((Xs[:, None, :] - Xs[None, :, :]) ** 2).sum(-1))
        _, oracle = svr_dual_projected_gradient(K, y, C, eps)
        dual_err = max(dual_err, abs(m.dual_objective - oracle))
        kkt = max(kkt, m.kkt_residual)
        assert np.all(np.abs(m.dual_coef) <= C)
    ok = ridge_err <= 1e-8 and dual_err <= 1e-3 and kkt <= 1e-3
    record(7, "Ridge / SVR oracles", ok,
           f"ridge max|pred-normal eq.|={ridge_err:.1e}; SVR max|dual-oracle|={dual_err:.1e}; max KKT={kkt:.1e}")
    assert ok


# --- 8 ---------------------------------------------------------------------------------

def test_criterion_08_correlation_metrics():
    rank_err, count = 0.0, 0
    for n in range(3, 7):
        labels = list(range(1, n + 1))
        preds = list(itertools.permutations(labels))
        preds += [tuple(v // 2 for v in p) for p in itertools.permutations(range(n))]
        for p in preds:
            if len(set(p)) == 1:
                continue
            count += 1
            rank_err = max(rank_err, abs(srcc(p, labels) - brute_srcc(p, labels)),
                           abs(krcc(p, labels) - brute_kendall_b(p, labels)))
    rng = np.random.default_rng(808)
    worst_plcc = 1.0
    for _ in range(20):
        s = rng.uniform(-3, 3, size=50)
        y = logistic4(s, rng.uniform(2, 5), rng.uniform(0.5, 3), rng.uniform(-1, 1), rng.uniform(1, 3))
        worst_plcc = min(worst_plcc, plcc_rmse(logistic_fit(s, y).mapped, y)[0])
    affine = 0.0
    for _ in range(10):
        s = rng.uniform(size=60)
        y = 1 + 4 / (1 + np.exp(-8 * (s - 0.5))) + 0.2 * rng.normal(size=60)
        base = evaluate_predictions(s, y).plcc
        for a, c in ((3.0, -1.0), (0.02, 5.0), (250.0, 40.0)):
            affine = max(affine, abs(evaluate_predictions(a * s + c, y).plcc - base))
    ok = rank_err <= 1e-12 and worst_plcc >= 0.999 and affine <= 1e-6
    record(8, "correlation metrics", ok,
           f"{count} permutations n<=6: max|rank metric-brute force|={rank_err:.1e}; "
           f"min self-logistic PLCC={worst_plcc:.6f}; max affine PLCC change={affine:.1e}")
    assert ok


# --- desk pipeline shared by 9 and 11 -----------------------------------------------------

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    man = root / "clips" / "manifest.txt"
    t0 = time.perf_counter()
    cli("generate", "--seed", 7, "--contents", 40, "--frames", 8, "--size", "96x96", "--out", root / "clips")
    cli("compute-fr", "--manifest", man, "--tasks", "ssim,ms_ssim,psnr_norm", "--out", root / "targets.csv",
        "--labels-out", root / "labels.csv")
    cli("pretrain", "--manifest", man, "--targets", root / "targets.csv", "--contents", "0-29",
        "--tasks", "ssim,ms_ssim,psnr_norm", "--out", root / "ckpt")
    cli("extract-features", "--checkpoint", root / "ckpt" / "final.bin", "--manifest", man,
        "--contents", "30-39", "--out", root / "features.csv")
    cli("evaluate", "--protocol", "standard", "--features", root / "features.csv", "--labels",
        root / "labels.csv", "--runs", 20, "--seed", 0, "--out", root / "standard.csv")
    return root, time.perf_counter() - t0


def test_criterion_09_desk_pipeline(desk):
    root, elapsed = desk
    rows = storage.read_csv(root / "standard.csv")
    med = [r for r in rows if r["run_id"] == "median"][0]
    feats = storage.read_features(root / "features.csv")
    held_out = set(feats.content_ids.tolist()) == set(range(30, 40))
    rho = float(med["srcc"])
    ok = rho >= 0.80 and elapsed < 15 * 60 and held_out and len(rows) == 21
    record(9, "desk pipeline, 20 standard splits", ok,
           f"median SRCC={rho:.4f} KRCC={float(med['krcc']):.4f} PLCC={float(med['plcc']):.4f} "
           f"on {len(feats.clip_ids)} held-out clips; total {elapsed / 60:.1f} min single-threaded")
    assert ok


# --- 10 --------------------------------------------------------------------------------

ABLATE_CFG = """\
[data]
seed = 5
frames = 4
size = 48x48
[train]
epochs = 2
[ablate]
train_contents = 10
eval_contents = 6
runs = 4
"""


def test_criterion_10_ablation_determinism(tmp_path):
    (tmp_path / "ablate.cfg").write_text(ABLATE_CFG)
    for run in ("a", "b"):
        assert main(["--threads", "1", "--config", str(tmp_path / "ablate.cfg"), "ablate",
                     "--out", str(tmp_path / run)]) == EXIT_OK
    texts = [(tmp_path / r / "ablation.csv").read_text() for r in ("a", "b")]
    rows = [storage.read_csv(tmp_path / r / "ablation.csv") for r in ("a", "b")]
    header = texts[0].splitlines()[1]
    mtl = [next(r for r in rs if r["method"] == "MTL") for rs in rows]
    ok = (header == "method,tasks,srcc,krcc,plcc,rmse" and [r["method"] for r in rows[0]] == ["ST", "MTL"]
          and mtl[0] == mtl[1] and texts[0] == texts[1] and (tmp_path / "a" / "ablation.png").is_file())
    record(10, "ablation table determinism", ok,
           "ST " + " ".join(f"{m}={rows[0][0][m]}" for m in ("srcc", "plcc")) +
           " | MTL " + " ".join(f"{m}={mtl[0][m]}" for m in ("srcc", "plcc")) +
           f"; rerun identical={texts[0] == texts[1]}")
    assert ok


# --- 11 --------------------------------------------------------------------------------

def test_criterion_11_few_shot_trend(desk):
    root, _ = desk
    tgt = root / "target"
    cli("generate", "--seed", 7, "--contents", 30, "--frames", 8, "--size", "96x96", "--domain", "target",
        "--first-content", 1000, "--out", tgt / "clips")
    cli("compute-fr", "--manifest", tgt / "clips" / "manifest.txt", "--out", tgt / "targets.csv",
        "--labels-out", tgt / "labels.csv")
    cli("extract-features", "--checkpoint", root / "ckpt" / "final.bin", "--manifest",
        tgt / "clips" / "manifest.txt", "--out", tgt / "features.csv")
    outs = []
    for run in ("a", "b"):
        cli("evaluate", "--protocol", "fewshot", "--features", tgt / "features.csv", "--labels",
            tgt / "labels.csv", "--k", "10,20,50,100", "--samplings", 100, "--regressor", "ridge",
            "--seed", 0, "--out", tgt / f"fewshot_{run}.csv")
        outs.append((tgt / f"fewshot_{run}.csv").read_bytes())
    med = [r for r in storage.read_csv(tgt / "fewshot_a.csv") if r["run_id"] == "median"]
    ks = [int(r["K"]) for r in med]
    rho = [float(r["srcc"]) for r in med]
    ok = ks == [10, 20, 50, 100] and all(b >= a for a, b in zip(rho, rho[1:])) and outs[0] == outs[1]
    record(11, "few-shot trend on shifted domain", ok,
           "median SRCC " + " ".join(f"K={k}:{r:.4f}" for k, r in zip(ks, rho)) +
           f"; rerun bit-exact={outs[0] == outs[1]}")
    assert ok
