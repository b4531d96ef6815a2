"""File-to-file pipeline stages shared by the CLI subcommands and ``ablate``."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from proxyvqa import plotting, storage
from proxyvqa.errors import ValidationError
from proxyvqa.fr_metrics import compute_proxy_targets, mos_surrogate, parse_tasks
from proxyvqa.model import pooled_features
from proxyvqa.protocols import (few_shot_protocol, standard_split_protocol, train_source_head,
                                zero_shot_protocol)
from proxyvqa.metrics import CorrelationReport, logistic_fit
from proxyvqa.regression import C_GRID, RidgeModel, Standardizer, SvrModel, grid_search_cv, ridge_fit, svr_fit
from proxyvqa.synth import DOMAINS, build_corpus
from proxyvqa.trainer import TrainConfig, build_training_set, load_checkpoint, pretrain

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["run_id", "K", "srcc", "krcc", "plcc", "rmse", "n", "mapping", "logistic_params",
                  "C", "gamma", "n_train", "test_contents", "surrogate_labels"]
ABLATION_COLUMNS = ["method", "tasks", "srcc", "krcc", "plcc", "rmse"]


def generate(out_dir, seed: int, contents: int, frames: int, width: int, height: int,
             domain: str = "source", first_content: int = 0) -> Path:
    clips = build_corpus(seed, contents, frames, width, height, domain, first_content)
    scene, ladder = DOMAINS[domain]
    meta = dict(seed=seed, domain=domain, metric_resolution=f"{width}x{height}",
                ladder_blur=",".join(f"{lv.blur_sigma:g}" for lv in ladder.levels))
    return storage.write_clips(out_dir, clips, meta)


def compute_fr(manifest_path, tasks, out, labels_out=None, settings: Optional[dict] = None) -> None:
    tasks = parse_tasks(tasks)
    man = storage.read_manifest(manifest_path)
    refs = man.references()
    rows, label_rows = [], []
    scales = None
    for e in man.distorted():
        ref = man.load(refs[e.content_id])
        dist = man.load(e)
        label_tasks = tasks if "ms_ssim" in tasks else tasks + ("ms_ssim",)
        scores = compute_proxy_targets(ref, dist, label_tasks)
        scales = scores.ms_ssim_scales
        cols = [label_tasks.index(t) for t in tasks]
        for fi, vals in enumerate(scores.per_frame):
            rows.append([e.content_id, e.level, fi] + list(vals[cols]))
        rows.append([e.content_id, e.level, -1] + list(scores.clip_mean[cols]))
        label_rows.append((storage.clip_id(e.content_id, e.level), e.content_id,
                           mos_surrogate(scores["ms_ssim"])))
    settings = dict(settings or {}, tasks=",".join(tasks))
    prov = storage.provenance_line("compute-fr", settings, man.meta.get("seed", ""))
    prov += f"\n# ms_ssim_scales={scales} resolution={man.meta.get('metric_resolution', '')}"
    storage.write_csv(out, ["content_id", "level", "frame_index"] + list(tasks), rows, prov)
    if labels_out:
        cid, con, lab = zip(*label_rows) if label_rows else ((), (), ())
        storage.write_labels(labels_out, cid, con, lab,
                             storage.provenance_line("labels", settings, man.meta.get("seed", "")))


def run_pretrain(manifest_path, targets_path, config: TrainConfig, out_dir,
                 contents: Optional[Sequence[int]] = None):
    man = storage.read_manifest(manifest_path)
    rows = storage.read_csv(targets_path)
    data = build_training_set(man, rows, config.tasks, config.frame_stride,
                              set(contents) if contents is not None else None)
    out_dir = Path(out_dir)
    net, tlog, paths = pretrain(data, config, out_dir)
    tlog.write(out_dir / "train_log.csv", storage.provenance_line("pretrain", config.as_dict(), config.seed))
    return net, tlog, paths


def extract_features(checkpoint, manifest_path, out, stride: int = 1, include_reference: bool = False,
                     contents: Optional[Sequence[int]] = None) -> storage.FeatureTable:
    net = load_checkpoint(checkpoint)
    man = storage.read_manifest(manifest_path)
    ids, cons, levels, vals = [], [], [], []
    for e in man.entries:
        if e.level == 0 and not include_reference:
            continue
        if contents is not None and e.content_id not in contents:
            continue
        if (e.height, e.width) != (net.encoder.height, net.encoder.width):
            raise ValidationError(f"clip {e.key} is {e.width}x{e.height}; encoder expects "
                                  f"{net.encoder.width}x{net.encoder.height}")
        ids.append(storage.clip_id(e.content_id, e.level))
        cons.append(e.content_id)
        levels.append(e.level)
        vals.append(pooled_features(net.encoder, man.load(e).frames, stride))
    if not ids:
        raise ValidationError("no clips selected for feature extraction")
    table = storage.FeatureTable(np.array(ids), np.array(cons), np.array(levels), np.stack(vals))
    settings = dict(checkpoint_sha=_file_hash(checkpoint), stride=stride, include_reference=include_reference)
    storage.write_features(out, table, storage.provenance_line("extract-features", settings,
                                                               man.meta.get("seed", "")))
    return table


def _file_hash(path) -> str:
    import hashlib
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# --- regression heads on disk ---------------------------------------------------

def save_model(path, m) -> None:
    std = m.standardizer
    if isinstance(m, RidgeModel):
        tensors = dict(weights=m.weights, intercept=[m.intercept], lam=[m.lam], mean=std.mean, scale=std.scale)
        meta = dict(kind="ridge", degenerate=m.degenerate)
    else:
        tensors = dict(support_vectors=m.support_vectors.reshape(-1, std.mean.size), dual_coef=m.dual_coef,
                       bias=[m.bias], gamma=[m.gamma], epsilon=[m.epsilon], C=[m.C],
                       mean=std.mean, scale=std.scale)
        meta = dict(kind="svr", converged=m.converged, kkt_residual=m.kkt_residual)
    storage.write_container(path, tensors, meta, dtype="f8")


def load_model(path):
    t, meta = storage.read_container(path)
    std = Standardizer(t["mean"], t["scale"])
    if meta.get("kind") == "ridge":
        return RidgeModel(t["weights"], float(t["intercept"][0]), float(t["lam"][0]), std,
                          bool(meta.get("degenerate", False)))
    if meta.get("kind") == "svr":
        return SvrModel(t["support_vectors"], t["dual_coef"], float(t["bias"][0]), float(t["gamma"][0]),
                        float(t["epsilon"][0]), float(t["C"][0]), std,
                        converged=bool(meta.get("converged", True)),
                        kkt_residual=float(meta.get("kkt_residual", 0.0)))
    raise ValidationError(f"{path}: unknown model kind {meta.get('kind')!r}")


def _load_xy(features_path, labels_path):
    table = storage.read_features(features_path)
    y = storage.align_labels(table, storage.read_labels(labels_path))
    return table, y


def fit_head(features_path, labels_path, kind: str, out, ridge_lambda: float = 1.0,
             C: Optional[float] = None, gamma: Optional[float] = None, epsilon: Optional[float] = None,
             cv_folds: int = 5, seed: int = 0):
    table, y = _load_xy(features_path, labels_path)
    if kind == "ridge":
        m = ridge_fit(table.values, y, ridge_lambda)
    elif kind == "svr":
        if C is None or gamma is None:
            gs = grid_search_cv(table.values, y, table.content_ids,
                                C_grid=(C,) if C is not None else C_GRID,
                                gamma_grid=(gamma,) if gamma is not None else None,
                                epsilon=epsilon, n_folds=cv_folds, seed=seed)
            m = gs.model
        else:
            m = svr_fit(table.values, y, C, gamma, epsilon)
    else:
        raise ValidationError(f"unknown model {kind!r}; expected ridge or svr")
    save_model(out, m)
    return m


# --- evaluation -------------------------------------------------------------------

def _summary_row(rep: CorrelationReport, **extra) -> dict:
    return dict(run_id="median", **rep.as_row(), **extra)


def evaluate(protocol: str, features_path, labels_path, out, *, runs: int = 100, ks=(10, 20, 50, 100),
             samplings: int = 100, regressor: str = "ridge", seed: int = 0,
             source_features=None, source_labels=None, zeroshot_epochs: int = 300,
             scatter=None, settings: Optional[dict] = None) -> list:
    """Run one protocol and write per-run rows plus median summary rows. Returns the summary rows."""
    table, y = _load_xy(features_path, labels_path)
    settings = dict(settings or {}, protocol=protocol, runs=runs, ks=",".join(map(str, ks)),
                    samplings=samplings, regressor=regressor)
    rows, summary = [], []
    if protocol == "standard":
        res = standard_split_protocol(table.values, y, table.content_ids, n_runs=runs, seed=seed)
        rows = res.runs
        summary = [_summary_row(res.summary)]
    elif protocol == "fewshot":
        for k in ks:
            res = few_shot_protocol(table.values, y, k, regressor, samplings, seed)
            rows += res.runs
            summary.append(_summary_row(res.summary, K=k))
    elif protocol == "zeroshot":
        if source_features is None or source_labels is None:
            raise ValidationError("zeroshot needs --source-features and --source-labels")
        src, ys = _load_xy(source_features, source_labels)
        res = zero_shot_protocol(src.values, ys, table.values, y, epochs=zeroshot_epochs, seed=seed)
        rows = [dict(r, K=0) for r in res.runs]
        summary = [_summary_row(res.summary, K=0)]
        if scatter:
            head = train_source_head(src.values, ys, epochs=zeroshot_epochs, seed=seed)
            pred = head.predict(table.values)
            plotting.plot_scatter(pred, y, _safe_fit(pred, y), scatter, "zero-shot (surrogate labels)")
    else:
        raise ValidationError(f"unknown protocol {protocol!r}")
    for r in rows + summary:
        r["surrogate_labels"] = 1
    storage.write_csv(out, REPORT_COLUMNS, rows + summary, storage.provenance_line("evaluate", settings, seed))
    if scatter and protocol != "zeroshot":
        _scatter_heldout(table, y, protocol, regressor, seed, scatter)
    return summary


def _safe_fit(pred, y):
    try:
        return logistic_fit(pred, y)
    except ValidationError:
        return None


def _scatter_heldout(table, y, protocol, regressor, seed, path):
    # one representative split: the first content-disjoint split
    from proxyvqa.protocols import make_split
    plan = make_split(table.content_ids, 0, seed)
    tr = np.isin(table.content_ids, plan.train_contents)
    if protocol == "standard" or regressor == "svr":
        m = grid_search_cv(table.values[tr], y[tr], table.content_ids[tr], seed=seed).model
    else:
        m = ridge_fit(table.values[tr], y[tr])
    pred = m.predict(table.values[~tr])
    plotting.plot_scatter(pred, y[~tr], _safe_fit(pred, y[~tr]), path, f"{protocol}: split 0")


# --- report and ablation -------------------------------------------------------------

SUMMARY_COLUMNS = ["source", "kind", "label", "srcc", "krcc", "plcc", "rmse", "joint_loss", "figure"]


def report(inputs: Sequence, out_dir) -> Path:
    """Render one figure per input CSV and collect headline numbers into report_summary.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for src in inputs:
        src = Path(src)
        rows = storage.read_csv(src)
        if not rows:
            raise ValidationError(f"{src}: empty table")
        cols = set(rows[0])
        fig = out_dir / f"{src.stem}.png"
        if "joint_loss" in cols:
            tasks = [c[len("loss_"):] for c in rows[0] if c.startswith("loss_")]
            plotting.plot_training(rows, tasks, fig)
            last_epoch = max(int(r["epoch"]) for r in rows)
            tail = [float(r["joint_loss"]) for r in rows if int(r["epoch"]) == last_epoch and r["joint_loss"]]
            summary.append(dict(source=src.name, kind="train", label=f"epoch {last_epoch}",
                                joint_loss=float(np.median(tail)), figure=fig.name))
        elif "method" in cols:
            plotting.plot_ablation(rows, fig)
            for r in rows:
                summary.append(dict(source=src.name, kind="ablation", label=r["method"], figure=fig.name,
                                    **{m: storage._num(r[m]) for m in CorrelationReport.METRICS}))
        elif "run_id" in cols:
            med = [r for r in rows if r["run_id"] == "median"]
            per_run = [r for r in rows if r["run_id"] != "median"]
            if len(med) > 1:
                plotting.plot_fewshot(med, fig)
            else:
                plotting.plot_runs(per_run, fig)
            for r in med:
                label = f"K={r['K']}" if r.get("K") else "median"
                summary.append(dict(source=src.name, kind="evaluation", label=label, figure=fig.name,
                                    **{m: storage._num(r[m]) for m in CorrelationReport.METRICS}))
        else:
            raise ValidationError(f"{src}: not a training log, evaluation report or ablation table")
    path = out_dir / "report_summary.csv"
    settings = dict(inputs=sorted(Path(p).name for p in inputs))
    storage.write_csv(path, SUMMARY_COLUMNS, summary, storage.provenance_line("report", settings, ""))
    return path


def ablate(cfg, out_dir, progress=None) -> list:
    """Single-task vs multi-task pretraining, each scored by the standard split protocol."""
    out_dir = Path(out_dir)
    data, ab, ev = cfg["data"], cfg["ablate"], cfg["eval"]
    from proxyvqa.config import parse_size
    width, height = parse_size(data["size"])
    n_train, n_eval = int(ab["train_contents"]), int(ab["eval_contents"])
    if n_eval < 5:
        raise ValidationError("ablate needs eval_contents >= 5 for the standard split protocol")
    manifest = generate(out_dir / "clips", data["seed"], n_train + n_eval, data["frames"], width, height,
                        data["domain"], data["first_content"])
    first = int(data["first_content"])
    train_ids = list(range(first, first + n_train))
    eval_ids = list(range(first + n_train, first + n_train + n_eval))

    st, mtl = parse_tasks(ab["st_tasks"]), parse_tasks(ab["mtl_tasks"])
    all_tasks = tuple(dict.fromkeys(parse_tasks(cfg["fr"]["tasks"]) + st + mtl))
    settings = {f"{s}.{k}": v for s in ("data", "fr", "train", "features", "eval", "ablate")
                for k, v in cfg[s].items()}
    compute_fr(manifest, all_tasks, out_dir / "targets.csv", out_dir / "labels.csv", settings)

    rows = []
    for method, tasks in (("ST", st), ("MTL", mtl)):
        tc = cfg.train_config()
        tc = TrainConfig(**{**tc.__dict__, "tasks": tasks})
        mdir = out_dir / method.lower()
        run_pretrain(manifest, out_dir / "targets.csv", tc, mdir / "ckpt", contents=train_ids)
        extract_features(mdir / "ckpt" / "final.bin", manifest, mdir / "features.csv",
                         cfg["features"]["stride"], contents=set(eval_ids))
        summ = evaluate("standard", mdir / "features.csv", out_dir / "labels.csv", mdir / "report.csv",
                        runs=int(ab["runs"]), seed=int(ev["seed"]), settings=settings)[0]
        rows.append(dict(method=method, tasks="+".join(tasks),
                         **{m: storage._num(storage.fmt(summ[m])) for m in CorrelationReport.METRICS}))
        if progress:
            progress(method, rows[-1])
    seed = data["seed"]
    storage.write_csv(out_dir / "ablation.csv", ABLATION_COLUMNS, rows,
                      storage.provenance_line("ablate", settings, seed))
    plotting.plot_ablation([{k: storage.fmt(v) for k, v in r.items()} for r in rows], out_dir / "ablation.png")
    return rows
