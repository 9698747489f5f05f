"""Metrics, experiment orchestration and result persistence.

Every variant in a run is trained on the same seeded batch stream and scored
on the same frozen validation/test sets, so comparisons are paired.
Independent (axis point, variant) jobs can run in a process pool; results are
assembled in job order by the parent, so output does not depend on the
worker count.
"""

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datagen import Batch, NoiseSpec, SparsityLaw, TrainingStream, fixed_eval_sets, gen_dictionary, observe
from .photometric import (
    baselines,
    estimate_normals,
    null_projector,
    outlier_codes,
    render,
    signal_rms,
    sphere_scene,
    write_error_map,
)
from .trace import fmt, nmse_db_rows
from .training import train_progressive
from .unfolded import Kind, Variant, forward, init_params, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

RESULT_HEADER = ("variant", "layer", "nmse_db", "tag", "seed")
# Third entropy word keeps eval-set seeds disjoint from TrainingStream's [seed, step].
EVAL_STREAM = 7_000_001
LOG_FLOOR = 1e-12

SPARSITY_AXIS = ((0.95, (0.6, 6.5)), (0.9, (1.2, 13.0)), (0.8, (1.5, 16.25)))
SNR_AXIS = (math.inf, 40.0, 20.0)
KAPPA_AXIS = (3.0, 30.0, 100.0)
AXES = ("sparsity", "snr", "condition_number")


class MissingCheckpointError(FileNotFoundError):
    pass


def nmse_db(x, x_s):
    """``10 log10(||x - x_s||^2 / ||x_s||^2)`` for a single code."""
    x_s = np.asarray(x_s, dtype=np.float64)
    den = float(np.sum(x_s * x_s))
    if den == 0.0:
        raise ValueError("NMSE is undefined for an all-zero reference code")
    num = float(np.sum((np.asarray(x, dtype=np.float64) - x_s) ** 2))
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(num / den))


@dataclass(eq=False)
class LayerwiseCurve:
    curve: np.ndarray  # length depth + 1, entry 0 is x^(0) = 0
    skipped: int  # samples with x_s = 0
    count: int


def layerwise_eval(params, variant, a, batch, depth=None):
    """Mean NMSE (dB) after every layer, skipping samples whose truth is zero."""
    xs = np.atleast_2d(batch.xs)
    ok = np.any(xs != 0, axis=1)
    if not ok.any():
        raise ValueError("every sample in the batch has x_s = 0")
    trace = forward(params, variant, a, batch.ys, depth)
    curve = np.array([float(np.mean(nmse_db_rows(x[ok], xs[ok]))) for x in trace.estimates])
    return LayerwiseCurve(curve, int((~ok).sum()), int(ok.sum()))


@dataclass(frozen=True)
class ResultRow:
    variant: str
    layer: int
    nmse_db: float
    tag: str
    seed: int


@dataclass(eq=False)
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, row):
        key = (row.variant, row.layer, row.tag)
        if any((r.variant, r.layer, r.tag) == key for r in self.rows):
            raise ValueError(f"duplicate result row {key}")
        self.rows.append(row)

    def add_curve(self, variant_name, curve, tag, seed):
        for layer, value in enumerate(curve):
            self.add(ResultRow(variant_name, layer, float(value), tag, int(seed)))

    def extend(self, other):
        for row in other.rows:
            self.add(row)

    def curve(self, variant_name, tag):
        rows = sorted((r for r in self.rows if r.variant == variant_name and r.tag == tag), key=lambda r: r.layer)
        return np.array([r.nmse_db for r in rows])

    def final(self, variant_name, tag):
        curve = self.curve(variant_name, tag)
        if curve.size == 0:
            raise KeyError((variant_name, tag))
        return float(curve[-1])

    def tags(self):
        return sorted({r.tag for r in self.rows})

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_HEADER)
            for r in self.rows:
                w.writerow([r.variant, r.layer, fmt(r.nmse_db), r.tag, r.seed])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != RESULT_HEADER:
                raise ValueError(f"unexpected header {header}")
            table = cls()
            for variant, layer, value, tag, seed in reader:
                table.add(ResultRow(variant, int(layer), float(value), tag, int(seed)))
        return table


# ---------------------------------------------------------------- problem setup


def build_dictionary(cfg, kappa=None):
    p = cfg.problem
    return gen_dictionary(p.m, p.n, p.kappa if kappa is None else kappa, seed=p.seed)


def eval_sets(cfg, a, law=None, noise=None):
    law = cfg.law if law is None else law
    noise = cfg.noise if noise is None else noise
    seeds = ([cfg.seed, EVAL_STREAM, 1], [cfg.seed, EVAL_STREAM, 2])
    return fixed_eval_sets(a, law, noise, seeds=seeds, size=cfg.eval_size)


def train_variant(cfg, variant, a, law=None, noise=None, checkpoint_dir=None):
    """Train one variant on the run's paired stream; returns ``(params, trainlog)``."""
    law = cfg.law if law is None else law
    noise = cfg.noise if noise is None else noise
    val, _ = eval_sets(cfg, a, law, noise)
    stream = TrainingStream(a, law, noise, cfg.train.batch_size, seed=cfg.seed)
    params = init_params(variant, a, cfg.depth, seed=cfg.seed)
    return train_progressive(params, variant, a, stream, val, cfg.train, checkpoint_dir=checkpoint_dir)


def default_workers():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def pool_map(fn, jobs, workers=1):
    """Ordered map, in-process for ``workers <= 1``."""
    jobs = list(jobs)
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _train_job(job):
    cfg, variant, law, noise, kappa = job
    a = build_dictionary(cfg, kappa)
    params, trainlog = train_variant(cfg, variant, a, law, noise)
    return params, trainlog


def checkpoint_path(directory, variant):
    return Path(directory) / variant.name


def train_all(cfg, out_dir=None, workers=1):
    """Train every configured variant on ``cfg.law``; optionally persist checkpoints and logs.

    Returns ``{variant.name: (variant, params, trainlog)}`` in config order.
    """
    jobs = [(cfg, v, cfg.law, cfg.noise, None) for v in cfg.variants]
    results = pool_map(_train_job, jobs, workers)
    out = {}
    for v, (params, trainlog) in zip(cfg.variants, results):
        out[v.name] = (v, params, trainlog)
        if out_dir is not None:
            ckpt = Path(out_dir) / "checkpoints"
            ckpt.mkdir(parents=True, exist_ok=True)
            save_checkpoint(checkpoint_path(ckpt, v), params, v, seed=cfg.seed)
            trainlog.write_csv(Path(out_dir) / f"trainlog_{v.name}.csv")
    return out


def load_trained(cfg, checkpoint_dir):
    """Load a checkpoint for every configured variant or raise naming the missing one."""
    out = {}
    for v in cfg.variants:
        path = checkpoint_path(checkpoint_dir, v)
        if not path.with_suffix(".json").exists() or not path.with_suffix(".bin").exists():
            raise MissingCheckpointError(f"no checkpoint for {v.name} under {checkpoint_dir}")
        params, stored = load_checkpoint(path)
        if stored != v:
            raise ValueError(f"checkpoint {path} holds {stored.name}, config expects {v.name}")
        out[v.name] = (v, params, None)
    return out


# ---------------------------------------------------------------- experiments


def evaluate(cfg, trained, a=None, tag=None):
    """Layer-wise test curves of trained models on ``cfg.law``."""
    a = build_dictionary(cfg) if a is None else a
    _, test = eval_sets(cfg, a)
    table = ResultTable()
    tag = cfg.law.tag if tag is None else tag
    for name, (variant, params, _) in trained.items():
        table.add_curve(name, layerwise_eval(params, variant, a, test).curve, tag, cfg.seed)
    return table


def adaptivity_tag(train_law, eval_law):
    return f"train={train_law.tag}|eval={eval_law.tag}"


def run_adaptivity(cfg, trained=None, checkpoint_dir=None, workers=1):
    """Evaluate every variant, trained on ``cfg.law``, on every law in ``cfg.eval_laws``.

    Models come from ``trained``, else from ``checkpoint_dir`` (every variant
    must be present), else they are trained in-run.
    """
    a = build_dictionary(cfg)
    if trained is None:
        trained = load_trained(cfg, checkpoint_dir) if checkpoint_dir is not None else train_all(cfg, workers=workers)
    table = ResultTable()
    for law in cfg.eval_laws:
        _, test = eval_sets(cfg, a, law)
        for name, (variant, params, _) in trained.items():
            curve = layerwise_eval(params, variant, a, test).curve
            table.add_curve(name, curve, adaptivity_tag(cfg.law, law), cfg.seed)
    return table


def _threshold_prefix(variant):
    return "rho" if variant.kind.ebt else "b"


def floored_log(v):
    return np.log(np.maximum(np.asarray(v, dtype=np.float64), LOG_FLOOR))


def log_param_std(params, variant):
    """Std over layers of the log threshold parameter (``rho`` for EBT kinds, else ``b``)."""
    return float(np.std(floored_log(params.layer_values(_threshold_prefix(variant)))))


DIAG_HEADER = ("variant", "layer", "param", "value", "log_centered", "realized_threshold_mean")


@dataclass(eq=False)
class DiagnosticsTable:
    rows: list = field(default_factory=list)

    def values(self, variant_name, column):
        idx = DIAG_HEADER.index(column)
        return np.array([r[idx] for r in self.rows if r[0] == variant_name], dtype=np.float64)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DIAG_HEADER)
            for name, layer, param, value, centered, realized in self.rows:
                w.writerow([name, layer, param, fmt(value), fmt(centered), fmt(realized)])


def run_threshold_diagnostics(entries, a, batch):
    """Per-layer threshold parameters and realized thresholds.

    ``entries`` is an iterable of ``(variant, params)``. For each layer the
    table holds the raw parameter, its log with the across-layer mean removed
    (non-positive values are floored at 1e-12 before the log) and the realized
    threshold averaged over the batch: ``rho ||U(Ax - y)||_p (+ alpha)`` for
    EBT kinds, the constant ``b`` otherwise.
    """
    table = DiagnosticsTable()
    for variant, params in entries:
        prefix = _threshold_prefix(variant)
        values = params.layer_values(prefix)
        logs = floored_log(values)
        centered = logs - logs.mean()
        trace = forward(params, variant, a, batch.ys)
        for t in range(params.depth):
            realized = float(np.mean(trace.thresholds[t]))
            table.rows.append((variant.name, t + 1, prefix, float(values[t]), float(centered[t]), realized))
    return table


def sweep_points(cfg, axis):
    """``(tag, point_cfg)`` per axis value."""
    if axis == "sparsity":
        out = []
        for p_b, schedule in SPARSITY_AXIS:
            variants = [replace(v, ss_schedule=schedule) if v.ss_schedule is not None else v for v in cfg.variants]
            law = SparsityLaw.fixed(p_b)
            out.append((f"sparsity={p_b:g}", replace(cfg, law=law, variants=variants, eval_laws=[law])))
        return out
    if axis == "snr":
        return [(f"snr={snr:g}", replace(cfg, noise=NoiseSpec(snr))) for snr in SNR_AXIS]
    if axis == "condition_number":
        return [(f"kappa={k:g}", replace(cfg, problem=replace(cfg.problem, kappa=k))) for k in KAPPA_AXIS]
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


def _sweep_job(job):
    point_cfg, variant = job
    a = build_dictionary(point_cfg)
    params, trainlog = train_variant(point_cfg, variant, a)
    _, test = eval_sets(point_cfg, a)
    return layerwise_eval(params, variant, a, test).curve, trainlog


def run_sweep(cfg, axis, workers=1, out_dir=None):
    """Train and evaluate every variant at every value of ``axis``.

    A point whose training hit a non-finite loss is kept with ``|diverged``
    appended to its tag.
    """
    points = sweep_points(cfg, axis)
    jobs = [(point_cfg, v) for _, point_cfg in points for v in point_cfg.variants]
    results = pool_map(_sweep_job, jobs, workers)
    table = ResultTable()
    it = iter(results)
    for tag, point_cfg in points:
        for v in point_cfg.variants:
            curve, trainlog = next(it)
            row_tag = tag + ("|diverged" if trainlog.diverged else "")
            if trainlog.diverged:
                log.warning("%s diverged at %s", v.name, tag)
            table.add_curve(v.name, curve, row_tag, cfg.seed)
            if out_dir is not None:
                trainlog.write_csv(Path(out_dir) / f"trainlog_{tag.replace('=', '_')}_{v.name}.csv")
    return table


# ---------------------------------------------------------------- photometric stereo


STEREO_HEADER = ("method", "p_e", "mean_error_deg", "degenerate")


@dataclass(eq=False)
class StereoReport:
    rows: list = field(default_factory=list)  # (method, p_e, mean_error, degenerate)
    estimates: dict = field(default_factory=dict)  # (method, p_e) -> NormalEstimate

    def error(self, method, p_e):
        for m, p, err, _ in self.rows:
            if m == method and p == p_e:
                return err
        raise KeyError((method, p_e))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STEREO_HEADER)
            for method, p_e, err, degenerate in self.rows:
                w.writerow([method, fmt(p_e), fmt(err), degenerate])


def stereo_variants(scfg):
    return [
        Variant(Kind.LISTA_SS, ss_schedule=scfg.ss_schedule),
        Variant(Kind.EBT_LISTA_SS, ss_schedule=scfg.ss_schedule),
    ]


def run_stereo(cfg, out_dir=None, workers=1):
    """Sphere scene, unfolded outlier coders trained at ``p_train``, scored against l_s / l_1.

    The coders are trained on synthetic ``(L_perp e, e)`` pairs whose outliers
    follow the training law at the scene's signal scale.
    """
    scfg = cfg.stereo
    train_law = SparsityLaw.fixed(scfg.p_train)
    scene = sphere_scene(scfg.q, scfg.resolution, train_law, seed=scfg.seed)
    l_perp = null_projector(scene.light_dirs)
    scale = signal_rms(scene)
    variants = stereo_variants(scfg)
    jobs = [(cfg, v, l_perp, scale) for v in variants]
    trained = pool_map(_stereo_train_job, jobs, workers)

    report = StereoReport()
    for i, p_e in enumerate(scfg.p_test):
        rendered = render(scene, seed=[scfg.seed, 3, i], law=SparsityLaw.fixed(p_e))
        truth = scene.normals
        for v, (params, _) in zip(variants, trained):
            def solver(y, params=params, v=v):
                return forward(params, v, l_perp, y).final

            est = estimate_normals(rendered.obs, l_perp, solver, scene.light_dirs, truth)
            report.estimates[(v.name, p_e)] = est
        ls, l1 = baselines(rendered.obs, scene.light_dirs, truth)
        report.estimates[("l_1", p_e)] = l1
        report.estimates[("l_s", p_e)] = ls
        for method in [v.name for v in variants] + ["l_1", "l_s"]:
            est = report.estimates[(method, p_e)]
            report.rows.append((method, float(p_e), est.mean_error, est.degenerate_count))
    if out_dir is not None:
        out_dir = Path(out_dir)
        report.write_csv(out_dir / "stereo.csv")
        for (method, p_e), est in report.estimates.items():
            write_error_map(out_dir / f"error_map_{method}_pe{p_e:g}.csv", scene, est.errors_deg)
    return report


def _stereo_train_job(job):
    cfg, variant, l_perp, scale = job
    scfg = cfg.stereo
    q = l_perp.shape[1]
    law = SparsityLaw.fixed(scfg.p_train)

    def codes(count, seed):
        return outlier_codes(count, q, law, scale, seed)

    val_x = codes(cfg.eval_size, np.random.SeedSequence([cfg.seed, EVAL_STREAM, 3]))
    val = Batch(val_x, observe(l_perp, val_x), None, law, cfg.noise)
    stream = TrainingStream(l_perp, law, batch_size=cfg.train.batch_size, seed=cfg.seed, codes=codes)
    params = init_params(variant, l_perp, scfg.depth, seed=cfg.seed)
    return train_progressive(params, variant, l_perp, stream, val, cfg.train)


# ---------------------------------------------------------------- manifest


def content_hash(text):
    """Git blob hash (sha1 over ``blob <len>\\0`` + content)."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out_dir, cfg, command, wall_time_s, extra=None):
    """``manifest.json``: config, its content hash, seeds, command and wall time.

    The config (with the effective seed) is enough to rerun the command.
    """
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": content_hash(cfg.hash_source()),
        "seeds": {"run": cfg.seed, "problem": cfg.problem.seed, "theory": cfg.theory.seed, "stereo": cfg.stereo.seed},
        "wall_time_s": wall_time_s,
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        self.elapsed = 0.0
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False

