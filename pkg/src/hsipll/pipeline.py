"""End-to-end orchestration: segment, solve, disambiguate, train, evaluate.

A run is driven by a flat key=value config (same parser as the cube header).
``run_pipeline`` executes every stage for ``trials`` repetitions with per-trial
seeds ``seed + t``, writing per-trial reports/maps and an aggregate with mean
and standard deviation of OA/AA/kappa plus the disambiguation accuracy.

``run_stage`` executes a single stage against a cache directory. Each stage's
cache key hashes exactly the upstream-relevant config fields, so changing a
downstream parameter (say gamma) invalidates the solve but not the
segmentation. Staged runs correspond to trial 1 of a pipeline run (effective
seed ``seed + 1``), making stage composition reproduce ``run_pipeline``.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import classifier, evaluation, graph_prior, hsi_data, label_propagation, lra_solver
from . import superpixel
from ._blas import single_threaded_blas
from .errors import ConfigError, StagePrerequisiteError
from .fileio import read_kv_file, write_kv_file

STAGES = ("segment", "solve", "disambiguate", "train", "evaluate")


@dataclass(frozen=True)
class PipelineConfig:
    cube: str
    ground_truth: str
    out: str
    k_target: int = 64
    compactness: float = 0.1
    segment_features: str = "pc1"
    k_neighbors: int = 10
    lam: float = 1.0
    gamma: float = 20.0
    alpha: float = 0.96
    r: int = 1
    train_percent: float = 0.05
    seed: int = 0
    trials: int = 1
    workers: int = 1
    svm_c: float = 100.0
    svm_sigma: str = "median"
    model: str = "svm"
    solver_max_iters: int = 200
    prop_tol: float = 1e-6
    prop_max_rounds: int = 100
    dump_residuals: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.r < 0:
            raise ConfigError(f"r must be non-negative, got {self.r}")
        if not 0.0 < self.train_percent < 1.0:
            raise ConfigError(f"train_percent must be in (0, 1), got {self.train_percent}")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.k_target < 1:
            raise ConfigError(f"k_target must be at least 1, got {self.k_target}")
        if self.segment_features not in ("pc1", "spectrum"):
            raise ConfigError(f"segment_features must be pc1 or spectrum, "
                              f"got {self.segment_features!r}")
        if self.model not in ("svm", "nn"):
            raise ConfigError(f"model must be svm or nn, got {self.model!r}")
        if self.svm_sigma != "median":
            try:
                bw = float(self.svm_sigma)
            except ValueError:
                raise ConfigError(f"svm_sigma must be 'median' or a number, "
                                  f"got {self.svm_sigma!r}") from None
            if bw <= 0:
                raise ConfigError(f"svm_sigma must be positive, got {bw}")


_CONFIG_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
_KEY_ALIASES = {"lambda": "lam"}
_BOOL_FIELDS = {"dump_residuals"}


def parse_config(path: str, overrides: dict | None = None) -> PipelineConfig:
    """Read a key=value config file; unknown keys are config errors."""
    try:
        raw = read_kv_file(path)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    values: dict = {}
    for key, text in raw.items():
        name = _KEY_ALIASES.get(key, key)
        if name not in _CONFIG_TYPES:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        values[name] = _parse_value(name, text, path)
    if overrides:
        values.update(overrides)
    for required in ("cube", "ground_truth", "out"):
        if required not in values:
            raise ConfigError(f"{path}: missing required key {required!r}")
    return PipelineConfig(**values)


def _parse_value(name: str, text: str, source: str):
    kind = _CONFIG_TYPES[name]
    try:
        if name in _BOOL_FIELDS:
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{source}: bad value for {name}: {exc}") from exc


# Upstream-relevant config fields per stage; each extends its prerequisite.
_SEGMENT_FIELDS = ("cube", "k_target", "compactness", "segment_features")
_SOLVE_FIELDS = _SEGMENT_FIELDS + ("k_neighbors", "lam", "gamma", "solver_max_iters")
_DISAMB_FIELDS = _SOLVE_FIELDS + ("ground_truth", "train_percent", "r", "alpha",
                                  "prop_tol", "prop_max_rounds", "seed")
_TRAIN_FIELDS = _DISAMB_FIELDS + ("svm_c", "svm_sigma", "model")
_EVAL_FIELDS = _TRAIN_FIELDS
_STAGE_FIELDS = {
    "segment": _SEGMENT_FIELDS,
    "solve": _SOLVE_FIELDS,
    "disambiguate": _DISAMB_FIELDS,
    "train": _TRAIN_FIELDS,
    "evaluate": _EVAL_FIELDS,
}
_STAGE_PREREQ = {
    "segment": None,
    "solve": "segment",
    "disambiguate": "solve",
    "train": "disambiguate",
    "evaluate": "train",
}


def stage_key(cfg: PipelineConfig, stage: str) -> str:
    text = "\n".join(f"{name}={getattr(cfg, name)}" for name in _STAGE_FIELDS[stage])
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _key_path(cache_dir: str, stage: str) -> str:
    return os.path.join(cache_dir, f"stage_{stage}.key")


_STAGE_ARTIFACTS = {
    "segment": ("segmentation.txt",),
    "solve": ("solutions.npz",),
    "disambiguate": ("candidates.csv", "resolved.csv", "train_indices.txt",
                     "test_indices.txt", "disambiguation.txt"),
    "train": ("model.bin",),
    "evaluate": ("report.txt", "map.ppm"),
}


def _check_prerequisite(cfg: PipelineConfig, stage: str, cache_dir: str) -> None:
    prereq = _STAGE_PREREQ[stage]
    if prereq is None:
        return
    key_file = _key_path(cache_dir, prereq)
    if not os.path.isfile(key_file):
        raise StagePrerequisiteError(
            f"stage {stage!r} needs {prereq!r} artifacts in {cache_dir}; "
            f"run the {prereq!r} stage first")
    with open(key_file, "r", encoding="utf-8") as fh:
        stored = fh.read().strip()
    expected = stage_key(cfg, prereq)
    if stored != expected:
        raise StagePrerequisiteError(
            f"stage {prereq!r} cache in {cache_dir} is stale (key {stored} != "
            f"{expected} for the current config); re-run the {prereq!r} stage")
    for name in _STAGE_ARTIFACTS[prereq]:
        if not os.path.isfile(os.path.join(cache_dir, name)):
            raise StagePrerequisiteError(
                f"stage {prereq!r} artifact {name} missing from {cache_dir}; "
                f"re-run the {prereq!r} stage")


def _cache_hit(cfg: PipelineConfig, stage: str, cache_dir: str) -> bool:
    key_file = _key_path(cache_dir, stage)
    if not os.path.isfile(key_file):
        return False
    with open(key_file, "r", encoding="utf-8") as fh:
        if fh.read().strip() != stage_key(cfg, stage):
            return False
    return all(os.path.isfile(os.path.join(cache_dir, name))
               for name in _STAGE_ARTIFACTS[stage])


def _write_key(cfg: PipelineConfig, stage: str, cache_dir: str) -> None:
    with open(_key_path(cache_dir, stage), "w", encoding="utf-8") as fh:
        fh.write(stage_key(cfg, stage) + "\n")


def solver_config(cfg: PipelineConfig) -> lra_solver.SolverConfig:
    return lra_solver.SolverConfig(lam=cfg.lam, gamma=cfg.gamma,
                                   max_iters=cfg.solver_max_iters)


def solve_blocks(blocks, cfg: PipelineConfig):
    """Solve all superpixels, distributing over cfg.workers threads.

    Results are keyed by block index and merged in index order, so the worker
    count never changes the output.
    """
    scfg = solver_config(cfg)

    def work(block):
        prior = graph_prior.build_laplacian(block, k_neighbors=cfg.k_neighbors)
        return lra_solver.solve(block, prior, scfg)

    if cfg.workers == 1:
        return [work(b) for b in blocks]
    with single_threaded_blas():
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(work, blocks))


def _load_inputs(cfg: PipelineConfig):
    cube = hsi_data.load_cube(cfg.cube)
    gt = hsi_data.load_ground_truth(cfg.ground_truth, cube)
    return cube, gt


def _segment(cfg: PipelineConfig, cube):
    if cfg.segment_features == "spectrum":
        return superpixel.segment_cube(cube, cfg.k_target, cfg.compactness)
    base = superpixel.compute_base_image(cube)
    return superpixel.segment(base, cfg.k_target, cfg.compactness)


def _solve_artifacts(cfg: PipelineConfig, cube, seg, cache_dir: str):
    blocks, pixel_map = superpixel.group_pixels(cube, seg)
    solutions = solve_blocks(blocks, cfg)
    features = classifier.reassemble_denoised(solutions, blocks, cube.height, cube.width)
    arrays = {"features": features.values,
              "converged": np.array([s.converged for s in solutions]),
              "iterations": np.array([s.iterations for s in solutions])}
    for i, sol in enumerate(solutions):
        arrays[f"Z_{i}"] = sol.Z
        arrays[f"E_{i}"] = sol.E
    np.savez(os.path.join(cache_dir, "solutions.npz"), **arrays)
    if cfg.dump_residuals:
        for i, sol in enumerate(solutions):
            lra_solver.dump_residuals(sol, os.path.join(cache_dir, f"residuals_{i}.csv"))
    return blocks, pixel_map, solutions, features


class _SolvedZ:
    """Adapter giving cached Z matrices the solution attribute the affinity needs."""

    def __init__(self, Z):
        self.Z = Z


def _load_solutions(cache_dir: str, n_blocks: int):
    with np.load(os.path.join(cache_dir, "solutions.npz")) as data:
        features_values = data["features"]
        zs = [_SolvedZ(data[f"Z_{i}"]) for i in range(n_blocks)]
    features = classifier.FeatureTable(
        values=features_values,
        pixel_map=np.arange(features_values.shape[0], dtype=np.int64))
    return zs, features


def _disambiguate_trial(cfg: PipelineConfig, gt, solutions, pixel_map, trial_seed: int):
    train_idx, test_idx = hsi_data.split_train_test(gt, cfg.train_percent, trial_seed)
    pset = hsi_data.generate_candidates(train_idx, gt, cfg.r, trial_seed)
    tindex = label_propagation.training_index(train_idx, pixel_map)
    affinity = label_propagation.assemble_affinity(solutions, tindex)
    q0 = label_propagation.init_confidence(pset)
    q = label_propagation.propagate(q0, affinity.G_tr, alpha=cfg.alpha,
                                    max_rounds=cfg.prop_max_rounds, tol=cfg.prop_tol)
    resolved = label_propagation.disambiguate(q, pset)
    accuracy = label_propagation.disambiguation_accuracy(resolved, pset)
    return train_idx, test_idx, pset, resolved, accuracy


def _train_model(cfg: PipelineConfig, features, train_idx, labels):
    train_features = features.restrict(train_idx)
    sigma = cfg.svm_sigma if cfg.svm_sigma == "median" else float(cfg.svm_sigma)
    if cfg.model == "nn":
        return classifier.train_nn(train_features, labels)
    return classifier.train(train_features, labels, C=cfg.svm_c, sigma_mode=sigma)


def _predict(model, features):
    if isinstance(model, classifier.NnModel):
        return classifier.predict_nn(model, features)
    return classifier.predict(model, features)


def _write_report(report, path: str) -> None:
    write_kv_file(path, evaluation.report_lines(report))


def _write_indices(indices, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx in indices:
            fh.write(f"{int(idx)}\n")


def _read_indices(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


def _evaluate_trial(cfg: PipelineConfig, gt, model, features, test_idx, trial_dir: str):
    pred = _predict(model, features)
    report = evaluation.evaluate(pred, gt, test_idx)
    rendered = evaluation.render_map(pred, gt)
    _write_report(report, os.path.join(trial_dir, "report.txt"))
    with open(os.path.join(trial_dir, "map.ppm"), "w", encoding="utf-8") as fh:
        fh.write(rendered.text)
    if rendered.warnings:
        with open(os.path.join(trial_dir, "render_warnings.txt"), "w", encoding="utf-8") as fh:
            for w in rendered.warnings:
                fh.write(w + "\n")
    return report


def run_stage(stage: str, cfg: PipelineConfig, cache_dir: str):
    """Execute one stage against the cache; returns (artifact paths, from_cache).

    The staged path corresponds to trial 1 of run_pipeline (seed + 1).
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    os.makedirs(cache_dir, exist_ok=True)
    _check_prerequisite(cfg, stage, cache_dir)
    paths = tuple(os.path.join(cache_dir, name) for name in _STAGE_ARTIFACTS[stage])
    if _cache_hit(cfg, stage, cache_dir):
        return paths, True

    trial_seed = cfg.seed + 1
    if stage == "segment":
        cube, _ = _load_inputs(cfg)
        seg = _segment(cfg, cube)
        superpixel.save_segmentation(seg, paths[0])
    elif stage == "solve":
        cube, _ = _load_inputs(cfg)
        seg = superpixel.load_segmentation(os.path.join(cache_dir, "segmentation.txt"))
        _solve_artifacts(cfg, cube, seg, cache_dir)
    elif stage == "disambiguate":
        cube, gt = _load_inputs(cfg)
        seg = superpixel.load_segmentation(os.path.join(cache_dir, "segmentation.txt"))
        _, pixel_map = superpixel.group_pixels(cube, seg)
        solutions, _ = _load_solutions(cache_dir, seg.n_superpixels)
        train_idx, test_idx, pset, resolved, accuracy = _disambiguate_trial(
            cfg, gt, solutions, pixel_map, trial_seed)
        hsi_data.save_candidates(pset, os.path.join(cache_dir, "candidates.csv"))
        label_propagation.save_resolved(pset, resolved, os.path.join(cache_dir, "resolved.csv"))
        _write_indices(train_idx, os.path.join(cache_dir, "train_indices.txt"))
        _write_indices(test_idx, os.path.join(cache_dir, "test_indices.txt"))
        write_kv_file(os.path.join(cache_dir, "disambiguation.txt"),
                      [("disambiguation_accuracy", repr(accuracy))])
    elif stage == "train":
        if cfg.model == "nn":
            raise ConfigError("staged train/evaluate supports only model = svm "
                              "(the nn fallback has no save format)")
        seg = superpixel.load_segmentation(os.path.join(cache_dir, "segmentation.txt"))
        _, features = _load_solutions(cache_dir, seg.n_superpixels)
        train_idx, labels = label_propagation.load_resolved(
            os.path.join(cache_dir, "resolved.csv"))
        model = _train_model(cfg, features, train_idx, labels)
        classifier.save_model(model, os.path.join(cache_dir, "model.bin"))
    elif stage == "evaluate":
        cube, gt = _load_inputs(cfg)
        seg = superpixel.load_segmentation(os.path.join(cache_dir, "segmentation.txt"))
        _, features = _load_solutions(cache_dir, seg.n_superpixels)
        model = classifier.load_model(os.path.join(cache_dir, "model.bin"))
        test_idx = _read_indices(os.path.join(cache_dir, "test_indices.txt"))
        _evaluate_trial(cfg, gt, model, features, test_idx, cache_dir)

    _write_key(cfg, stage, cache_dir)
    return paths, False


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def run_pipeline(cfg: PipelineConfig) -> str:
    """Run every stage for cfg.trials trials; returns the run directory.

    The segmentation and per-superpixel solves involve no trial randomness, so
    they are computed once (through the stage cache) and shared by all trials.
    A failed trial is recorded in the aggregate and the remaining trials
    continue; if every trial fails the last error is re-raised.
    """
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    run_stage("segment", cfg, out)
    run_stage("solve", cfg, out)

    cube, gt = _load_inputs(cfg)
    seg = superpixel.load_segmentation(os.path.join(out, "segmentation.txt"))
    _, pixel_map = superpixel.group_pixels(cube, seg)
    solutions, features = _load_solutions(out, seg.n_superpixels)

    results = []   # (trial, report, disamb_accuracy) for completed trials
    failures = []  # (trial, message)
    last_error = None
    for t in range(1, cfg.trials + 1):
        trial_dir = os.path.join(out, f"trial_{t:02d}")
        os.makedirs(trial_dir, exist_ok=True)
        try:
            train_idx, test_idx, pset, resolved, accuracy = _disambiguate_trial(
                cfg, gt, solutions, pixel_map, cfg.seed + t)
            hsi_data.save_candidates(pset, os.path.join(trial_dir, "candidates.csv"))
            label_propagation.save_resolved(pset, resolved,
                                            os.path.join(trial_dir, "resolved.csv"))
            write_kv_file(os.path.join(trial_dir, "disambiguation.txt"),
                          [("disambiguation_accuracy", repr(accuracy))])
            model = _train_model(cfg, features, train_idx, resolved)
            report = _evaluate_trial(cfg, gt, model, features, test_idx, trial_dir)
            results.append((t, report, accuracy))
        except Exception as exc:  # a failed trial must not sink the others
            failures.append((t, f"{type(exc).__name__}: {exc}"))
            last_error = exc
    if not results and last_error is not None:
        raise last_error

    oa_mean, oa_std = _mean_std([r.oa for _, r, _ in results])
    aa_mean, aa_std = _mean_std([r.aa for _, r, _ in results])
    kappa_mean, kappa_std = _mean_std([r.kappa for _, r, _ in results])
    dis_mean, dis_std = _mean_std([acc for _, _, acc in results])
    lines = [("trials", cfg.trials), ("completed", len(results)),
             ("oa_mean", repr(oa_mean)), ("oa_std", repr(oa_std)),
             ("aa_mean", repr(aa_mean)), ("aa_std", repr(aa_std)),
             ("kappa_mean", repr(kappa_mean)), ("kappa_std", repr(kappa_std)),
             ("disamb_mean", repr(dis_mean)), ("disamb_std", repr(dis_std))]
    status = {t: "ok" for t, _, _ in results}
    status.update({t: f"failed: {msg}" for t, msg in failures})
    for t in range(1, cfg.trials + 1):
        lines.append((f"trial_{t:02d}_status", status[t]))
    for t, report, accuracy in results:
        lines.append((f"trial_{t:02d}_oa", repr(report.oa)))
        lines.append((f"trial_{t:02d}_disamb", repr(accuracy)))
    write_kv_file(os.path.join(out, "aggregate.txt"), lines)
    return out


def sweep(cfg: PipelineConfig, lambdas, gammas, out_dir: str) -> str:
    """Grid driver over (lambda, gamma); one pipeline run per combination."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for lam in lambdas:
        for gamma in gammas:
            sub = os.path.join(out_dir, f"lam_{lam:g}_gamma_{gamma:g}")
            sub_cfg = replace(cfg, lam=lam, gamma=gamma, out=sub)
            run_pipeline(sub_cfg)
            agg = read_kv_file(os.path.join(sub, "aggregate.txt"))
            rows.append((lam, gamma, agg["oa_mean"], agg["oa_std"]))
    summary = os.path.join(out_dir, "sweep_summary.txt")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("lambda\tgamma\toa_mean\toa_std\n")
        for lam, gamma, oa_mean, oa_std in rows:
            fh.write(f"{lam:g}\t{gamma:g}\t{oa_mean}\t{oa_std}\n")
    return summary
