"""Pipeline stages behind the CLI subcommands.

Every stage is restartable: finished artifacts are left alone unless
``force`` is set. Randomness is keyed by grid position, and results are
reduced in task order, so the worker count never changes the numbers.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import svg
from .config import PipelineConfig
from .dann import DannModel, load_checkpoint, save_checkpoint, train
from .dataset import (
    _basis,
    labeled_manifest,
    load_records,
    materialize,
    save_records,
    sign_fix,
    solve_realization,
    unlabeled_manifest,
)
from .errors import CapacityError, InsufficientLevelsError, MissingArtifactError, MblDannError
from .scaling import (
    AveragedCurve,
    CurvePoint,
    collapse_fit,
    mean_and_std,
    phase_boundary,
    read_boundary_csv,
    uncertainty_width,
    write_boundary_csv,
)
from .spectrum import R_POISSON, R_WIGNER_DYSON, energy_window, gap_ratio, select_indices
from .spin_chain import derive_seed

log = logging.getLogger(__name__)

STREAM_PREDICT, STREAM_BASELINE = 3, 4


class WorkerPool:
    """Order-preserving map over a fixed-size process pool (inline for one worker)."""

    def __init__(self, workers: int = 1, chunk: int = 8):
        self.workers = workers
        self.chunk = chunk
        self._ex = None

    def __enter__(self):
        if self.workers > 1:
            self._ex = ProcessPoolExecutor(self.workers)
        return self

    def __exit__(self, exc_type, exc, tb):
        if self._ex is not None:
            # drain in-flight tasks; drop queued ones on error or interrupt
            self._ex.shutdown(wait=True, cancel_futures=exc_type is not None)
            self._ex = None
        return False

    def map(self, fn, tasks):
        if self._ex is None:
            yield from map(fn, tasks)
            return
        tasks = list(tasks)
        step = self.chunk * self.workers
        for i in range(0, len(tasks), step):
            yield from self._ex.map(fn, tasks[i:i + step])


class Artifacts:
    def __init__(self, out_dir):
        self.root = Path(out_dir)

    def labeled(self, n):
        return self.root / "data" / f"labeled_N{n}.mbls"

    def unlabeled(self, n):
        return self.root / "data" / f"unlabeled_N{n}.mbls"

    def checkpoint(self, n):
        return self.root / "models" / f"dann_N{n}.ckpt"

    def train_log(self, n):
        return self.root / "models" / f"train_log_N{n}.csv"

    def predictions(self, n):
        return self.root / "predict" / f"p_mbl_N{n}.csv"

    def baseline(self, n):
        return self.root / "baseline" / f"gap_ratio_N{n}.csv"

    def baseline_svg(self, n):
        return self.root / "baseline" / f"gap_ratio_N{n}.svg"

    def boundary(self):
        return self.root / "collapse" / "boundary.csv"

    def widths(self):
        return self.root / "collapse" / "uncertainty_width.csv"

    def phase_diagram_svg(self, n):
        return self.root / "report" / f"phase_diagram_N{n}.svg"

    def collapse_svg(self, eps):
        return self.root / "report" / f"collapse_eps{eps:g}.svg"


def ensure_dir(path: Path):
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write to output directory {path}: {exc.strerror}") from exc


def _require(path: Path, command: str):
    if not path.exists():
        raise MissingArtifactError(path, command)


# --- phase diagrams ------------------------------------------------------------

DIAGRAM_COLUMNS = ("n_sites", "eps", "h", "mean", "s", "n")


@dataclass
class PhaseDiagram:
    """Disorder-averaged values on a rectangular (eps, h) grid; ``n == 0`` marks a missing cell."""

    n_sites: int
    h_values: tuple
    eps_values: tuple
    mean: np.ndarray  # (n_eps, n_h)
    std: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_samples(cls, n_sites, h_values, eps_values, samples):
        """``samples[(eps_index, h_index)]`` is the list of per-realization values."""
        ne, nh = len(eps_values), len(h_values)
        mean = np.full((ne, nh), math.nan)
        std = np.full((ne, nh), math.nan)
        counts = np.zeros((ne, nh), int)
        for (i, j), values in samples.items():
            if values:
                mean[i, j], std[i, j] = mean_and_std(values)
                counts[i, j] = len(values)
        return cls(n_sites, tuple(h_values), tuple(eps_values), mean, std, counts)

    def curve(self, eps) -> AveragedCurve:
        i = self.eps_values.index(eps)
        pts = tuple(
            CurvePoint(h, float(self.mean[i, j]), float(self.std[i, j]), int(self.counts[i, j]))
            for j, h in enumerate(self.h_values) if self.counts[i, j] > 0
        )
        return AveragedCurve(self.n_sites, eps, pts)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DIAGRAM_COLUMNS)
            for i, eps in enumerate(self.eps_values):
                for j, h in enumerate(self.h_values):
                    m, s, n = self.mean[i, j], self.std[i, j], self.counts[i, j]
                    w.writerow([
                        self.n_sites, repr(float(eps)), repr(float(h)),
                        "" if n == 0 else repr(float(m)),
                        "" if math.isnan(s) else repr(float(s)),
                        int(n),
                    ])

    @classmethod
    def read_csv(cls, path) -> "PhaseDiagram":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise MblDannError(f"{path} holds no cells")
        eps_values = tuple(sorted({float(r["eps"]) for r in rows}))
        h_values = tuple(sorted({float(r["h"]) for r in rows}))
        ne, nh = len(eps_values), len(h_values)
        mean = np.full((ne, nh), math.nan)
        std = np.full((ne, nh), math.nan)
        counts = np.zeros((ne, nh), int)
        for r in rows:
            i, j = eps_values.index(float(r["eps"])), h_values.index(float(r["h"]))
            counts[i, j] = int(r["n"])
            if r["mean"]:
                mean[i, j] = float(r["mean"])
            if r["s"]:
                std[i, j] = float(r["s"])
        return cls(int(rows[0]["n_sites"]), h_values, eps_values, mean, std, counts)


# --- workers (top level so they pickle) ---------------------------------------

def _solve(n_sites, h, seed, boundary):
    try:
        return solve_realization(n_sites, h, seed, boundary)
    except CapacityError as exc:
        raise CapacityError(f"{exc} at N={n_sites}, h={h}") from exc


def _state_task(task):
    n_sites, boundary, h, seed, eps_values, k = task
    spec = _solve(n_sites, h, seed, boundary)
    out = np.empty((len(eps_values), k, spec.dim), np.float32)
    for i, eps in enumerate(eps_values):
        for j, idx in enumerate(select_indices(spec, eps, k)):
            out[i, j] = sign_fix(spec.eigenvectors[:, idx])
    return out


def _baseline_task(task):
    n_sites, boundary, h, seed, eps_values, half_width = task
    spec = _solve(n_sites, h, seed, boundary)
    out = []
    for eps in eps_values:
        try:
            out.append(gap_ratio(spec, energy_window(eps, half_width)).r_mean)
        except InsufficientLevelsError:
            out.append(math.nan)
    return out


def _realization_tasks(cfg, n_sites, h_values, realizations, stream, payload):
    for j, h in enumerate(h_values):
        for r in range(realizations):
            seed = derive_seed(cfg.master_seed, stream, j, r)
            yield (j, r), (n_sites, cfg.boundary, h, seed, *payload)


# --- commands -----------------------------------------------------------------

def cmd_generate(cfg: PipelineConfig, force: bool = False) -> list:
    art = Artifacts(cfg.out_dir)
    ensure_dir(art.labeled(0).parent)
    written = []
    with WorkerPool(cfg.workers) as pool:
        for n in cfg.n_sites:
            _basis(n)
            for path, make in (
                (art.labeled(n), labeled_manifest),
                (art.unlabeled(n), unlabeled_manifest),
            ):
                if path.exists() and not force:
                    log.info("skip %s (exists)", path)
                    continue
                realizations = (cfg.labeled_realizations if make is labeled_manifest
                                else cfg.unlabeled_realizations)
                manifest = make(cfg.scale, cfg.master_seed, n, cfg.grid, realizations, cfg.boundary)
                log.info("generating %s: %s", path.name, manifest.counts)
                records = materialize(manifest, pool.map)
                save_records(path, records, manifest)
                written.append(path)
    return written


def cmd_baseline(cfg: PipelineConfig, force: bool = False) -> list:
    art = Artifacts(cfg.out_dir)
    ensure_dir(art.baseline(0).parent)
    b = cfg.baseline
    written = []
    with WorkerPool(cfg.workers) as pool:
        for n in cfg.n_sites:
            path = art.baseline(n)
            if path.exists() and not force:
                log.info("skip %s (exists)", path)
                continue
            keyed = list(_realization_tasks(cfg, n, b.h, b.realizations, STREAM_BASELINE,
                                            (tuple(b.eps), b.window)))
            samples = {(i, j): [] for i in range(len(b.eps)) for j in range(len(b.h))}
            for ((j, _), _), rs in zip(keyed, pool.map(_baseline_task, [t for _, t in keyed])):
                for i, r in enumerate(rs):
                    if math.isfinite(r):
                        samples[(i, j)].append(r)
            diagram = PhaseDiagram.from_samples(n, b.h, b.eps, samples)
            diagram.write_csv(path)
            svg.write_atomic(art.baseline_svg(n), svg.heatmap(
                diagram.h_values, diagram.eps_values, diagram.mean.tolist(),
                R_POISSON, R_WIGNER_DYSON, f"mean gap ratio r, N={n}", label="r",
            ))
            written.append(path)
    return written


def cmd_train(cfg: PipelineConfig, force: bool = False) -> list:
    art = Artifacts(cfg.out_dir)
    written = []
    for n in cfg.n_sites:
        ckpt = art.checkpoint(n)
        if ckpt.exists() and not force:
            log.info("skip %s (exists)", ckpt)
            continue
        _require(art.labeled(n), "generate")
        _require(art.unlabeled(n), "generate")
        labeled, _ = load_records(art.labeled(n))
        unlabeled, _ = load_records(art.unlabeled(n))
        ensure_dir(ckpt.parent)
        model = DannModel.for_sites(n, cfg.train)
        log.info("training N=%d on %d labeled / %d unlabeled states", n, len(labeled), len(unlabeled))
        result = train(model, labeled, unlabeled, cfg.train, log_path=art.train_log(n))
        save_checkpoint(ckpt, result.model, cfg.train)
        written.append(ckpt)
    return written


def predict_diagram(cfg: PipelineConfig, model: DannModel, pool: WorkerPool) -> PhaseDiagram:
    p = cfg.predict
    n = model.n_sites
    keyed = list(_realization_tasks(cfg, n, p.h, p.realizations, STREAM_PREDICT,
                                    (tuple(p.eps), p.k)))
    samples = {(i, j): [] for i in range(len(p.eps)) for j in range(len(p.h))}
    for ((j, _), _), states in zip(keyed, pool.map(_state_task, [t for _, t in keyed])):
        ne, k, dim = states.shape
        probs = model.phase_proba(states.reshape(ne * k, dim))[:, 1].reshape(ne, k)
        for i in range(ne):
            samples[(i, j)].append(math.fsum(probs[i].tolist()) / k)
    return PhaseDiagram.from_samples(n, p.h, p.eps, samples)


def cmd_predict(cfg: PipelineConfig, force: bool = False) -> list:
    art = Artifacts(cfg.out_dir)
    written = []
    with WorkerPool(cfg.workers) as pool:
        for n in cfg.n_sites:
            path = art.predictions(n)
            if path.exists() and not force:
                log.info("skip %s (exists)", path)
                continue
            _require(art.checkpoint(n), "train")
            model, _ = load_checkpoint(art.checkpoint(n))
            ensure_dir(path.parent)
            predict_diagram(cfg, model, pool).write_csv(path)
            written.append(path)
    return written


def _load_diagrams(cfg, art):
    diagrams = {}
    for n in cfg.n_sites:
        _require(art.predictions(n), "predict")
        diagrams[n] = PhaseDiagram.read_csv(art.predictions(n))
    return diagrams


def collapse_results(cfg: PipelineConfig, diagrams: dict) -> dict:
    c = cfg.collapse
    results = {}
    for eps in c.eps:
        curves = [d.curve(eps) for d in diagrams.values() if eps in d.eps_values]
        curves = [cv for cv in curves if len(cv.points) >= 2]
        if len({cv.n_sites for cv in curves}) < 2:
            log.warning("eps=%g: fewer than two sizes with predictions, skipped", eps)
            continue
        results[eps] = collapse_fit(curves, c.hc_grid, c.nu_grid, eps=eps,
                                    error_factor=c.error_factor, value_band=c.value_band)
    return results


def cmd_collapse(cfg: PipelineConfig, force: bool = False) -> list:
    art = Artifacts(cfg.out_dir)
    path = art.boundary()
    if path.exists() and not force:
        log.info("skip %s (exists)", path)
        return []
    diagrams = _load_diagrams(cfg, art)
    ensure_dir(path.parent)
    rows = phase_boundary(collapse_results(cfg, diagrams))
    write_boundary_csv(path, rows)
    with open(art.widths(), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n_sites", "eps", "width"))
        for n, d in sorted(diagrams.items()):
            for eps in d.eps_values:
                try:
                    width = uncertainty_width(d.curve(eps), cfg.collapse.band)
                except MblDannError:
                    width = math.nan
                w.writerow([n, repr(float(eps)), "" if math.isnan(width) else repr(width)])
    return [path, art.widths()]


def cmd_report(cfg: PipelineConfig, force: bool = False) -> list:
    art = Artifacts(cfg.out_dir)
    diagrams = _load_diagrams(cfg, art)
    if any(not d.counts.any() for d in diagrams.values()):
        raise MblDannError("prediction set is empty; nothing to report")
    boundary = read_boundary_csv(art.boundary()) if art.boundary().exists() else []
    ensure_dir(art.phase_diagram_svg(0).parent)
    # render everything before writing anything, so a failure leaves no partial output
    pages = {}
    for n, d in sorted(diagrams.items()):
        pages[art.phase_diagram_svg(n)] = svg.heatmap(
            d.h_values, d.eps_values, d.mean.tolist(), 0.0, 1.0,
            f"network output p_mbl, N={n}", points=[(r.h_c, r.eps) for r in boundary],
            label="p_mbl",
        )
    fits = {r.eps: r for r in boundary}
    eps_all = sorted(set.intersection(*(set(d.eps_values) for d in diagrams.values())))
    for eps in eps_all:
        if fits and eps not in fits:
            continue
        curves = [d.curve(eps) for _, d in sorted(diagrams.items())]
        curves = [c for c in curves if c.points]
        if not curves:
            continue
        inset = None
        if eps in fits:
            fit = fits[eps]
            inset = [(f"N={c.n_sites}", (c.n_sites ** (1 / fit.nu) * (c.h - fit.h_c)).tolist(),
                      c.mean.tolist()) for c in curves]
        title = f"eps={eps:g}" + (f", h_c={fits[eps].h_c:.2f}, nu={fits[eps].nu:.2f}"
                                  if eps in fits else "")
        pages[art.collapse_svg(eps)] = svg.curve_plot(curves, title, inset)
    written = []
    for path, text in pages.items():
        if path.exists() and not force:
            continue
        svg.write_atomic(path, text)
        written.append(path)
    return written


COMMANDS = {
    "generate": cmd_generate,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "predict": cmd_predict,
    "collapse": cmd_collapse,
    "report": cmd_report,
}
