"""Diagnostics over recorded episodes: associative-memory energy, principal
components of the weight trajectory, synaptic-variation traces, and spatial
selectivity maps.  Everything here is a pure function over recorded arrays;
outputs are exported as CSV files with documented headers so rendering can
live in a separate tool.

Recordings are ``.npz`` files (one per episode, written by the evaluation
command with weight recording enabled) holding:

    w          (T+1, n, n)  weights before the episode and after each step
    v          (T, n)       plastic activation per step
    rewards    (T,)
    actions    (T,)
    label      str          episode tag (e.g. first-trial outcome)
    positions  (T, 2)       agent cell at observation time (grid tasks only)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import Array, rng_from


class AnalysisDataError(RuntimeError):
    """Missing or unusable recordings."""


# ---------------------------------------------------------------------------
# Core quantities
# ---------------------------------------------------------------------------


def hopfield_energy(w: Array, v1: Array, v2: Array) -> float:
    """Bilinear associative-memory energy -v1' W v2."""
    w = np.asarray(w)
    v1 = np.asarray(v1)
    v2 = np.asarray(v2)
    if w.ndim != 2 or w.shape != (v1.shape[0], v2.shape[0]):
        raise ValueError(f"shape mismatch: W {w.shape}, v1 {v1.shape}, v2 {v2.shape}")
    return -float(v1 @ w @ v2)


@dataclass
class WeightTrajectory:
    """Chronological flattened weight snapshots of one episode."""

    snapshots: Array              # (count, n*n)
    steps: Array                  # (count,) step indices, increasing
    label: str = ""
    episode: int = 0

    def validate(self) -> None:
        if self.snapshots.ndim != 2 or len(self.snapshots) != len(self.steps):
            raise ValueError("snapshots must be (count, dim) aligned with steps")
        if np.any(np.diff(self.steps) <= 0):
            raise ValueError("steps must be strictly increasing")


@dataclass
class PcaResult:
    components: Array             # (k, dim) orthonormal rows
    eigenvalues: Array            # (k,) descending
    ratios: Array                 # (k,) eigenvalue / total variance
    mean: Array                   # (dim,)
    projections: list             # per trajectory: (count, k)
    note: str = ""

    def project(self, data: Array) -> Array:
        return (np.asarray(data) - self.mean) @ self.components.T


def _power_iteration(x_centered: Array, n_components: int, rng,
                     iters: int = 500, tol: float = 1e-12) -> tuple:
    """Leading eigenpairs of cov = X'X/(m-1) without forming it (dim x dim
    may be large); deflation after each extracted component."""
    x = x_centered.copy()
    m, dim = x.shape
    denom = max(m - 1, 1)
    total = float(np.sum(x * x)) / denom
    comps, eigs = [], []
    note = ""
    for _ in range(n_components):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = (x.T @ (x @ v)) / denom
            norm = np.linalg.norm(w)
            if norm <= total * 1e-15 or norm == 0.0:
                lam = 0.0
                break
            v_new = w / norm
            lam = float(norm)
            if np.linalg.norm(v_new - v) < tol:
                v = v_new
                break
            v = v_new
        if lam <= max(total, 1.0) * 1e-12:
            note = (f"rank exhausted after {len(comps)} components "
                    f"(requested {n_components})")
            break
        # deterministic sign: largest-magnitude coordinate positive
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        comps.append(v)
        eigs.append(lam)
        x -= np.outer(x @ v, v)
    return (np.array(comps) if comps else np.zeros((0, dim)),
            np.array(eigs), total, note)


def pca(trajectories: list[WeightTrajectory], k: int, seed: int = 0,
        iters: int = 500) -> PcaResult:
    """Mean-centered principal components over all snapshots, plus each
    trajectory's projected path.  If the data rank is below ``k`` the
    achievable components are returned with a note."""
    if not trajectories:
        raise AnalysisDataError("no trajectories to analyze")
    for tr in trajectories:
        tr.validate()
    x = np.vstack([tr.snapshots for tr in trajectories])
    if len(x) < 2:
        raise AnalysisDataError("need at least 2 snapshots for components")
    if k < 1 or k > x.shape[1]:
        raise ValueError(f"k must be in 1..{x.shape[1]}")
    mean = x.mean(axis=0)
    comps, eigs, total, note = _power_iteration(x - mean, k,
                                                rng_from([seed, 0x9CA]), iters=iters)
    ratios = eigs / total if total > 0 else np.zeros_like(eigs)
    projections = [(tr.snapshots - mean) @ comps.T for tr in trajectories]
    return PcaResult(components=comps, eigenvalues=eigs, ratios=ratios,
                     mean=mean, projections=projections, note=note)


def synaptic_variation(w_seq: Array) -> Array:
    """Per-step, per-neuron total synaptic change: out[t, i] =
    sum_j |W[t+1, i, j] - W[t, i, j]| for consecutive snapshots."""
    w = np.asarray(w_seq, dtype=np.float64)
    if w.ndim == 2:                      # flattened (count, n*n)
        n = int(round(np.sqrt(w.shape[1])))
        w = w.reshape(len(w), n, n)
    if w.ndim != 3 or len(w) < 2:
        raise ValueError("need >= 2 square snapshots")
    return np.abs(np.diff(w, axis=0)).sum(axis=2)


@dataclass
class SelectivityMap:
    """Mean activation of one neuron per grid cell; NaN where never visited."""

    neuron: int
    mean: Array                   # (rows, cols), NaN marks absent cells
    visits: Array                 # (rows, cols) int

    def score(self) -> float:
        """Peak-to-average selectivity over visited cells (0 if degenerate)."""
        vals = self.mean[self.visits > 0]
        if vals.size == 0:
            return 0.0
        base = float(np.abs(vals).mean())
        if base == 0.0:
            return 0.0
        return float(np.abs(vals).max() / base)


def selectivity(episodes: list[tuple[Array, Array]],
                grid_shape: tuple[int, int]) -> list[SelectivityMap]:
    """Visit-normalized mean activation per cell, one map per neuron.

    ``episodes`` holds (positions (T,2), activations (T,n)) pairs; positions
    index cells of a ``grid_shape`` board.
    """
    if not episodes:
        raise AnalysisDataError("no recorded episodes with positions")
    n = np.asarray(episodes[0][1]).shape[1]
    sums = np.zeros(grid_shape + (n,))
    visits = np.zeros(grid_shape, dtype=np.int64)
    for positions, acts in episodes:
        positions = np.asarray(positions, dtype=np.int64)
        acts = np.asarray(acts, dtype=np.float64)
        if len(positions) != len(acts):
            raise ValueError("positions and activations disagree on length")
        if positions.size and (positions.min() < 0
                               or positions[:, 0].max() >= grid_shape[0]
                               or positions[:, 1].max() >= grid_shape[1]):
            raise ValueError("position outside the grid")
        for (r, c), a in zip(positions, acts):
            sums[r, c] += a
            visits[r, c] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / visits[..., None]
    means[visits == 0] = np.nan
    return [SelectivityMap(neuron=i, mean=means[..., i], visits=visits.copy())
            for i in range(n)]


@dataclass
class EnergyGrid:
    """Associative energy sampled on the plane of the top-2 activation
    components, +-extent_sigma around the activation mean."""

    a: Array                      # (resolution,) coordinates along component 1
    b: Array                      # (resolution,) along component 2
    energy: Array                 # (resolution, resolution), energy[i, j] at (a[i], b[j])
    components: Array             # (2, n)
    sigmas: tuple[float, float]


def energy_grid(w: Array, activations: Array, extent_sigma: float = 3.0,
                resolution: int = 41, seed: int = 0) -> EnergyGrid:
    acts = np.asarray(activations, dtype=np.float64)
    if acts.ndim != 2 or len(acts) < 2:
        raise ValueError("need >= 2 activation samples")
    tr = WeightTrajectory(acts, np.arange(len(acts)))
    res = pca([tr], k=min(2, acts.shape[1]), seed=seed)
    if len(res.components) < 2:
        raise AnalysisDataError("activation trajectory has rank < 2; "
                                "no 2-D energy plane")
    u1, u2 = res.components
    s1, s2 = np.sqrt(res.eigenvalues[:2])
    center = res.mean
    a = np.linspace(-extent_sigma * s1, extent_sigma * s1, resolution)
    b = np.linspace(-extent_sigma * s2, extent_sigma * s2, resolution)
    pts = (center[None, None, :] + a[:, None, None] * u1[None, None, :]
           + b[None, :, None] * u2[None, None, :])
    flat = pts.reshape(-1, pts.shape[-1])
    e = -np.einsum("gi,ij,gj->g", flat, np.asarray(w), flat)
    return EnergyGrid(a=a, b=b, energy=e.reshape(resolution, resolution),
                      components=res.components[:2],
                      sigmas=(float(s1), float(s2)))


# ---------------------------------------------------------------------------
# Recording files and CSV exports
# ---------------------------------------------------------------------------


def save_recording(path: Path | str, traj, label: str = "") -> None:
    """Persist one recorded episode (see module docstring for keys)."""
    if traj.w_snapshots is None or traj.v_snapshots is None:
        raise AnalysisDataError("trajectory was not recorded with weights")
    arrays = {
        "w": np.stack(traj.w_snapshots),
        "v": np.stack(traj.v_snapshots),
        "rewards": np.asarray(traj.rewards, dtype=np.float64),
        "actions": np.asarray(traj.actions, dtype=np.int64),
        "label": np.array(label),
    }
    if traj.positions is not None:
        arrays["positions"] = np.asarray(traj.positions, dtype=np.int64)
    np.savez_compressed(path, **arrays)


def load_recordings(run_dir: Path | str) -> list[dict]:
    rec_dir = Path(run_dir) / "recordings"
    files = sorted(rec_dir.glob("episode_*.npz"))
    if not files:
        raise AnalysisDataError(
            f"no recordings under {rec_dir}; rerun evaluation with "
            f"--record-weights to produce them")
    out = []
    for i, f in enumerate(files):
        with np.load(f, allow_pickle=False) as z:
            rec = {k: z[k] for k in z.files}
        rec["episode"] = i
        out.append(rec)
    return out


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    return path


def export_pca_csv(path: Path, result: PcaResult,
                   trajectories: list[WeightTrajectory]) -> Path:
    k = len(result.components)
    header = ["episode", "step", "label"] + [f"pc{i+1}" for i in range(k)]
    rows = []
    for tr, proj in zip(trajectories, result.projections):
        for step, point in zip(tr.steps, proj):
            rows.append([tr.episode, int(step), tr.label]
                        + [repr(float(x)) for x in point])
    return _write_csv(path, header, rows)


def export_pca_variance_csv(path: Path, result: PcaResult) -> Path:
    rows = [[i + 1, repr(float(result.eigenvalues[i])),
             repr(float(result.ratios[i]))]
            for i in range(len(result.eigenvalues))]
    return _write_csv(path, ["component", "eigenvalue", "ratio"], rows)


def export_energy_csv(path: Path, grids: list[tuple[int, EnergyGrid]]) -> Path:
    rows = []
    for episode, grid in grids:
        for i, av in enumerate(grid.a):
            for j, bv in enumerate(grid.b):
                rows.append([episode, repr(float(av)), repr(float(bv)),
                             repr(float(grid.energy[i, j]))])
    return _write_csv(path, ["episode", "a", "b", "energy"], rows)


def export_variation_csv(path: Path, episodes: list[tuple[int, Array, Array]]) -> Path:
    """Rows of (episode, step, reward, neuron, variation); ``episodes`` holds
    (episode_index, rewards (T,), variation (T, n)) triples."""
    rows = []
    for episode, rewards, var in episodes:
        for t in range(var.shape[0]):
            for i in range(var.shape[1]):
                rows.append([episode, t + 1, repr(float(rewards[t])), i,
                             repr(float(var[t, i]))])
    return _write_csv(path, ["episode", "step", "reward", "neuron", "variation"],
                      rows)


def export_selectivity_csv(path: Path, smap: SelectivityMap) -> Path:
    rows = []
    for r in range(smap.mean.shape[0]):
        for c in range(smap.mean.shape[1]):
            n = int(smap.visits[r, c])
            rows.append([r, c, n, repr(float(smap.mean[r, c])) if n else ""])
    return _write_csv(path, ["row", "col", "visits", "mean_activation"], rows)


def analyze_run(run_dir: Path | str, out_dir: Path | str | None = None,
                k_components: int = 2, n_selectivity: int = 8,
                reward_eps: float = 1e-9) -> list[Path]:
    """Build the full CSV bundle for one run directory from its recordings.

    Grid-task recordings (with positions) produce selectivity maps for the
    ``n_selectivity`` most selective neurons; others produce weight-PCA,
    synaptic-variation and energy-grid exports.
    """
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    recs = load_recordings(run_dir)
    written: list[Path] = []

    if "positions" in recs[0]:
        size = int(max(int(r["positions"].max()) for r in recs)) + 1
        episodes = [(r["positions"], r["v"]) for r in recs]
        maps = selectivity(episodes, (size, size))
        ranked = sorted(maps, key=lambda m: m.score(), reverse=True)
        for smap in ranked[:n_selectivity]:
            written.append(export_selectivity_csv(
                out / f"selectivity_{smap.neuron}.csv", smap))
        return written

    trajectories = []
    for r in recs:
        w = r["w"]
        label = str(r.get("label", ""))
        trajectories.append(WeightTrajectory(
            snapshots=w.reshape(len(w), -1),
            steps=np.arange(len(w)),
            label=label,
            episode=int(r["episode"])))
    res = pca(trajectories, k=k_components)
    written.append(export_pca_csv(out / "pca.csv", res, trajectories))
    written.append(export_pca_variance_csv(out / "pca_variance.csv", res))

    var_rows = [(int(r["episode"]), r["rewards"], synaptic_variation(r["w"]))
                for r in recs]
    written.append(export_variation_csv(out / "synaptic_variation.csv", var_rows))

    pooled_v = np.vstack([r["v"] for r in recs])
    grids = []
    for r in recs:
        basis = energy_grid(r["w"][-1], pooled_v)
        grids.append((int(r["episode"]), basis))
    written.append(export_energy_csv(out / "energy_grid.csv", grids))

    # reported, not asserted: weight change concentrates on rewarded steps
    rewarded, silent = [], []
    for _, rewards, var in var_rows:
        step_tot = var.sum(axis=1)
        mask = np.abs(rewards) > reward_eps
        rewarded.extend(step_tot[mask])
        silent.extend(step_tot[~mask])
    if rewarded and silent:
        report = (f"mean synaptic variation: rewarded steps "
                  f"{np.mean(rewarded):.6g}, zero-reward steps "
                  f"{np.mean(silent):.6g}\n")
        (out / "variation_report.txt").write_text(report)
        written.append(out / "variation_report.txt")
    return written
