"""The five figure kinds, rendered from validated tables.

Rendering is deterministic: fixed color assignments, no randomness, and a
pinned PNG metadata block, so identical inputs produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .schemas import SchemaError, Table, read_table  # noqa: E402

PALETTE = plt.get_cmap("tab10").colors

# kind -> (input table schemas; the last one repeats/occurs optionally)
KIND_INPUTS = {
    "curve": (("metrics",), ("eval",)),
    "pca": (("pca",), ("pca_variance",)),
    "energy": (("energy_grid",), ()),
    "selectivity": (("selectivity",), ("selectivity",) * 7),
    "ablation": (("ablation",), ()),
}


@dataclass
class FigureSpec:
    """One figure to render: input CSVs, kind, output path, styling."""

    kind: str
    inputs: tuple[Path, ...]
    out: Path
    dpi: int = 150
    title: str = ""

    def validate(self) -> None:
        if self.kind not in KIND_INPUTS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected "
                              f"one of {', '.join(sorted(KIND_INPUTS))}")
        required, optional = KIND_INPUTS[self.kind]
        low, high = len(required), len(required) + len(optional)
        if not low <= len(self.inputs) <= high:
            span = str(low) if low == high else f"{low}..{high}"
            raise SchemaError(f"figure kind {self.kind!r} takes {span} input "
                              f"CSV(s), got {len(self.inputs)}")

    def tables(self) -> list[Table]:
        required, optional = KIND_INPUTS[self.kind]
        names = (required + optional)[: len(self.inputs)]
        return [read_table(path, name)
                for path, name in zip(self.inputs, names)]


def _label_colors(labels: list[str]) -> dict[str, tuple]:
    return {lab: PALETTE[i % len(PALETTE)]
            for i, lab in enumerate(sorted(set(labels)))}


def _draw_curve(tables: list[Table], fig) -> None:
    metrics = tables[0]
    ax_r, ax_s = fig.subplots(2, 1, sharex=True)
    steps = metrics["step"]
    ax_r.plot(steps, metrics["mean_reward"], color=PALETTE[0], lw=1.2,
              label="train")
    ax_s.plot(steps, metrics["success_rate"], color=PALETTE[0], lw=1.2)
    if len(tables) > 1:
        ev = tables[1]
        ax_r.errorbar(ev["step"], ev["mean_reward"], yerr=ev["std_reward"],
                      color=PALETTE[1], fmt="o", ms=3, lw=1, capsize=2,
                      label="eval")
        ax_s.plot(ev["step"], ev["success_rate"], "o", ms=3, color=PALETTE[1])
        ax_r.legend(frameon=False, fontsize=8)
    ax_r.set_ylabel("mean reward")
    ax_s.set_ylabel("success rate")
    ax_s.set_ylim(-0.05, 1.05)
    ax_s.set_xlabel("environment steps")
    ax_s.ticklabel_format(axis="x", style="sci", scilimits=(0, 4))


def _draw_pca(tables: list[Table], fig) -> None:
    pca = tables[0]
    ax = fig.subplots()
    names = pca.variable_names[:2]
    colors = _label_colors(pca["label"])
    episodes: dict[int, list[int]] = {}
    for idx, ep in enumerate(pca["episode"]):
        episodes.setdefault(ep, []).append(idx)
    seen: set[str] = set()
    for ep, idxs in sorted(episodes.items()):
        xs = [pca[names[0]][i] for i in idxs]
        ys = [pca[names[1]][i] for i in idxs]
        label = pca["label"][idxs[0]]
        ax.plot(xs, ys, color=colors[label], lw=0.9, alpha=0.75,
                label=None if label in seen else label)
        ax.plot(xs[0], ys[0], "o", ms=4, color=colors[label])
        seen.add(label)
    axis_text = [names[0].upper(), names[1].upper()]
    if len(tables) > 1:
        ratios = dict(zip(tables[1]["component"], tables[1]["ratio"]))
        for k in (0, 1):
            if k + 1 in ratios:
                axis_text[k] += f" ({ratios[k + 1]:.0%} var)"
    ax.set_xlabel(axis_text[0])
    ax.set_ylabel(axis_text[1])
    if seen:
        ax.legend(frameon=False, fontsize=8)


def _grid_from_columns(table: Table, idxs: list[int]):
    """(a, b, Z) for one episode's rows, requiring a complete a x b grid."""
    a = np.unique([table["a"][i] for i in idxs])
    b = np.unique([table["b"][i] for i in idxs])
    if len(idxs) != len(a) * len(b):
        raise SchemaError(f"{table.path}: episode rows do not form a complete "
                          f"a x b grid ({len(idxs)} rows for "
                          f"{len(a)}x{len(b)} levels)")
    z = np.full((len(b), len(a)), np.nan)
    for i in idxs:
        ia = int(np.searchsorted(a, table["a"][i]))
        ib = int(np.searchsorted(b, table["b"][i]))
        z[ib, ia] = table["energy"][i]
    return a, b, z


def _draw_energy(tables: list[Table], fig) -> None:
    grid = tables[0]
    episodes: dict[int, list[int]] = {}
    for idx, ep in enumerate(grid["episode"]):
        episodes.setdefault(ep, []).append(idx)
    shown = sorted(episodes)[:6]
    axes = fig.subplots(1, len(shown), squeeze=False)[0]
    for ax, ep in zip(axes, shown):
        a, b, z = _grid_from_columns(grid, episodes[ep])
        im = ax.imshow(z, origin="lower", aspect="auto", cmap="viridis",
                       extent=(a[0], a[-1], b[0], b[-1]))
        ax.set_title(f"episode {ep}", fontsize=9)
        ax.set_xlabel("component 1 offset")
        fig.colorbar(im, ax=ax, shrink=0.8)
    axes[0].set_ylabel("component 2 offset")


def _draw_selectivity(tables: list[Table], fig) -> None:
    axes = fig.subplots(1, len(tables), squeeze=False)[0]
    for ax, table in zip(axes, tables):
        rows = max(table["row"]) + 1
        cols = max(table["col"]) + 1
        if len(table) != rows * cols:
            raise SchemaError(f"{table.path}: expected a complete "
                              f"{rows}x{cols} grid, got {len(table)} rows")
        z = np.full((rows, cols), np.nan)
        visits = np.zeros((rows, cols), dtype=int)
        for r, c, v, m in zip(table["row"], table["col"], table["visits"],
                              table["mean_activation"]):
            z[r, c] = m
            visits[r, c] = v
        masked = np.ma.masked_where(visits == 0, z)
        cmap = plt.get_cmap("magma").copy()
        cmap.set_bad("0.85")
        im = ax.imshow(masked, cmap=cmap)
        ax.set_title(table.path.stem, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, shrink=0.8)


def _draw_ablation(tables: list[Table], fig) -> None:
    table = tables[0]
    ax = fig.subplots()
    variants: list[str] = []
    for v in table["variant"]:
        if v not in variants:
            variants.append(v)
    means, stds = [], []
    for x, variant in enumerate(variants):
        vals = np.asarray([r for v, r in zip(table["variant"],
                                             table["mean_reward"])
                           if v == variant])
        means.append(vals.mean())
        stds.append(vals.std(ddof=1) if len(vals) > 1 else 0.0)
        offsets = np.linspace(-0.15, 0.15, len(vals))
        ax.plot(x + offsets, vals, "o", ms=3, color="black", zorder=3)
    ax.bar(range(len(variants)), means, yerr=stds, capsize=3,
           color=[PALETTE[i % len(PALETTE)] for i in range(len(variants))],
           alpha=0.8)
    ax.set_xticks(range(len(variants)))
    ax.set_xticklabels(variants, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("final mean reward")


_DRAWERS = {
    "curve": _draw_curve,
    "pca": _draw_pca,
    "energy": _draw_energy,
    "selectivity": _draw_selectivity,
    "ablation": _draw_ablation,
}

FIGURE_KINDS = tuple(sorted(_DRAWERS))

_SIZES = {
    "curve": (5.5, 4.5),
    "pca": (4.8, 4.2),
    "energy": (4.0, 3.4),      # per panel, width scales with panel count
    "selectivity": (2.6, 2.8),
    "ablation": (4.6, 3.6),
}


def render(spec: FigureSpec) -> Path:
    """Validate, draw, and write one figure; returns the output path."""
    spec.validate()
    tables = spec.tables()
    width, height = _SIZES[spec.kind]
    if spec.kind in ("energy", "selectivity"):
        panels = (len({e for e in tables[0]["episode"]}) if spec.kind == "energy"
                  else len(tables))
        width *= max(1, min(panels, 6))
    fig = plt.figure(figsize=(width, height))
    try:
        _DRAWERS[spec.kind](tables, fig)
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        spec.out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.out, dpi=spec.dpi,
                    metadata={"Software": "metods-plots"})
    finally:
        plt.close(fig)
    return spec.out
