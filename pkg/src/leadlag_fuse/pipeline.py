"""End-to-end orchestration: windowing, graph construction, fusion, post-processing.

For every selected window-end date and every (period, lag) spec, a lookback
window of return rows is sliced, a validated lead-lag graph is built, and the
graph's RWR/PPMI features become one training row per asset. A single fusion
model is trained over all (asset, date) samples; embeddings, pairwise cosine
similarity series and a 2-D PCA projection are derived from it.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fusion, leadlag
from .diffusion import RwrConfig, node_features
from .fusion import EmbeddingFrame, FusionArchitecture, FusionModel, TrainingSample, TrainReport
from .leadlag import LagSpec, LeadLagGraph
from .market_data import PricePanel, ReturnMatrix, log_returns, resample

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "TrainingSettings",
    "ModelSettings",
    "RunConfig",
    "SimilaritySeries",
    "PcaProjection",
    "RunResult",
    "select_window_ends",
    "build_graphs",
    "samples_from_graphs",
    "run_dynamic_fusion",
    "cosine_similarity",
    "similarity_series",
    "similarity_matrix",
    "symmetric_eigh_jacobi",
    "pca_project",
    "link_count_summary",
    "write_embeddings_csv",
    "load_embeddings_csv",
    "write_similarity_csv",
    "write_pca_csv",
    "write_graph_artifacts",
    "load_graph_artifacts",
]

MS_PER_DAY = 86_400_000


class ConfigError(ValueError):
    """Invalid run configuration (bad value, unknown key, inconsistent specs)."""


@dataclass(frozen=True)
class TrainingSettings:
    max_epochs: int = 500
    learning_rate: float = 0.001
    patience: int | None = 20
    min_delta: float = 1e-6
    validation_fraction: float = 0.3


@dataclass(frozen=True)
class ModelSettings:
    per_graph_dims: tuple[int, ...] = (25, 10)
    shared_dims: tuple[int, ...] = (30,)
    embedding_dim: int = 15


def _default_specs() -> tuple[LagSpec, ...]:
    return tuple(LagSpec(d, t) for d in (1, 5) for t in (0, 1, 2))


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs besides the price panel itself."""

    specs: tuple[LagSpec, ...] = field(default_factory=_default_specs)
    window_minutes: int = 1440
    window_ends: str | tuple[int, ...] = "daily"  # rule or explicit timestamps
    states: int = 4
    uncorrected_p: float = 0.01
    rwr: RwrConfig = field(default_factory=RwrConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    seed_split: int = 11
    seed_init: int = 13
    pca_components: int = 2
    similarity_pairs: str | tuple[tuple[str, str], ...] = "all"

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.specs:
            raise ConfigError("at least one (period, lag) spec is required")
        keys = [(s.period_minutes, s.lag) for s in self.specs]
        if len(set(keys)) != len(keys):
            raise ConfigError("duplicate (period, lag) specs in configuration")
        if self.window_minutes < 1:
            raise ConfigError(f"window_minutes must be positive, got {self.window_minutes}")
        if self.states < 2:
            raise ConfigError(f"states must be at least 2, got {self.states}")
        if not 0.0 < self.uncorrected_p < 1.0:
            raise ConfigError(f"uncorrected_p must lie in (0, 1), got {self.uncorrected_p}")
        if self.pca_components < 1:
            raise ConfigError(f"pca_components must be positive, got {self.pca_components}")
        for spec in self.specs:
            rows = self.window_rows(spec)
            if rows - spec.lag < self.states:
                raise ConfigError(
                    f"spec {spec.tag}: window of {rows} rows minus lag {spec.lag} cannot "
                    f"support {self.states}-state discretization"
                )
        if isinstance(self.window_ends, str):
            if self.window_ends != "daily":
                raise ConfigError(f"unknown window_ends rule {self.window_ends!r}")
        else:
            ends = tuple(int(t) for t in self.window_ends)
            if any(b <= a for a, b in zip(ends, ends[1:])):
                raise ConfigError("explicit window_ends must be strictly increasing")
            object.__setattr__(self, "window_ends", ends)

    def window_rows(self, spec: LagSpec) -> int:
        """Return rows per window for a spec: explicit override or minutes / period."""
        if spec.window_rows is not None:
            return spec.window_rows
        if self.window_minutes % spec.period_minutes != 0:
            raise ConfigError(
                f"window_minutes {self.window_minutes} is not a multiple of period {spec.period_minutes}"
            )
        return self.window_minutes // spec.period_minutes


@dataclass
class SimilaritySeries:
    """Cosine similarity of one asset pair through time; None marks undefined."""

    pair: tuple[str, str]
    entries: tuple[tuple[int, float | None], ...]


@dataclass
class PcaProjection:
    asset_ids: tuple[str, ...]
    window_ends: tuple[int, ...]
    coordinates: np.ndarray  # (records, components)
    components: np.ndarray  # (components, embedding_dim), orthonormal rows
    explained_variance: np.ndarray  # (components,), non-increasing


@dataclass
class RunResult:
    frame: EmbeddingFrame
    graphs: list[LeadLagGraph]
    train_report: TrainReport
    usable_ends: list[int]
    skips: list[dict]
    flags: list[dict]


# --- windowing ---------------------------------------------------------------


def select_window_ends(base_returns: ReturnMatrix, rule: str | Sequence[int]) -> list[int]:
    """Window-end timestamps: last base return of each UTC day, or an explicit list."""
    if isinstance(rule, str):
        if rule != "daily":
            raise ConfigError(f"unknown window_ends rule {rule!r}")
        ts = base_returns.timestamps
        days = ts // MS_PER_DAY
        last_of_day = np.nonzero(np.diff(days) != 0)[0]
        ends = ts[last_of_day].tolist() + [int(ts[-1])]
        return [int(t) for t in ends]
    ends = [int(t) for t in rule]
    if any(b <= a for a, b in zip(ends, ends[1:])):
        raise ConfigError("window_ends must be strictly increasing")
    return ends


def _slice_window(returns: ReturnMatrix, window_end: int, rows: int) -> ReturnMatrix | None:
    """Last ``rows`` return rows at or before ``window_end``; None if not enough."""
    ts = returns.timestamps
    stop = int(np.searchsorted(ts, window_end, side="right"))
    if stop < rows:
        return None
    return ReturnMatrix(
        period_minutes=returns.period_minutes,
        timestamps=ts[stop - rows : stop],
        assets=returns.assets,
        returns=returns.returns[stop - rows : stop],
    )


# --- graph stage --------------------------------------------------------------


def build_graphs(
    config: RunConfig,
    panel: PricePanel,
    threads: int = 1,
) -> tuple[list[LeadLagGraph], list[int], list[dict], list[dict]]:
    """All (spec, date) graphs plus the usable dates, skip log and data flags.

    A date is usable only when every spec has a full window ending there, so
    each usable date contributes exactly len(specs) graphs.
    """
    returns_by_period: dict[int, ReturnMatrix] = {}
    for spec in config.specs:
        if spec.period_minutes not in returns_by_period:
            returns_by_period[spec.period_minutes] = log_returns(resample(panel, spec.period_minutes))

    base_period = min(returns_by_period)
    candidates = select_window_ends(returns_by_period[base_period], config.window_ends)

    skips: list[dict] = []
    usable_ends: list[int] = []
    windows: dict[tuple[str, int], ReturnMatrix] = {}
    for end in candidates:
        missing = None
        for spec in config.specs:
            rows = config.window_rows(spec)
            window = _slice_window(returns_by_period[spec.period_minutes], end, rows)
            if window is None:
                missing = f"spec {spec.tag} has fewer than {rows} return rows at {end}"
                break
            windows[(spec.tag, end)] = window
        if missing is None:
            usable_ends.append(end)
        else:
            skips.append({"window_end": end, "reason": missing})
            logger.warning("skipping window end %d: %s", end, missing)

    if not usable_ends:
        raise ValueError("no usable window-end dates: every candidate window is too short")

    flags: list[dict] = []
    tasks = [(spec, end) for end in usable_ends for spec in config.specs]

    def _build(task: tuple[LagSpec, int]) -> LeadLagGraph:
        spec, end = task
        return leadlag.build_graph(
            windows[(spec.tag, end)], spec, end, config.uncorrected_p, config.states
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            graphs = list(pool.map(_build, tasks))
    else:
        graphs = [_build(t) for t in tasks]

    for (spec, end), graph in zip(tasks, graphs):
        flat = leadlag.constant_columns(windows[(spec.tag, end)])
        if flat:
            flags.append({"window_end": end, "spec": spec.tag, "assets": flat, "issue": "constant_returns"})
    return graphs, usable_ends, skips, flags


def samples_from_graphs(
    graphs: Sequence[LeadLagGraph],
    specs: Sequence[LagSpec],
    usable_ends: Sequence[int],
    rwr_cfg: RwrConfig,
) -> list[TrainingSample]:
    """One training sample per (asset, date): the asset's PPMI row in each graph."""
    by_key = {(g.spec.tag, g.window_end): g for g in graphs}
    assets = graphs[0].assets
    n = len(assets)
    samples: list[TrainingSample] = []
    for date_index, end in enumerate(usable_ends):
        ppmi_rows = []
        for spec in specs:
            graph = by_key.get((spec.tag, end))
            if graph is None:
                raise ValueError(f"missing graph for spec {spec.tag} at window end {end}")
            features = node_features(graph.adjacency, rwr_cfg, f"{spec.tag}@{end}")
            ppmi_rows.append(features.ppmi)
        stacked = np.stack(ppmi_rows)  # (specs, n, n)
        for asset_index in range(n):
            samples.append(
                TrainingSample(asset_index=asset_index, date_index=date_index, rows=stacked[:, asset_index, :])
            )
    return samples


def run_dynamic_fusion(
    config: RunConfig,
    panel: PricePanel,
    out_dir: str | Path | None = None,
    threads: int = 1,
) -> RunResult:
    """The full dynamic pipeline: graphs for every date, one fusion training, embeddings."""
    graphs, usable_ends, skips, flags = build_graphs(config, panel, threads=threads)
    samples = samples_from_graphs(graphs, config.specs, usable_ends, config.rwr)

    arch = FusionArchitecture(
        graph_count=len(config.specs),
        input_dim=panel.n_assets,
        per_graph_dims=config.model.per_graph_dims,
        shared_dims=config.model.shared_dims,
        embedding_dim=config.model.embedding_dim,
    )
    model = FusionModel(arch, seed=config.seed_init)
    report = fusion.train(
        model,
        samples,
        split_seed=config.seed_split,
        max_epochs=config.training.max_epochs,
        learning_rate=config.training.learning_rate,
        patience=config.training.patience,
        min_delta=config.training.min_delta,
        validation_fraction=config.training.validation_fraction,
    )
    frame = fusion.extract_embeddings(model, samples, panel.assets, usable_ends)
    result = RunResult(
        frame=frame, graphs=graphs, train_report=report, usable_ends=usable_ends, skips=skips, flags=flags
    )
    if out_dir is not None:
        write_graph_artifacts(graphs, Path(out_dir) / "graphs")
        write_embeddings_csv(frame, Path(out_dir) / "embeddings.csv")
        fusion.save_model(model, Path(out_dir) / "model.json")
    return result


# --- similarity ----------------------------------------------------------------


def cosine_similarity(z_i: np.ndarray, z_j: np.ndarray) -> float | None:
    """Cosine of two embeddings, or None when either has zero norm."""
    z_i = np.asarray(z_i, dtype=float)
    z_j = np.asarray(z_j, dtype=float)
    if z_i.shape != z_j.shape:
        raise ValueError(f"dimension mismatch: {z_i.shape} vs {z_j.shape}")
    ni = float(np.linalg.norm(z_i))
    nj = float(np.linalg.norm(z_j))
    if ni == 0.0 or nj == 0.0:
        return None
    value = float(np.dot(z_i, z_j) / (ni * nj))
    return min(1.0, max(-1.0, value))


def similarity_series(frame: EmbeddingFrame, pair: tuple[str, str]) -> SimilaritySeries:
    """Cosine similarity of one pair at every window end where both are present."""
    a, b = pair
    known = set(frame.asset_ids)
    for asset in pair:
        if asset not in known:
            raise ValueError(f"unknown asset {asset!r}")
    entries: list[tuple[int, float | None]] = []
    for end in frame.dates():
        za = frame.lookup(a, end)
        zb = frame.lookup(b, end)
        if za is None or zb is None:
            continue
        entries.append((end, cosine_similarity(za, zb)))
    return SimilaritySeries(pair=(a, b), entries=tuple(entries))


def similarity_matrix(frame: EmbeddingFrame, window_end: int) -> np.ndarray:
    """Symmetric pairwise-cosine matrix at one date; undefined entries are NaN."""
    assets = frame.assets_at(window_end)
    if not assets:
        raise ValueError(f"no embeddings at window end {window_end}")
    n = len(assets)
    out = np.full((n, n), np.nan)
    vectors = [frame.lookup(a, window_end) for a in assets]
    for i in range(n):
        norm_i = float(np.linalg.norm(vectors[i]))
        out[i, i] = 1.0 if norm_i > 0.0 else np.nan
        for j in range(i + 1, n):
            value = cosine_similarity(vectors[i], vectors[j])
            out[i, j] = np.nan if value is None else value
            out[j, i] = out[i, j]
    return out


# --- PCA ------------------------------------------------------------------------


def symmetric_eigh_jacobi(
    matrix: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors of a symmetric matrix.

    Cyclic Jacobi rotations; deterministic and accurate to machine precision
    for the small matrices this pipeline produces.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-8 * max(1.0, float(np.abs(a).max()))):
        raise ValueError("matrix is not symmetric")
    a = (a + a.T) / 2.0
    n = a.shape[0]
    vectors = np.eye(n)
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return np.zeros(n), vectors
    others = np.ones(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                others[:] = True
                others[p] = others[q] = False
                arp = a[others, p].copy()
                arq = a[others, q].copy()
                a[others, p] = a[p, others] = c * arp - s * arq
                a[others, q] = a[q, others] = s * arp + c * arq
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = a[q, p] = 0.0
                vp = vectors[:, p].copy()
                vq = vectors[:, q].copy()
                vectors[:, p] = c * vp - s * vq
                vectors[:, q] = s * vp + c * vq
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def pca_project(frame: EmbeddingFrame, components: int = 2) -> PcaProjection:
    """Center all embeddings jointly and project onto the top principal axes.

    Components are orthonormal, ordered by non-increasing explained variance,
    and sign-fixed so each component's largest-magnitude loading is positive.
    If fewer directions are supported by the data, the available ones are
    returned with a warning.
    """
    x = frame.vectors
    m, dim = x.shape
    if m < components + 1:
        raise ValueError(f"need at least {components + 1} samples for {components} components, got {m}")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / (m - 1)
    values, vectors = symmetric_eigh_jacobi(cov)
    k = min(components, dim, m - 1)
    if k < components:
        logger.warning("only %d of %d requested components are supported by the data", k, components)
    basis = vectors[:, :k]
    for j in range(k):
        lead = int(np.argmax(np.abs(basis[:, j])))
        if basis[lead, j] < 0.0:
            basis[:, j] = -basis[:, j]
    return PcaProjection(
        asset_ids=frame.asset_ids,
        window_ends=frame.window_ends,
        coordinates=centered @ basis,
        components=basis.T.copy(),
        explained_variance=np.maximum(values[:k], 0.0),
    )


# --- artifacts -------------------------------------------------------------------


def _iso_utc(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _fmt(x: float) -> str:
    return repr(float(x))


def link_count_summary(graphs: Sequence[LeadLagGraph]) -> dict:
    """Per-(period, lag) validated-link counts: per date plus quartile statistics."""
    by_spec: dict[str, dict] = {}
    for g in sorted(graphs, key=lambda g: (g.spec.period_minutes, g.spec.lag, g.window_end)):
        entry = by_spec.setdefault(
            g.spec.tag,
            {"period_minutes": g.spec.period_minutes, "lag": g.spec.lag, "per_date": {}},
        )
        entry["per_date"][str(g.window_end)] = g.validated_link_count
    for entry in by_spec.values():
        counts = np.array(list(entry["per_date"].values()), dtype=float)
        entry["summary"] = {
            "min": float(counts.min()),
            "q25": float(np.percentile(counts, 25)),
            "median": float(np.percentile(counts, 50)),
            "q75": float(np.percentile(counts, 75)),
            "max": float(counts.max()),
        }
    return by_spec


def write_graph_artifacts(graphs: Sequence[LeadLagGraph], graphs_dir: str | Path) -> None:
    graphs_dir = Path(graphs_dir)
    for g in graphs:
        spec_dir = graphs_dir / g.spec.tag
        leadlag.write_graph(g, spec_dir / f"{g.window_end}.csv", spec_dir / f"{g.window_end}.json")


def load_graph_artifacts(graphs_dir: str | Path) -> list[LeadLagGraph]:
    graphs_dir = Path(graphs_dir)
    graphs = []
    for csv_path in sorted(graphs_dir.glob("*/*.csv")):
        graphs.append(leadlag.load_graph(csv_path, csv_path.with_suffix(".json")))
    if not graphs:
        raise FileNotFoundError(f"no graph artifacts found under {graphs_dir}")
    return graphs


def write_embeddings_csv(frame: EmbeddingFrame, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    order = sorted(range(len(frame)), key=lambda i: (frame.window_ends[i], frame.asset_ids[i]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["asset", "window_end", *(f"z{i}" for i in range(frame.embedding_dim))])
        for i in order:
            writer.writerow(
                [frame.asset_ids[i], frame.window_ends[i], *(_fmt(v) for v in frame.vectors[i])]
            )


def load_embeddings_csv(path: str | Path, universe: Sequence[str] | None = None) -> EmbeddingFrame:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["asset", "window_end"]:
            raise ValueError(f"{path.name}: expected header 'asset,window_end,z0,...'")
        assets: list[str] = []
        ends: list[int] = []
        rows: list[list[float]] = []
        for row in reader:
            if not row:
                continue
            assets.append(row[0])
            ends.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    if not rows:
        raise ValueError(f"{path.name}: no embedding rows")
    if universe is None:
        universe = tuple(sorted(set(assets)))
    return EmbeddingFrame(
        asset_ids=tuple(assets), window_ends=tuple(ends), vectors=np.asarray(rows), universe=tuple(universe)
    )


def write_similarity_csv(series: SimilaritySeries, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_end", "cosine"])
        for end, value in series.entries:
            writer.writerow([end, "" if value is None else _fmt(value)])


def write_pca_csv(projection: PcaProjection, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = projection.coordinates.shape[1]
    order = sorted(
        range(len(projection.asset_ids)),
        key=lambda i: (projection.window_ends[i], projection.asset_ids[i]),
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["asset", "window_end", *(f"pc{i + 1}" for i in range(k))])
        for i in order:
            writer.writerow(
                [
                    projection.asset_ids[i],
                    projection.window_ends[i],
                    *(_fmt(v) for v in projection.coordinates[i]),
                ]
            )
