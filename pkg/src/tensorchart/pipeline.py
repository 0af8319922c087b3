"""Pipeline configuration and the stage functions behind the CLI."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io as _io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterable

import numpy as np

from .channel import ConfigError, Sample, SystemConfig, TrajectoryConfig, iter_dataset
from .evaluate import (
    AffineTransform,
    MetricReport,
    evaluate_chart,
    isomap_baseline,
    optimal_affine,
    pairwise_distances,
)
from .features import (
    DEFAULT_GEODESIC_K,
    DissimilarityMatrix,
    featurize,
    geodesic_dissimilarity,
    pairwise_scm_dissimilarity,
)
from .io import FeatureSet
from .network import Architecture, TrainConfig, TrainResult, infer, init_params, parameter_count, train

THREADS_ENV = "TENSORCHART_THREADS"


@dataclass
class GenerateConfig:
    n_samples: int = 1000
    seed: int = 0
    snr_db: float | None = None
    hopping: int = 1


@dataclass
class FeatureConfig:
    h_p: int = 17
    ranks: tuple[int, int, int] = (8, 8, 8)
    normalize: bool = True
    geodesic_k: int = DEFAULT_GEODESIC_K


@dataclass
class NetworkConfig:
    tcl_shapes: tuple[tuple[int, int, int], ...] = Architecture().tcl_shapes
    fcn_hidden: tuple[int, ...] = Architecture().fcn_hidden
    slope: float = Architecture().slope
    init_seed: int = 0

    @property
    def architecture(self) -> Architecture:
        return Architecture(tuple(tuple(s) for s in self.tcl_shapes), tuple(self.fcn_hidden), 2, self.slope)


@dataclass
class EvaluateConfig:
    metric_k: int = 0  # 0 selects 5% of the sample count
    svg: bool = True


@dataclass
class PipelineConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    SECTIONS = ("system", "trajectory", "generate", "features", "network", "train", "evaluate")

    def replace(self, **sections) -> "PipelineConfig":
        return dataclasses.replace(self, **sections)

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        for name in self.SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _format(getattr(section, f.name)) for f in dataclasses.fields(section)}
        buf = _io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        base = cls()
        updates = {}
        for name in cp.sections():
            if name not in cls.SECTIONS:
                raise ConfigError(f"unknown config section [{name}]")
            section = getattr(base, name)
            known = {f.name: f for f in dataclasses.fields(section)}
            values = {}
            for key, raw in cp[name].items():
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                values[key] = _parse(raw, getattr(section, key), key)
            try:
                updates[name] = dataclasses.replace(section, **values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        return base.replace(**updates)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as f:
            return cls.from_text(f.read())


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join("x".join(str(v) for v in t) for t in value)
        return ", ".join(_format(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _parse(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if raw.lower() == "none":
            return None
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], tuple):
                return tuple(tuple(int(v) for v in item.split("x")) for item in items)
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from exc


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc


def featurize_samples(samples: Iterable[Sample], cfg: FeatureConfig = FeatureConfig(), threads: int | None = None) -> tuple[FeatureSet, np.ndarray]:
    """Feature set plus ground-truth positions, consuming samples as a stream."""
    threads = threads or worker_count()
    res, ims, scms, positions = [], [], [], []

    def one(s: Sample):
        return featurize(s.channel, s.mask, cfg.h_p, cfg.ranks, cfg.normalize)

    it = iter(samples)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        while True:
            chunk = list(islice(it, 4 * threads))
            if not chunk:
                break
            for s, (re, im, scm) in zip(chunk, pool.map(one, chunk)):
                res.append(re)
                ims.append(im)
                scms.append(scm)
                positions.append(np.asarray(s.position, dtype=float))
    fs = FeatureSet(np.array(res), np.array(ims), np.array(scms), cfg.h_p, tuple(cfg.ranks))
    return fs, np.array(positions)


def dissimilarities(fs: FeatureSet, k: int = DEFAULT_GEODESIC_K) -> tuple[DissimilarityMatrix, DissimilarityMatrix]:
    direct = pairwise_scm_dissimilarity(fs.scm)
    return direct, geodesic_dissimilarity(direct, k)


def train_chart(fs: FeatureSet, targets: DissimilarityMatrix, cfg: PipelineConfig, progress=None) -> TrainResult:
    params = init_params(cfg.network.architecture, cfg.network.init_seed)
    return train(params, fs.re, fs.im, targets, cfg.train, progress=progress)


@dataclass
class Evaluation:
    report: MetricReport
    transform: AffineTransform
    aligned: np.ndarray


def evaluate_against_truth(z: np.ndarray, positions: np.ndarray, k: int = 0) -> Evaluation:
    """CT/TW/KS of a chart against ground-truth positions plus the affine fit."""
    truth = DissimilarityMatrix(pairwise_distances(positions))
    report = evaluate_chart(truth, z, k if k > 0 else None)
    report = MetricReport(float(report.ct), float(report.tw), float(report.ks), report.neighborhood_k)
    transform, aligned = optimal_affine(z, positions)
    return Evaluation(report, transform, aligned)


@dataclass
class RunResult:
    feature_shape: tuple[int, ...]
    parameter_count: int
    dtl: MetricReport
    isomap: MetricReport
    seconds: float  # generate through evaluate for the network chart
    loss_history: list[float]


def run_pipeline(cfg: PipelineConfig, progress=None) -> RunResult:
    """Generate, featurize, train and evaluate in memory; also scores Isomap."""
    t0 = time.perf_counter()
    gen = cfg.generate
    samples = iter_dataset(gen.seed, gen.n_samples, cfg.system, cfg.trajectory, gen.snr_db, gen.hopping)
    fs, positions = featurize_samples(samples, cfg.features)
    _, geo = dissimilarities(fs, cfg.features.geodesic_k)
    result = train_chart(fs, geo, cfg, progress)
    dtl = evaluate_against_truth(infer(result.params, fs.re, fs.im), positions, cfg.evaluate.metric_k)
    seconds = time.perf_counter() - t0
    iso = evaluate_against_truth(isomap_baseline(geo).points, positions, cfg.evaluate.metric_k)
    return RunResult(
        fs.re.shape[1:], parameter_count(result.params), dtl.report, iso.report, seconds, result.loss_history
    )


def format_report(report: MetricReport, **extra) -> str:
    lines = [
        f"ct = {report.ct:.6f}",
        f"tw = {report.tw:.6f}",
        f"ks = {report.ks:.6f}",
        f"k = {report.neighborhood_k}",
    ]
    lines += [f"{key} = {value}" for key, value in extra.items()]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def scatter_svg(truth: np.ndarray, chart: np.ndarray, size: int = 480, title: str = "") -> str:
    """Ground truth and aligned chart as two colored point clouds."""
    pts = np.vstack([truth, chart])
    lo = pts.min(axis=0)
    span = float(np.max(pts.max(axis=0) - lo)) or 1.0
    pad = 30

    def xy(p):
        u = pad + (p[0] - lo[0]) / span * (size - 2 * pad)
        v = size - pad - (p[1] - lo[1]) / span * (size - 2 * pad)
        return u, v

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 30}" viewBox="0 0 {size} {size + 30}">',
        f'<rect width="{size}" height="{size + 30}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{pad}" y="18" font-size="13" font-family="sans-serif">{title}</text>')
    for pts_, color, cls in ((truth, "#7b3294", "truth"), (chart, "#e66101", "chart")):
        for p in pts_:
            u, v = xy(p)
            out.append(f'<circle class="{cls}" cx="{u:.2f}" cy="{v:.2f}" r="2" fill="{color}" fill-opacity="0.7"/>')
    y = size + 20
    out.append(f'<rect x="{pad}" y="{y - 9}" width="10" height="10" fill="#7b3294"/>')
    out.append(f'<text x="{pad + 14}" y="{y}" font-size="12" font-family="sans-serif">ground truth</text>')
    out.append(f'<rect x="{pad + 120}" y="{y - 9}" width="10" height="10" fill="#e66101"/>')
    out.append(f'<text x="{pad + 134}" y="{y}" font-size="12" font-family="sans-serif">chart (affine-aligned)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
