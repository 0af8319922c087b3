"""``tensorchart`` command line: generate, featurize, train, evaluate.

Every command reads and writes fixed artifact names inside ``--out``::

    dataset.ccds  features.ccft  geodesic.ccdm  model.ccnn  loss.csv
    report.txt  chart.svg  isomap_report.txt  isomap.svg

Exit codes: 0 ok, 2 IO failure, 3 corrupt artifact, 4 training divergence,
5 inconsistent artifacts or configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import io as artifacts
from .channel import ConfigError, InvalidInputError, iter_dataset
from .evaluate import evaluate_chart, isomap_baseline
from .features import GEODESIC
from .network import TrainingDivergedError, infer, init_params, parameter_count
from .pipeline import (
    PipelineConfig,
    dissimilarities,
    evaluate_against_truth,
    featurize_samples,
    format_report,
    scatter_svg,
    train_chart,
)

EXIT_OK = 0
EXIT_IO = 2
EXIT_CORRUPT = 3
EXIT_DIVERGED = 4
EXIT_INCONSISTENT = 5

DATASET = "dataset.ccds"
FEATURES = "features.ccft"
GEODESIC_FILE = "geodesic.ccdm"
MODEL = "model.ccnn"
LOSS_LOG = "loss.csv"
REPORT = "report.txt"
CHART = "chart.svg"
ISOMAP_REPORT = "isomap_report.txt"
ISOMAP_CHART = "isomap.svg"

log = logging.getLogger("tensorchart")


class Inconsistent(Exception):
    """Artifacts that do not belong together."""


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    gen = cfg.generate
    if args.seed is not None:
        gen = dataclasses.replace(gen, seed=args.seed)
    if args.snr is not None:
        gen = dataclasses.replace(gen, snr_db=args.snr)
    if args.hopping is not None:
        gen = dataclasses.replace(gen, hopping=args.hopping)
    return cfg.replace(generate=gen)


def _path(args, attr: str, default: str) -> Path:
    given = getattr(args, attr, None)
    return Path(given) if given else Path(args.out) / default


def _write_text(path: Path, text: str) -> None:
    path.write_text(text)


def cmd_generate(args, cfg: PipelineConfig) -> int:
    gen = cfg.generate
    out = _path(args, "dataset", DATASET)
    samples = iter_dataset(gen.seed, gen.n_samples, cfg.system, cfg.trajectory, gen.snr_db, gen.hopping)
    n = artifacts.write_dataset(out, samples, cfg.system, gen.n_samples, gen.hopping, gen.snr_db, gen.seed)
    print(f"samples = {n}")
    print(f"config_digest = {cfg.digest()}")
    print(f"seed = {gen.seed}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_featurize(args, cfg: PipelineConfig) -> int:
    src = _path(args, "dataset", DATASET)
    head = artifacts.read_dataset_header(src)
    fs, _ = featurize_samples(artifacts.iter_dataset_file(src), cfg.features)
    _, geo = dissimilarities(fs, cfg.features.geodesic_k)
    feat_out = _path(args, "features", FEATURES)
    geo_out = _path(args, "dissimilarity", GEODESIC_FILE)
    artifacts.write_features(feat_out, fs)
    artifacts.write_dissimilarity(geo_out, geo)
    print(f"samples = {head.n_samples}")
    print(f"feature_shape = {'x'.join(str(s) for s in fs.re.shape[1:])}")
    print(f"wrote {feat_out} and {geo_out}")
    return EXIT_OK


def _load_features_and_targets(args):
    fs = artifacts.read_features(_path(args, "features", FEATURES))
    geo = artifacts.read_dissimilarity(_path(args, "dissimilarity", GEODESIC_FILE))
    if len(geo) != len(fs):
        raise Inconsistent(f"{len(fs)} feature samples but a {len(geo)}x{len(geo)} dissimilarity matrix")
    return fs, geo


def cmd_train(args, cfg: PipelineConfig) -> int:
    fs, geo = _load_features_and_targets(args)
    arch = cfg.network.architecture
    if tuple(arch.tcl_shapes[0]) != fs.re.shape[1:]:
        raise Inconsistent(f"network input {arch.tcl_shapes[0]} does not match features {fs.re.shape[1:]}")
    print(f"parameters = {parameter_count(init_params(arch, cfg.network.init_seed))}", flush=True)
    log_path = _path(args, "loss_log", LOSS_LOG)
    with open(log_path, "w") as f:
        f.write("epoch,mean_loss\n")

        def progress(epoch, loss):
            f.write(f"{epoch + 1},{loss!r}\n")
            f.flush()
            if (epoch + 1) % 25 == 0:
                log.info("epoch %d mean loss %.6g", epoch + 1, loss)

        result = train_chart(fs, geo, cfg, progress)
    out = _path(args, "model", MODEL)
    artifacts.write_model(out, result.params)
    print(f"final_loss = {result.loss_history[-1]!r}")
    print(f"wrote {out} and {log_path}")
    return EXIT_OK


def _dataset(args, n: int):
    src = _path(args, "dataset", DATASET)
    head = artifacts.read_dataset_header(src)
    if head.n_samples != n:
        raise Inconsistent(f"dataset holds {head.n_samples} samples, expected {n}")
    return head, artifacts.read_positions(src)


def _scenario(head) -> str:
    parts = []
    if head.snr_db is not None:
        parts.append(f"snr{head.snr_db:g}dB")
    if head.hopping > 1:
        parts.append(f"hop1/{head.hopping}")
    return "+".join(parts) or "clean"


def _report(z, head, pos, geo, cfg: PipelineConfig):
    ev = evaluate_against_truth(z, pos, cfg.evaluate.metric_k)
    vs_geo = evaluate_chart(geo, z, ev.report.neighborhood_k)
    text = format_report(
        ev.report,
        n=len(z),
        seed=head.seed,
        scenario=_scenario(head),
        geodesic_ct=f"{float(vs_geo.ct):.6f}",
        geodesic_tw=f"{float(vs_geo.tw):.6f}",
        geodesic_ks=f"{float(vs_geo.ks):.6f}",
    )
    return ev, text


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    fs, geo = _load_features_and_targets(args)
    params = artifacts.read_model(_path(args, "model", MODEL))
    if params.architecture.tcl_shapes[0] != fs.re.shape[1:]:
        raise Inconsistent(f"model input {params.architecture.tcl_shapes[0]} does not match features {fs.re.shape[1:]}")
    head, pos = _dataset(args, len(fs))
    z = infer(params, fs.re, fs.im)
    ev, text = _report(z, head, pos, geo, cfg)
    _emit(args, text, REPORT, CHART, pos, ev.aligned, cfg, "DTL chart")
    return EXIT_OK


def cmd_baseline_isomap(args, cfg: PipelineConfig) -> int:
    geo = artifacts.read_dissimilarity(_path(args, "dissimilarity", GEODESIC_FILE))
    if geo.kind != GEODESIC:
        raise ConfigError("Isomap needs a geodesic dissimilarity matrix")
    head, pos = _dataset(args, len(geo))
    mds = isomap_baseline(geo)
    ev, text = _report(mds.points, head, pos, geo, cfg)
    text += f"negative_eigen_mass = {mds.negative_mass:.6f}\n"
    _emit(args, text, ISOMAP_REPORT, ISOMAP_CHART, pos, ev.aligned, cfg, "Isomap")
    return EXIT_OK


def _emit(args, text, report_name, chart_name, pos, aligned, cfg, title):
    report_path = _path(args, "report", report_name)
    _write_text(report_path, text)
    sys.stdout.write(text)
    if cfg.evaluate.svg:
        _write_text(Path(args.out) / chart_name, scatter_svg(pos, aligned, title=title))


def cmd_print_config(args, cfg: PipelineConfig) -> int:
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline-isomap": cmd_baseline_isomap,
    "print-config": cmd_print_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; missing keys take defaults")
    common.add_argument("--seed", type=int, help="dataset seed")
    common.add_argument("--snr", type=float, help="AWGN SNR in dB")
    common.add_argument("--hopping", type=int, help="observe 1/HP of the band per sample")
    common.add_argument("--out", default=".", help="artifact directory (default: .)")
    common.add_argument("--dataset", help="dataset path override")
    common.add_argument("--features", help="feature file override")
    common.add_argument("--dissimilarity", help="dissimilarity file override")
    common.add_argument("--model", help="model file override")
    common.add_argument("--loss-log", dest="loss_log", help="loss CSV override")
    common.add_argument("--report", help="report path override")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tensorchart", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        if args.command != "print-config":
            Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except artifacts.CorruptArtifactError as exc:
        print(f"error: corrupt artifact: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (Inconsistent, ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
