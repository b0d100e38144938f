"""Command-line surface: segment, explain, evaluate, compare.

Runs are driven by a JSON config file (see RunConfig for the schema);
individual flags override config values. Every command snapshots its
effective config into the output directory so a run can be audited and
replayed. Exit codes: 0 success, 1 usage error, 2 model protocol
violation, 3 partial corpus failure.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import click
import numpy as np

from . import metrics as metric_ops
from .attribution import (
    MODE_FG,
    MODE_FG_BG,
    AttributionMap,
    attribute_mask,
    occlusion_map,
    random_map,
)
from .formats import (
    atomic_write_bytes,
    heatmap_png,
    mask_to_png,
    write_attribution,
    write_mask,
)
from .imaging import load_image
from .model import (
    ClassifierHandle,
    OnnxClassifier,
    ProtocolError,
    SubprocessClassifier,
    synthetic_classifier,
)
from .segmentation import KernelConfig, masks_for_page, prepare_page

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROTOCOL = 2
EXIT_PARTIAL = 3

METHOD_DOCXPLAIN_FG = "docxplain_fg"
METHOD_DOCXPLAIN_FGBG = "docxplain_fgbg"
METHOD_OCCLUSION = "occlusion"
METHOD_RANDOM = "random"
ALL_METHODS = (METHOD_DOCXPLAIN_FG, METHOD_DOCXPLAIN_FGBG,
               METHOD_OCCLUSION, METHOD_RANDOM)

log = logging.getLogger("docxplain")


class PartialCorpusFailure(RuntimeError):
    """More than the tolerated fraction of corpus samples failed."""


@dataclass
class RunConfig:
    """Everything a run needs; serializable, and a persisted config
    re-executes to identical results with a deterministic backend.

    ``model`` is a backend spec dict:
      {"backend": "synthetic", "kind": "...", "params": {...},
       "input_size": [w, h], "channels": 1, "max_batch": 32}
      {"backend": "subprocess", "command": [...], "input_size": [w, h],
       "channels": 1, "n_classes": 2, "max_batch": 32}
      {"backend": "onnx", "path": "model.onnx", ...}
    """

    model: dict | None = None
    mode: str = "both"  # fg | fgbg | both
    seed: int = 0
    target_class: int | None = None
    kernels: list | None = None  # list of KernelConfig field dicts
    working_size: int = 1024
    opening: tuple = (5, 5)
    occlusion_patch: tuple = (16, 16)
    occlusion_stride: tuple = (8, 8)
    occlusion_fill: float = 0.5
    aopc_patch: int = 8
    aopc_steps: int = 20
    sensitivity_radius: float = 0.02
    sensitivity_samples: int = 10
    infidelity_patch: int = 8
    infidelity_samples: int = 128
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if cfg.mode not in ("fg", "fgbg", "both"):
            raise ValueError(f"mode must be fg, fgbg or both, got {cfg.mode!r}")
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def snapshot(self, out_dir: Path) -> None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        atomic_write_bytes(out_dir / "config.json", text.encode())

    def kernel_configs(self) -> list[KernelConfig]:
        if self.kernels is None:
            from .segmentation import default_kernels

            return default_kernels()
        out = []
        for item in self.kernels:
            item = dict(item)
            for key in ("fg_kernel", "bg_patch"):
                if key in item:
                    item[key] = tuple(item[key])
            out.append(KernelConfig(**item))
        return out

    def build_classifier(self) -> ClassifierHandle:
        if not self.model:
            raise ValueError("no model configured; pass --model or set "
                             "'model' in the config file")
        spec = dict(self.model)
        backend = spec.pop("backend", None)
        input_size = tuple(spec.pop("input_size", (224, 224)))
        channels = spec.pop("channels", 1)
        max_batch = spec.pop("max_batch", 32)
        if backend == "synthetic":
            kind = spec.pop("kind")
            params = spec.pop("params", {})
            _reject_extras(spec, "model")
            params = _normalize_synthetic_params(params)
            return synthetic_classifier(kind, input_size=input_size,
                                        channels=channels,
                                        max_batch=max_batch, **params)
        if backend == "subprocess":
            command = spec.pop("command")
            n_classes = spec.pop("n_classes", 2)
            _reject_extras(spec, "model")
            return SubprocessClassifier(command, input_size, channels,
                                        n_classes, max_batch)
        if backend == "onnx":
            path = spec.pop("path")
            n_classes = spec.pop("n_classes", 2)
            channels_first = spec.pop("channels_first", True)
            _reject_extras(spec, "model")
            return OnnxClassifier(path, input_size, channels, n_classes,
                                  max_batch, channels_first)
        raise ValueError(f"unknown model backend {backend!r}")

    def ablation_modes(self) -> list[tuple[str, str]]:
        """(method id, engine mode) pairs selected by `mode`."""
        pairs = {
            "fg": [(METHOD_DOCXPLAIN_FG, MODE_FG)],
            "fgbg": [(METHOD_DOCXPLAIN_FGBG, MODE_FG_BG)],
            "both": [(METHOD_DOCXPLAIN_FG, MODE_FG),
                     (METHOD_DOCXPLAIN_FGBG, MODE_FG_BG)],
        }
        return pairs[self.mode]


def _reject_extras(spec: dict, where: str) -> None:
    if spec:
        raise ValueError(f"unknown {where} keys: {sorted(spec)}")


def _normalize_synthetic_params(params: dict) -> dict:
    params = dict(params)
    if "region" in params:
        params["region"] = tuple(params["region"])
    if "regions" in params:
        params["regions"] = [tuple(r) for r in params["regions"]]
    return params


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# -- corpus manifest ---------------------------------------------------------


def read_manifest(path) -> list[tuple[Path, int | None]]:
    """CSV of image path plus optional true-class index. Relative paths
    resolve against the manifest's directory; a 'path[,label]' header row
    is allowed and skipped."""
    base = Path(path).parent
    entries: list[tuple[Path, int | None]] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            if row[0].strip() == "path":
                continue
            img = Path(row[0].strip())
            if not img.is_absolute():
                img = base / img
            label = None
            if len(row) > 1 and row[1].strip():
                label = int(row[1])
            entries.append((img, label))
    return entries


# -- attribution method registry ---------------------------------------------


def make_explainer(method: str, config: RunConfig, sample_seed: int):
    """An explain function (f, model_image, target) -> AttributionMap that
    re-runs the named method's full pipeline; used both for the primary
    attribution and for sensitivity's re-runs."""
    if method in (METHOD_DOCXPLAIN_FG, METHOD_DOCXPLAIN_FGBG):
        mode = MODE_FG if method == METHOD_DOCXPLAIN_FG else MODE_FG_BG
        kernels = config.kernel_configs()

        def explain(f, img, target):
            from .attribution import attribute

            return attribute(f, img, kernels=kernels, target=target,
                             mode=mode, working_size=config.working_size,
                             opening=tuple(config.opening))

    elif method == METHOD_OCCLUSION:

        def explain(f, img, target):
            return occlusion_map(f, img, target,
                                 patch=tuple(config.occlusion_patch),
                                 stride=tuple(config.occlusion_stride),
                                 fill=config.occlusion_fill)

    elif method == METHOD_RANDOM:

        def explain(f, img, target):
            h, w = np.asarray(img).shape
            return random_map(w, h, sample_seed)

    else:
        raise ValueError(f"unknown method {method!r}")
    return explain


# -- corpus runner ------------------------------------------------------------


@dataclass
class SampleResult:
    index: int
    path: str
    method: str
    target: int
    report: metric_ops.MetricReport
    morf: metric_ops.PerturbationCurve
    lerf: metric_ops.PerturbationCurve
    amap: AttributionMap


def evaluate_sample(
    config: RunConfig,
    f: ClassifierHandle,
    index: int,
    image_path: Path,
    label: int | None,
    methods: list[str],
) -> list[SampleResult] | None:
    """All requested methods on one corpus image; None when the sample is
    skipped because the model misclassifies it."""
    page = load_image(image_path)
    prepared = prepare_page(page, working_size=config.working_size,
                            model_res=(f.input_width, f.input_height),
                            opening=tuple(config.opening))
    predicted = f.predict(prepared.gray_model)
    if label is not None and predicted != label:
        log.info("skipping %s: predicted %d, labeled %d",
                 image_path, predicted, label)
        return None
    target = config.target_class if config.target_class is not None else predicted

    results = []
    for m_idx, method in enumerate(methods):
        sample_seed = derive_seed(config.seed, index, m_idx)
        explain = make_explainer(method, config, sample_seed)
        amap = explain(f, prepared.gray_model, target)
        morf = metric_ops.aopc_curve(f, prepared.gray_model, amap, target,
                                     metric_ops.MORF, config.aopc_patch,
                                     config.aopc_steps)
        lerf = metric_ops.aopc_curve(f, prepared.gray_model, amap, target,
                                     metric_ops.LERF, config.aopc_patch,
                                     config.aopc_steps)
        sens = metric_ops.sensitivity(
            explain, f, prepared.gray_model, target,
            radius=config.sensitivity_radius,
            n_samples=config.sensitivity_samples,
            seed=derive_seed(config.seed, index, m_idx, 1),
        )
        infid = metric_ops.infidelity(
            f, prepared.gray_model, amap, target,
            patch=config.infidelity_patch,
            n_samples=config.infidelity_samples,
            seed=derive_seed(config.seed, index, m_idx, 2),
        )
        report = metric_ops.MetricReport(
            aopc_morf=morf.aopc,
            aopc_lerf=lerf.aopc,
            abpc=metric_ops.abpc(morf, lerf),
            sensitivity=sens.value,
            infidelity=infid,
            continuity=metric_ops.continuity(amap),
        )
        results.append(SampleResult(index=index, path=str(image_path),
                                    method=method, target=target,
                                    report=report, morf=morf, lerf=lerf,
                                    amap=amap))
    return results


def run_corpus(config: RunConfig, manifest: list, methods: list[str],
               out_dir: Path) -> dict:
    """Evaluate every manifest sample, write attributions, per-sample and
    aggregate reports, and mean perturbation curves. Individual sample
    failures are logged and excluded; more than 10% failures raises
    PartialCorpusFailure after reports are written."""
    if not manifest:
        raise click.UsageError("the corpus manifest is empty")
    f = _usage_guard(config.build_classifier)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.snapshot(out_dir)

    def work(item):
        index, (path, label) = item
        return evaluate_sample(config, f, index, path, label, methods)

    indexed = list(enumerate(manifest))
    results: list[SampleResult] = []
    failures: list[tuple[str, str]] = []
    skipped = 0
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_guard(work), indexed))
    else:
        outcomes = [_guard(work)(item) for item in indexed]
    for (index, (path, _)), outcome in zip(indexed, outcomes):
        if isinstance(outcome, Exception):
            log.error("sample %s failed: %s", path, outcome)
            failures.append((str(path), str(outcome)))
        elif outcome is None:
            skipped += 1
        else:
            results.extend(outcome)

    results.sort(key=lambda r: (r.index, r.method))
    for r in results:
        stem = Path(r.path).stem
        write_attribution(
            out_dir / "attributions" / f"{stem}_{r.method}.dxam", r.amap
        )

    rows = []
    for r in results:
        row = {"path": r.path, "method": r.method, "target": r.target}
        row.update(metric_ops.report_to_rows(r.report))
        rows.append(row)

    aggregates = {}
    for method in methods:
        sub = [r for r in results if r.method == method]
        if not sub:
            continue
        agg = metric_ops.MetricReport(
            aopc_morf=float(np.mean([r.report.aopc_morf for r in sub])),
            aopc_lerf=float(np.mean([r.report.aopc_lerf for r in sub])),
            abpc=float(np.mean([r.report.abpc for r in sub])),
            sensitivity=float(np.mean([r.report.sensitivity for r in sub])),
            infidelity=float(np.mean([r.report.infidelity for r in sub])),
            continuity=float(np.mean([r.report.continuity for r in sub])),
            n_samples=len(sub),
        )
        aggregates[method] = metric_ops.report_to_rows(agg)
        for direction, pick in ((metric_ops.MORF, lambda r: r.morf),
                                (metric_ops.LERF, lambda r: r.lerf)):
            mean_curve = metric_ops.PerturbationCurve(
                fractions=pick(sub[0]).fractions,
                drops=np.mean([pick(r).drops for r in sub], axis=0),
                direction=direction,
            )
            metric_ops.write_curve_csv(
                out_dir / "reports" / "curves"
                / f"{method}_{direction.lower()}.csv",
                mean_curve,
            )

    if rows:
        metric_ops.write_report_csv(out_dir / "reports" / "metrics.csv", rows)
    metric_ops.write_report_json(
        out_dir / "reports" / "metrics.json", rows,
        {"methods": aggregates, "skipped": skipped,
         "failed": len(failures), "failures": failures},
    )

    if failures and len(failures) > 0.1 * len(manifest):
        raise PartialCorpusFailure(
            f"{len(failures)} of {len(manifest)} samples failed; see "
            f"{out_dir / 'reports' / 'metrics.json'}"
        )
    return aggregates


def _guard(fn):
    def wrapped(item):
        try:
            return fn(item)
        except ProtocolError:
            raise  # protocol violations abort the run with exit code 2
        except Exception as exc:  # noqa: BLE001 - crash isolation per sample
            return exc

    return wrapped


# -- commands -----------------------------------------------------------------


def _load_config(config_path, **overrides) -> RunConfig:
    try:
        cfg = RunConfig.from_file(config_path) if config_path else RunConfig()
        if overrides.get("model_path"):
            with open(overrides["model_path"]) as fh:
                cfg.model = json.load(fh)
        for key in ("mode", "seed", "target_class", "workers"):
            if overrides.get(key) is not None:
                setattr(cfg, key, overrides[key])
        return cfg
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"bad configuration: {exc}")


def _common_options(fn):
    fn = click.option("--config", "config_path",
                      type=click.Path(exists=True, dir_okay=False),
                      help="JSON run configuration.")(fn)
    fn = click.option("--model", "model_path",
                      type=click.Path(exists=True, dir_okay=False),
                      help="JSON model spec; overrides the config's model.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Base random seed.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(file_okay=False),
                      default="docxplain_out", show_default=True,
                      help="Output directory.")(fn)
    fn = click.option("--target-class", type=int, default=None,
                      help="Class index to explain (default: predicted).")(fn)
    return fn


@click.group()
def cli():
    """Attribution maps and faithfulness metrics for document image
    classifiers."""


@cli.command("segment")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@_common_options
def cmd_segment(image, config_path, model_path, seed, out_dir, target_class):
    """Write per-kernel segmentation masks and PNG previews for IMAGE."""
    config = _load_config(config_path, model_path=model_path, seed=seed,
                          target_class=target_class)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.snapshot(out)
    model_res = (224, 224)
    if config.model and config.model.get("input_size"):
        model_res = tuple(config.model["input_size"])
    page = load_image(image)
    prepared = prepare_page(page, working_size=config.working_size,
                            model_res=model_res,
                            opening=tuple(config.opening))
    kernels = config.kernel_configs()
    masks = masks_for_page(prepared, kernels, model_res)
    stem = Path(image).stem
    for cfg, mask in zip(kernels, masks):
        kx, ky = cfg.fg_kernel
        name = f"{stem}_{kx}x{ky}"
        write_mask(out / "masks" / f"{name}.dxsm", mask)
        mask_to_png(out / "masks" / f"{name}.png", mask)
        click.echo(f"kernel {kx}x{ky}: n_bg={mask.n_bg} n_fg={mask.n_fg}")


@cli.command("explain")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["fg", "fgbg", "both"]),
              default=None, help="Ablation mode (default from config).")
@_common_options
def cmd_explain(image, mode, config_path, model_path, seed, out_dir,
                target_class):
    """Write attribution maps and heatmap overlays for IMAGE."""
    config = _load_config(config_path, model_path=model_path, seed=seed,
                          mode=mode, target_class=target_class)
    f = _usage_guard(config.build_classifier)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.snapshot(out)
    page = load_image(image)
    prepared = prepare_page(page, working_size=config.working_size,
                            model_res=(f.input_width, f.input_height),
                            opening=tuple(config.opening))
    target = config.target_class
    if target is None:
        target = f.predict(prepared.gray_model)
    kernels = config.kernel_configs()
    masks = masks_for_page(prepared, kernels, (f.input_width, f.input_height))
    stem = Path(image).stem
    for method, engine_mode in config.ablation_modes():
        total = np.zeros_like(prepared.gray_model)
        for m in masks:
            total += attribute_mask(f, prepared.gray_model, m, target,
                                    engine_mode).values
        amap = AttributionMap(values=total, mode=engine_mode,
                              target_class=target)
        write_attribution(out / "attributions" / f"{stem}_{method}.dxam", amap)
        heatmap_png(out / "heatmaps" / f"{stem}_{method}.png", amap,
                    prepared.gray_model)
        click.echo(f"{method}: target={target} "
                   f"|attr|max={np.abs(total).max():.6g}")


@cli.command("evaluate")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["fg", "fgbg", "both"]),
              default=None, help="Ablation mode (default from config).")
@click.option("--workers", type=int, default=None,
              help="Parallel corpus workers.")
@_common_options
def cmd_evaluate(manifest, mode, workers, config_path, model_path, seed,
                 out_dir, target_class):
    """Run the metric suite for the configured ablation mode(s) over a
    corpus MANIFEST (CSV: path[,label])."""
    config = _load_config(config_path, model_path=model_path, seed=seed,
                          mode=mode, target_class=target_class,
                          workers=workers)
    methods = [m for m, _ in config.ablation_modes()]
    entries = read_manifest(manifest)
    aggregates = run_corpus(config, entries, methods, Path(out_dir))
    _echo_aggregates(aggregates)


@cli.command("compare")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--methods", default=",".join(ALL_METHODS), show_default=True,
              help="Comma-separated subset of methods to compare.")
@click.option("--workers", type=int, default=None,
              help="Parallel corpus workers.")
@_common_options
def cmd_compare(manifest, methods, workers, config_path, model_path, seed,
                out_dir, target_class):
    """Compare attribution methods on one corpus; writes one metric row
    per method plus per-method perturbation curves."""
    chosen = [m.strip() for m in methods.split(",") if m.strip()]
    bad = [m for m in chosen if m not in ALL_METHODS]
    if bad:
        raise click.UsageError(
            f"unknown methods {bad}; choose from {', '.join(ALL_METHODS)}"
        )
    if len(chosen) < 2:
        raise click.UsageError("compare needs at least two methods")
    config = _load_config(config_path, model_path=model_path, seed=seed,
                          target_class=target_class, workers=workers)
    entries = read_manifest(manifest)
    aggregates = run_corpus(config, entries, chosen, Path(out_dir))
    _echo_aggregates(aggregates)


def _usage_guard(builder):
    try:
        return builder()
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _echo_aggregates(aggregates: dict) -> None:
    cols = ("abpc", "aopc_morf", "aopc_lerf", "sensitivity", "infidelity",
            "continuity", "n_samples")
    click.echo("method            " + "  ".join(f"{c:>11}" for c in cols))
    for method, agg in aggregates.items():
        cells = []
        for c in cols:
            v = agg[c]
            cells.append(f"{v:11.5f}" if isinstance(v, float) else f"{v:>11}")
        click.echo(f"{method:<18}" + "  ".join(cells))


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    level = os.environ.get("DOCXPLAIN_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, prog_name="docxplain", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except ProtocolError as exc:
        click.echo(f"model protocol error: {exc}", err=True)
        return EXIT_PROTOCOL
    except PartialCorpusFailure as exc:
        click.echo(f"partial corpus failure: {exc}", err=True)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
