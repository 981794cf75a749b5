"""Command-line entry point.

Subcommands: build-index, retrieve, degrade, build-dataset, train, infer,
evaluate, ablate, bench-index, synth-data. All randomness flows from --seed
(default overridable via RASR_SEED). Exit codes: 0 success, 2 usage error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import dataset as ds
from .degradation import DegradationConfig, degrade
from .embedding import EncoderSpec, encode
from .errors import EmptyIndex, InvalidInput, IoError, NonFiniteLoss, RasrError
from .generator import GeneratorState, combine_prompts, generate, load_checkpoint
from .imgio import list_images, load_image, save_image
from .metrics import MetricReport, evaluate, evaluate_pairs
from .retrieval import (
    ReferenceRecord,
    benchmark_query,
    build_index,
    load_index,
    query,
    save_index,
)
from .synth import write_toy_dataset
from .training import TrainConfig, train_loop

PROMPT_SOURCES = ("none", "lr", "ref", "ref+lr")


def _default_seed() -> int:
    return int(os.environ.get("RASR_SEED", "0"))


def _limit_torch_threads() -> None:
    # single-threaded math keeps repeated runs bitwise identical
    import torch

    torch.set_num_threads(int(os.environ.get("RASR_THREADS", "1")))


# ---------------------------------------------------------------------------
# pipeline composition


@dataclass
class PipelineRun:
    index_path: str
    checkpoint_path: str
    input_dir: str
    output_dir: str
    alpha: float = 0.5
    prompt_source: str = "ref+lr"
    reference_mode: str = "retrieval"  # retrieval | random
    prompts_path: str | None = None
    gt_dir: str | None = None
    metrics: tuple[str, ...] = ("psnr", "ssim")
    jobs: int = 1
    encoder: EncoderSpec = EncoderSpec()
    method: str = "rasr"
    seed: int = 0

    def __post_init__(self):
        if self.prompt_source not in PROMPT_SOURCES:
            raise InvalidInput(
                f"prompt source must be one of {PROMPT_SOURCES}, got {self.prompt_source!r}"
            )
        if self.reference_mode not in ("retrieval", "random"):
            raise InvalidInput(f"unknown reference mode {self.reference_mode!r}")


def _pick_prompt(source: str, ref_prompt: str, lr_prompt: str) -> str:
    if source == "none":
        return ""
    if source == "lr":
        return lr_prompt
    if source == "ref":
        return ref_prompt
    return combine_prompts(ref_prompt, lr_prompt)


def _select_reference(index, emb, mode: str, rng: np.random.Generator):
    if mode == "random":
        return index.records[int(rng.integers(len(index)))]
    hit = query(index, emb, k=1)[0]
    for rec in index.records:
        if rec.id == hit.id:
            return rec
    raise EmptyIndex("retrieval returned an unknown record")  # unreachable


def _output_name(fname: str) -> str:
    stem, ext = os.path.splitext(fname)
    return fname if ext.lower() == ".png" else stem + ".png"


def run_rasr(run: PipelineRun, state: GeneratorState | None = None) -> MetricReport:
    """Retrieve -> combine prompts -> generate for every image in a directory."""
    index = load_index(run.index_path)
    if len(index) == 0:
        raise EmptyIndex(f"index {run.index_path} holds no records")
    if state is None:
        state, _ = load_checkpoint(run.checkpoint_path)
    prompts_map = {}
    if run.prompts_path:
        try:
            with open(run.prompts_path) as fh:
                prompts_map = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read prompts file {run.prompts_path}: {exc}") from exc
    files = list_images(run.input_dir)
    if not files:
        raise IoError(f"no images in {run.input_dir}")
    os.makedirs(run.output_dir, exist_ok=True)

    def process(fname: str) -> None:
        lr = load_image(os.path.join(run.input_dir, fname))
        emb = encode(lr, run.encoder)
        rng = np.random.default_rng(
            np.random.SeedSequence([run.seed, ds.path_id(fname)]))
        rec = _select_reference(index, emb, run.reference_mode, rng)
        ref = load_image(rec.path)
        prompt = _pick_prompt(run.prompt_source, rec.category,
                              prompts_map.get(fname, ""))
        out = generate(state, lr, ref, prompt, alpha=run.alpha)
        save_image(os.path.join(run.output_dir, _output_name(fname)), out)

    if run.jobs > 1:
        with ThreadPoolExecutor(max_workers=run.jobs) as pool:
            list(pool.map(process, files))
    else:
        for fname in files:
            process(fname)

    if run.gt_dir:
        report = evaluate(run.output_dir, run.gt_dir, run.metrics, method=run.method)
        return report
    return MetricReport(method=run.method, dataset=os.path.basename(run.input_dir))


# ---------------------------------------------------------------------------
# manifest-level evaluation (shared by ablations and the acceptance harness)


def evaluate_on_manifest(state: GeneratorState, manifest: ds.DatasetManifest,
                         encoder_spec: EncoderSpec,
                         deg_config: DegradationConfig, seed: int,
                         alpha: float = 0.5, reference_mode: str = "retrieval",
                         prompt_source: str = "ref",
                         patch: int | None = None) -> dict:
    """Degrade each test image, pick a reference, generate, score against GT.

    Returns per-image MSE/PSNR plus their means. The reference pool is the
    manifest's full reference set (open across categories, as at inference).
    """
    records = []
    for cat in manifest.categories:
        for p in cat.reference_paths:
            records.append(ReferenceRecord(
                id=ds.path_id(p), category=cat.name, path=p,
                embedding=encode(load_image(p), encoder_spec).vector))
    if not records:
        raise EmptyIndex("manifest has no reference images")
    index = build_index(records, encoder_spec)

    patch = patch or manifest.patch_size_train
    mse_values, psnr_values = [], []
    details = []
    from .metrics import psnr as psnr_metric

    i = 0
    for cat in manifest.categories:
        for path in cat.test_paths:
            gt = load_image(path)
            h = (min(gt.shape[0], patch) // 8) * 8
            w = (min(gt.shape[1], patch) // 8) * 8
            gt = gt[:h, :w]
            lr, _ = degrade(gt, deg_config, seed=seed + i)
            emb = encode(lr, encoder_spec)
            rng = np.random.default_rng(np.random.SeedSequence([seed, 4, i]))
            rec = _select_reference(index, emb, reference_mode, rng)
            prompt = _pick_prompt(prompt_source, rec.category, cat.prompt)
            out = generate(state, lr, load_image(rec.path), prompt, alpha=alpha)
            mse = float(np.mean((out.astype(np.float64) - gt.astype(np.float64)) ** 2))
            mse_values.append(mse)
            psnr_values.append(psnr_metric(out, gt))
            details.append({"path": path, "category": cat.name, "mse": mse,
                            "reference": rec.path, "ref_category": rec.category})
            i += 1
    return {
        "mse_mean": float(np.mean(mse_values)),
        "psnr_mean": float(np.mean(psnr_values)),
        "per_image": details,
    }


def run_ablation(kind: str, config: dict) -> list[dict]:
    """Run a variant grid and return one row of metric means per variant."""
    if kind == "prompts":
        variants = config.get("variants", list(PROMPT_SOURCES))
        rows = []
        for source in variants:
            run = PipelineRun(
                index_path=config["index"], checkpoint_path=config["checkpoint"],
                input_dir=config["input"], gt_dir=config.get("gt"),
                output_dir=os.path.join(config["out_root"], source.replace("+", "_")),
                alpha=float(config.get("alpha", 0.5)), prompt_source=source,
                prompts_path=config.get("prompts"),
                metrics=tuple(config.get("metrics", ("psnr", "ssim"))),
                encoder=_encoder_from_config(config), seed=int(config.get("seed", 0)),
                method=f"prompt={source}",
            )
            report = run_rasr(run)
            rows.append({"prompt_source": source, **report.means})
        return rows

    if kind == "encoders":
        variants = config.get("variants", ["none", "toy"])
        rows = []
        for enc_name in variants:
            mode = "random" if enc_name == "none" else "retrieval"
            run = PipelineRun(
                index_path=config["index"], checkpoint_path=config["checkpoint"],
                input_dir=config["input"], gt_dir=config.get("gt"),
                output_dir=os.path.join(config["out_root"], f"enc_{enc_name}"),
                alpha=float(config.get("alpha", 0.5)),
                prompt_source=config.get("prompt_source", "ref"),
                reference_mode=mode,
                metrics=tuple(config.get("metrics", ("psnr", "ssim"))),
                encoder=_encoder_from_config(config), seed=int(config.get("seed", 0)),
                method=f"encoder={enc_name}",
            )
            report = run_rasr(run)
            rows.append({"encoder": enc_name, **report.means})
        return rows

    if kind == "losses":
        manifest = ds.load_manifest(config["manifest"])
        base = TrainConfig.from_json(config.get("train", {}))
        variants = config.get("variants")
        if variants is None:
            gram, gan = base.loss_weights.lambda_gram, base.loss_weights.lambda_gan
            variants = [
                {"lambda_gram": 0.0, "lambda_gan": 0.0},
                {"lambda_gram": gram, "lambda_gan": 0.0},
                {"lambda_gram": 0.0, "lambda_gan": gan},
                {"lambda_gram": gram, "lambda_gan": gan},
            ]
        rows = []
        for variant in variants:
            weights = replace(base.loss_weights, **variant)
            cfg = TrainConfig.from_json({**base.to_json(), **weights.to_json()})
            state, _, logs = train_loop(manifest, cfg)
            result = evaluate_on_manifest(
                state, manifest, manifest.encoder or EncoderSpec(),
                cfg.degradation, seed=cfg.seed,
                alpha=cfg.generator.fusion_alpha_infer)
            rows.append({**variant, "final_loss": logs[-1]["total"],
                         "psnr": result["psnr_mean"], "mse": result["mse_mean"]})
        return rows

    raise InvalidInput(f"unknown ablation kind {kind!r}")


# ---------------------------------------------------------------------------
# subcommand handlers


def _encoder_from_config(cfg: dict) -> EncoderSpec:
    return EncoderSpec(name=cfg.get("encoder", "toy"), dim=int(cfg.get("dim", 64)),
                       seed=int(cfg.get("encoder_seed", 0)))


def _encoder_from_args(args) -> EncoderSpec:
    return EncoderSpec(name=args.encoder, dim=args.dim, seed=args.encoder_seed)


def _scan_categories(images_dir: str) -> dict[str, list[str]]:
    if not os.path.isdir(images_dir):
        raise IoError(f"not a directory: {images_dir}")
    subdirs = sorted(
        d for d in os.listdir(images_dir)
        if os.path.isdir(os.path.join(images_dir, d))
    )
    if subdirs:
        return {
            d: [os.path.join(images_dir, d, f)
                for f in list_images(os.path.join(images_dir, d))]
            for d in subdirs
        }
    name = os.path.basename(os.path.normpath(images_dir))
    return {name: [os.path.join(images_dir, f) for f in list_images(images_dir)]}


def _cmd_build_index(args) -> None:
    spec = _encoder_from_args(args)
    records = []
    for category, paths in sorted(_scan_categories(args.images).items()):
        for path in paths:
            emb = encode(load_image(path), spec)
            records.append(ReferenceRecord(id=ds.path_id(path), category=category,
                                           path=path, embedding=emb.vector))
    index = build_index(records, spec)
    save_index(index, args.out)
    print(f"indexed {len(index)} images (dim {index.dim}) -> {args.out}")


def _cmd_retrieve(args) -> None:
    index = load_index(args.index)
    spec = _encoder_from_args(args)
    emb = encode(load_image(args.query), spec)
    hits = query(index, emb, k=args.k, category=args.category)
    payload = [
        {"id": h.id, "category": h.category, "path": h.path,
         "similarity": h.similarity}
        for h in hits
    ]
    print(json.dumps(payload, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)


def _cmd_degrade(args) -> None:
    if args.config:
        with open(args.config) as fh:
            config = DegradationConfig.from_json(json.load(fh))
    else:
        config = DegradationConfig(scale=args.scale)
    os.makedirs(args.out, exist_ok=True)
    for fname in list_images(args.infile):
        hr = load_image(os.path.join(args.infile, fname))
        seed = int(np.random.default_rng(
            np.random.SeedSequence([args.seed, ds.path_id(fname)])).integers(2**62))
        lr, trace = degrade(hr, config, seed)
        save_image(os.path.join(args.out, _output_name(fname)), lr)
        if args.trace_dir:
            os.makedirs(args.trace_dir, exist_ok=True)
            with open(os.path.join(args.trace_dir, fname + ".json"), "w") as fh:
                json.dump({"seed": trace.seed, "stages": trace.stages}, fh, indent=2)
    print(f"degraded {len(list_images(args.infile))} images -> {args.out}")


def _cmd_build_dataset(args) -> None:
    categories = _scan_categories(args.root)
    manifest = ds.partition(categories, seed=args.seed,
                            train_count=args.train_count,
                            test_count=args.test_count,
                            patch_size_train=args.patch_train,
                            patch_size_source=args.patch_source)
    if args.preselect > 0:
        manifest = ds.preselect_references(manifest, _encoder_from_args(args),
                                           n=args.preselect)
    ds.save_manifest(manifest, args.out)
    n_train = len(manifest.train_items())
    print(f"manifest with {len(manifest.categories)} categories, "
          f"{n_train} train images -> {args.out}")


def _cmd_train(args) -> None:
    _limit_torch_threads()
    with open(args.config) as fh:
        config = TrainConfig.from_json(json.load(fh))
    manifest = ds.load_manifest(args.manifest)
    state, _, logs = train_loop(manifest, config, out_dir=args.out,
                                resume_from=args.resume)
    print(f"trained {config.steps} steps; final loss {logs[-1]['total']:.6f}; "
          f"checkpoints in {args.out}")


def _cmd_infer(args) -> None:
    _limit_torch_threads()
    spec = _encoder_from_args(args)
    if os.path.isdir(args.lr):
        run = PipelineRun(
            index_path=args.index, checkpoint_path=args.ckpt, input_dir=args.lr,
            output_dir=args.out, alpha=args.alpha, prompt_source=args.prompt_source,
            prompts_path=args.prompts, gt_dir=args.gt,
            metrics=tuple(args.metrics.split(",")), jobs=args.jobs,
            encoder=spec, seed=args.seed,
        )
        report = run_rasr(run)
        if args.report:
            report.save(args.report)
        if report.means:
            print(json.dumps(report.means, indent=2, sort_keys=True))
        return
    state, _ = load_checkpoint(args.ckpt)
    index = load_index(args.index)
    lr = load_image(args.lr)
    emb = encode(lr, spec)
    rng = np.random.default_rng(
        np.random.SeedSequence([args.seed, ds.path_id(os.path.basename(args.lr))]))
    rec = _select_reference(index, emb, "retrieval", rng)
    prompts_map = {}
    if args.prompts:
        with open(args.prompts) as fh:
            prompts_map = json.load(fh)
    prompt = _pick_prompt(args.prompt_source, rec.category,
                          prompts_map.get(os.path.basename(args.lr), ""))
    out = generate(state, lr, load_image(rec.path), prompt, alpha=args.alpha)
    save_image(args.out, out)
    print(f"reference: {rec.path} (sim path); wrote {args.out}")


def _cmd_evaluate(args) -> None:
    report = evaluate(args.pred, args.gt, tuple(args.metrics.split(",")))
    if args.out:
        report.save(args.out)
    print(json.dumps(report.to_json()["metrics"], indent=2, sort_keys=True,
                     default=float))
    if report.unavailable:
        print(f"unavailable: {', '.join(report.unavailable)}")


def _cmd_ablate(args) -> None:
    _limit_torch_threads()
    with open(args.config) as fh:
        config = json.load(fh)
    rows = run_ablation(args.kind, config)
    if args.out.endswith(".csv"):
        fields: list[str] = []
        for row in rows:
            fields.extend(k for k in row if k not in fields)
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    else:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    print(f"{len(rows)} ablation rows -> {args.out}")


def _cmd_bench_index(args) -> None:
    if args.index:
        index = load_index(args.index)
    else:
        rng = np.random.default_rng(args.seed)
        vecs = rng.standard_normal((args.synthetic, args.dim)).astype(np.float32)
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        records = [
            ReferenceRecord(id=i, category="synthetic", path=f"synthetic/{i}",
                            embedding=vecs[i])
            for i in range(args.synthetic)
        ]
        index = build_index(records, dim=args.dim)
    stats = benchmark_query(index, n_queries=args.queries, k=args.k, seed=args.seed)
    print(json.dumps(stats, indent=2, sort_keys=True))


def _cmd_synth_data(args) -> None:
    layout = write_toy_dataset(args.out, categories=args.categories,
                               per_category=args.per_category, size=args.size,
                               seed=args.seed)
    total = sum(len(v) for v in layout.values())
    print(f"wrote {total} images across {len(layout)} categories -> {args.out}")


# ---------------------------------------------------------------------------
# parser


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder", default="toy", help="encoder name (default: toy)")
    p.add_argument("--dim", type=int, default=64, help="embedding dimension")
    p.add_argument("--encoder-seed", type=int, default=0, help="toy encoder seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rasr",
        description="Retrieval-augmented super resolution pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _default_seed()

    p = sub.add_parser("build-index", help="embed reference images into an index file")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("retrieve", help="top-k similar references for a query image")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--category", default=None, help="restrict search to one category")
    p.add_argument("--out", default=None)
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("degrade", help="synthesize low-resolution inputs")
    p.add_argument("--in", dest="infile", required=True, metavar="DIR")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--config", default=None, help="degradation config JSON")
    p.add_argument("--trace-dir", default=None)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("build-dataset", help="partition categories and preselect references")
    p.add_argument("--root", required=True)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)
    p.add_argument("--train-count", type=int, default=ds.TRAIN_PER_CATEGORY)
    p.add_argument("--test-count", type=int, default=ds.TEST_PER_CATEGORY)
    p.add_argument("--patch-source", type=int, default=768)
    p.add_argument("--patch-train", type=int, default=512)
    p.add_argument("--preselect", type=int, default=ds.PRESELECT_COUNT)
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("train", help="train the generator on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="super-resolve one image or a directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lr", required=True, help="input image or directory")
    p.add_argument("--index", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--prompt-source", default="ref+lr", choices=PROMPT_SOURCES)
    p.add_argument("--prompts", default=None, help="JSON map filename -> prompt")
    p.add_argument("--gt", default=None)
    p.add_argument("--metrics", default="psnr,ssim")
    p.add_argument("--report", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=seed_default)
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--metrics", default="psnr,ssim")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="run a variant grid (prompts/losses/encoders)")
    p.add_argument("--kind", required=True, choices=("prompts", "losses", "encoders"))
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("bench-index", help="retrieval latency statistics")
    p.add_argument("--index", default=None)
    p.add_argument("--synthetic", type=int, default=84991,
                   help="build an in-memory synthetic index of this size")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=_cmd_bench_index)

    p = sub.add_parser("synth-data", help="write a procedurally textured toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=8)
    p.add_argument("--per-category", type=int, default=45)
    p.add_argument("--size", type=int, default=320)
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=_cmd_synth_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        args.func(args)
        return 0
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except RasrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())
