"""fedfewshot command line: extract, gen-synthetic, train-local, train-fed, eval, bench.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 runtime error.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config
from .data import DatasetManifest, FeatureCache, default_class_specs, generate_synthetic
from .dsp import read_wav
from .errors import ConfigError, DataError, FedFewShotError
from .experiment import evaluate, make_model_factory, prepare_data, run_dtype, train_federated, train_local, write_run
from .federated import Server, aggregate, load_checkpoint
from .metrics import TimingReport, render_table, write_summary_json
from .params import ParameterSet
from .protocol import MessageKind, RoundMessage, deserialize_message, serialize_message

log = logging.getLogger("fedfewshot")


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "output", None):
        overrides.append(f"output_dir={args.output}")
    return load_config(args.config, overrides)


def cmd_extract(args):
    cfg = _config(args)
    manifest = DatasetManifest.read(args.manifest)
    cache = FeatureCache(args.cache_dir)
    root = Path(args.root) if args.root else Path(args.manifest).parent
    failures = 0
    for entry in manifest.entries:
        try:
            clip = read_wav(manifest.resolve(entry, root), label=entry.label, source_id=entry.clip_id)
            cache.get_or_compute(clip, cfg.features)
        except DataError as exc:
            failures += 1
            log.error("%s: %s", entry.path, exc)
    print(f"clips={len(manifest)} extracted={cache.misses} cached={cache.hits} failed={failures}")
    return 2 if failures else 0


def cmd_gen_synthetic(args):
    cfg = _config(args)
    d = cfg.data
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(default_class_specs(d.n_classes), d.per_class, d.duration_s,
                            d.sample_rate, seed=cfg.seed, out_dir=out)
    print(f"wrote {len(ds.clips)} clips and {out / 'manifest.tsv'}")
    return 0


def _finish(cfg, result, kind):
    out = write_run(cfg.output_dir, cfg, result, kind)
    if result.summary is not None:
        print(render_table({kind: result.summary}, title=f"{cfg.spec.describe()} novel-class F1"))
    print(f"outputs in {out}")
    return 0


def cmd_train_local(args):
    cfg = _config(args)
    return _finish(cfg, train_local(cfg), "local")


def cmd_train_fed(args):
    cfg = _config(args)

    def progress(report):
        log.info("round %d loss=%.4f acc=%.3f aggregate=%.2fms update=%.2fms", report.round_index,
                 report.mean_loss, report.mean_accuracy, report.aggregate_ms, report.update_ms)

    return _finish(cfg, train_federated(cfg, per_client_eval=True, on_round=progress), "federated")


def cmd_eval(args):
    cfg = _config(args)
    with run_dtype(cfg):
        data = prepare_data(cfg)
        model = make_model_factory(cfg, data.input_shape)()
        model.load_parameter_set(load_checkpoint(args.checkpoint))
        summary = evaluate(cfg, model, data.novel_pool)
    print(render_table({"checkpoint": summary}, title=f"{cfg.spec.describe()} novel-class F1"))
    if args.json:
        write_summary_json(args.json, summary.to_dict())
    return 0


def bench_params(total, rng, n_entries=4):
    sizes = np.full(n_entries, total // n_entries)
    sizes[: total % n_entries] += 1
    return ParameterSet(
        (f"w{i}", rng.standard_normal(int(s)).astype(np.float32)) for i, s in enumerate(sizes) if s
    ) if total else ParameterSet()


def run_bench(params_factory, num_clients, rounds):
    """Aggregate + serialize/broadcast/apply timings on synthetic uploads, no training."""
    timing = TimingReport()
    rng = np.random.default_rng(0)
    uploads = [params_factory(rng) for _ in range(num_clients)]
    server = Server(uploads[0])
    replicas = [u.copy() for u in uploads]
    for r in range(rounds):
        frames = [serialize_message(RoundMessage(MessageKind.UPLOAD, r, u, 1, p))
                  for u, p in enumerate(uploads)]
        t0 = time.perf_counter()
        msgs = [deserialize_message(f) for f in frames]
        new_global = aggregate([(m.client_id, m.params, m.beta) for m in msgs])
        t1 = time.perf_counter()
        server.global_params = new_global
        frame = server.global_frame()
        for replica in replicas:
            incoming = deserialize_message(frame).params
            for dst, src in zip(replica.arrays(), incoming.arrays()):
                np.copyto(dst, src)
        t2 = time.perf_counter()
        timing.add((t1 - t0) * 1000, (t2 - t1) * 1000)
    return timing


def cmd_bench(args):
    cfg = _config(args)
    if args.rounds < 30:
        raise ConfigError("bench needs at least 30 rounds")
    if args.params is not None:
        factory = lambda rng: bench_params(args.params, rng)
        what = f"{args.params} synthetic values"
    else:
        with run_dtype(cfg):
            shape = (1, cfg.features.n_mfcc, 14)
            template = make_model_factory(cfg, shape)().parameter_set()
        factory = lambda rng: ParameterSet(
            (n, rng.standard_normal(a.shape).astype(np.float32)) for n, a in template.items()
        )
        what = f"{cfg.model.architecture}, {template.total_size} values"
    timing = run_bench(factory, cfg.fed.num_clients, args.rounds)
    text = f"FedAvg timing: {cfg.fed.num_clients} clients, {what}\n{timing.render()}\n"
    print(text, end="")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "timing.txt").write_text(text + "\n" + "\n".join(timing.per_round_lines()) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fedfewshot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int)
        if output:
            p.add_argument("--output", help="output directory (overrides output_dir)")
        return p

    p = common(sub.add_parser("extract", help="cache MFCC blocks for a manifest"), output=False)
    p.add_argument("manifest")
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--root", help="directory manifest paths are relative to")
    p.set_defaults(func=cmd_extract)

    p = common(sub.add_parser("gen-synthetic", help="write the synthetic dataset as WAV + manifest"),
               output=False)
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_gen_synthetic)

    common(sub.add_parser("train-local", help="train on one client's partition")).set_defaults(
        func=cmd_train_local)
    common(sub.add_parser("train-fed", help="run federated training rounds")).set_defaults(
        func=cmd_train_fed)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint on the novel classes"), output=False)
    p.add_argument("checkpoint")
    p.add_argument("--json", help="also write the summary as JSON")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("bench", help="time weight averaging and update"))
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--params", type=int, help="synthetic parameter count instead of the model's")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (FedFewShotError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
