"""End-to-end runs shared by the CLI and the acceptance suite."""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import default_dtype
from .config import config_to_text
from .data import (
    DatasetManifest,
    FOLD_PRESETS,
    FeatureCache,
    augment_with_noise,
    build_pool,
    default_class_specs,
    generate_synthetic,
    make_fold,
    partition_clients,
)
from .errors import DataError, InsufficientClasses, InsufficientSamplesPerClass
from .federated import Federation, FederationConfig, save_checkpoint
from .fewshot import evaluate_novel, run_local_training
from .metrics import TimingReport, render_table, write_summary_json
from .nn.models import build_model
from .seeding import int_seed, rng_for

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    pool: object  # LabeledPool with every clip
    label_space: object
    clients: list  # ClientDataset per client
    input_shape: tuple

    @property
    def novel_pool(self):
        return self.pool.restrict(self.label_space.novel_labels)


def _fold_pair(fold):
    if fold in FOLD_PRESETS:
        return fold
    parts = [p.strip() for p in fold.split(",")]
    if len(parts) != 2:
        raise DataError(f"fold must be a preset ({', '.join(FOLD_PRESETS)}) or 'label A,label B'")
    return tuple(parts)


def load_clips(cfg):
    d = cfg.data
    if d.source == "synthetic":
        specs = default_class_specs(d.n_classes)
        ds = generate_synthetic(specs, d.per_class, d.duration_s, d.sample_rate, seed=cfg.seed)
        clips = ds.clips
    else:
        manifest = DatasetManifest.read(d.source)
        clips = manifest.load_clips(d.root or Path(d.source).parent)
    if d.noise_ratio > 0:
        noise = DatasetManifest.read(d.noise_manifest)
        noise_clips = noise.load_clips(Path(d.noise_manifest).parent)
        clips = augment_with_noise(clips, noise_clips, d.noise_ratio, cfg.seed)
    return clips


def prepare_data(cfg, clips=None):
    clips = load_clips(cfg) if clips is None else clips
    if not clips:
        raise DataError("dataset is empty")
    cache = FeatureCache(cfg.data.cache_dir) if cfg.data.cache_dir else None
    pool = build_pool(clips, cfg.features, cache)
    space = make_fold(pool.classes(), _fold_pair(cfg.data.fold))
    clients = partition_clients(pool, space, cfg.fed.num_clients, cfg.seed, cfg.spec,
                                cfg.data.dirichlet_alpha)
    return PreparedData(pool, space, clients, (1,) + pool.X.shape[1:])


def make_model_factory(cfg, input_shape):
    m = cfg.model
    kwargs = {"attention": m.attention}
    kwargs["channels" if m.architecture == "proto_conv_small" else "width"] = m.channels
    seed = int_seed(cfg.seed, "init")
    dtype = np.dtype(cfg.dtype)

    def factory():
        model = build_model(m.architecture, input_shape, m.embed_dim, seed=seed, **kwargs)
        return model.to_dtype(dtype) if dtype != np.float32 else model

    return factory


@contextmanager
def run_dtype(cfg):
    with default_dtype(np.dtype(cfg.dtype)):
        yield


class MetricsLog:
    """Line-oriented metrics.txt: only seeded quantities, never wall-clock times."""

    def __init__(self, path=None):
        self.lines = []
        self.path = path

    def episode(self, round_index, client, index, loss, acc):
        self.lines.append(
            f"round={round_index} client={client} episode={index} loss={loss:.6f} accuracy={acc:.4f}"
        )

    def summary(self, scope, summary):
        for label, score in summary.scores.items():
            self.lines.append(
                f"eval scope={scope} label={label} f1_mean={score.mean:.6f} "
                f"f1_std={score.std:.6f} episodes={score.episodes}"
            )

    def write(self, path=None):
        path = path or self.path
        with open(path, "w") as fh:
            fh.write("\n".join(self.lines) + "\n")


def evaluate(cfg, model, pool, scope="pooled"):
    return evaluate_novel(model, pool, cfg.spec, cfg.eval.episodes, rng_for(cfg.seed, "eval", scope),
                          cfg.train.distance, fold=cfg.data.fold)


@dataclass
class RunResult:
    params: object
    summary: object  # MetricSummary on the pooled novel set
    metrics: MetricsLog
    extra: dict

    @property
    def novel_f1(self):
        return {label: s.mean for label, s in self.summary.scores.items()}


def train_local(cfg, data=None, evaluate_model=True):
    """One client's partition, ``cfg.local_episode_budget`` episodes, then novel-class evaluation."""
    with run_dtype(cfg):
        data = data or prepare_data(cfg)
        u = cfg.train.local_client
        model = make_model_factory(cfg, data.input_shape)()
        log_ = MetricsLog()
        params, stats = run_local_training(
            model, data.clients[u].base_pool, cfg.spec, cfg.local_episode_budget, cfg.train.lr,
            rng_for(cfg.seed, "episodes", u), distance=cfg.train.distance,
            optimizer_name=cfg.train.optimizer,
            on_episode=lambda e, loss, acc: log_.episode(0, u, e, loss, acc),
        )
        summary = None
        if evaluate_model:
            summary = evaluate(cfg, model, data.novel_pool)
            log_.summary("pooled", summary)
        return RunResult(params, summary, log_,
                         {"model": model, "stats": stats, "data": data})


def federation_config(cfg):
    return FederationConfig(
        num_clients=cfg.fed.num_clients, rounds=cfg.fed.rounds,
        episodes_per_round=cfg.train.episodes_per_round, spec=cfg.spec, lr=cfg.train.lr,
        seed=cfg.seed, transport=cfg.fed.transport, address=(cfg.fed.host, cfg.fed.port),
        timeout_s=cfg.fed.timeout_s, optimizer=cfg.train.optimizer, distance=cfg.train.distance,
    )


def train_federated(cfg, data=None, evaluate_model=True, per_client_eval=False, on_round=None):
    with run_dtype(cfg):
        data = data or prepare_data(cfg)
        fcfg = federation_config(cfg)
        factory = make_model_factory(cfg, data.input_shape)
        fed = Federation(fcfg, factory, [c.base_pool for c in data.clients])
        log_ = MetricsLog()
        timing = TimingReport()

        def record(report):
            for cid in sorted(report.client_stats):
                st = report.client_stats[cid]
                for e, (loss, acc) in enumerate(zip(st.losses, st.accuracies)):
                    log_.episode(report.round_index, cid, e, loss, acc)
            timing.add(report.aggregate_ms, report.update_ms)
            if on_round is not None:
                on_round(report)

        reports = fed.run(on_round=record)
        summary = None
        client_summaries = {}
        if evaluate_model:
            summary = evaluate(cfg, fed.global_model, data.novel_pool)
            log_.summary("pooled", summary)
            if per_client_eval:
                for c in data.clients:
                    try:
                        s = evaluate(cfg, fed.global_model, c.novel_pool, scope=f"client{c.client_id}")
                    except (InsufficientClasses, InsufficientSamplesPerClass) as exc:
                        log.warning("client %d novel pool too small to evaluate: %s", c.client_id, exc)
                        continue
                    client_summaries[c.client_id] = s
                    log_.summary(f"client{c.client_id}", s)
        return RunResult(fed.global_params, summary, log_,
                         {"federation": fed, "reports": reports, "timing": timing,
                          "client_summaries": client_summaries, "data": data})


def write_run(out_dir, cfg, result, kind):
    """Config echo, checkpoint, metrics.txt, metrics.json and timing.txt."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(cfg))
    save_checkpoint(out / "checkpoints" / "final.f2lc", result.params)
    result.metrics.write(out / "metrics.txt")
    payload = {"kind": kind, "seed": cfg.seed}
    if result.summary is not None:
        payload["pooled"] = result.summary.to_dict()
        columns = {kind: result.summary}
        for cid, s in result.extra.get("client_summaries", {}).items():
            payload.setdefault("clients", {})[str(cid)] = s.to_dict()
            columns[f"client {cid}"] = s
        (out / "table.txt").write_text(
            render_table(columns, title=f"Novel-class F1, {cfg.spec.describe()}, {cfg.data.fold}") + "\n"
        )
    stats = result.extra.get("stats")
    if stats is not None:
        payload["train"] = {"episodes": stats.beta, "mean_loss": stats.mean_loss,
                            "mean_accuracy": stats.mean_accuracy}
    write_summary_json(out / "metrics.json", payload)
    timing = result.extra.get("timing")
    if timing is not None:
        (out / "timing.txt").write_text(timing.render() + "\n\n" + "\n".join(timing.per_round_lines()) + "\n")
    return out
