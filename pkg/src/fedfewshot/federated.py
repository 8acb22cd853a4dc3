"""Synchronous FedAvg: local training, upload, weighted aggregation, broadcast.

Clients and server only ever exchange serialized :class:`RoundMessage` frames,
even in-process, so both transports exercise the same byte path.
"""

import logging
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import default_dtype, get_default_dtype, make_optimizer
from .errors import (
    ClientTimeout,
    ConfigError,
    FederationError,
    ProtocolError,
    StructureMismatch,
    ZeroTotalTasks,
)
from .fewshot import EpisodeSpec, LocalStats, run_local_training
from .params import ParameterSet
from .protocol import (
    MessageKind,
    RoundMessage,
    deserialize_message,
    frame as length_prefixed,
    recv_message,
    send_message,
    serialize_message,
)
from .seeding import rng_for

log = logging.getLogger(__name__)

TRANSPORTS = ("inprocess", "socket")


def aggregate(uploads):
    """β-weighted mean of ``[(client_id, ParameterSet, beta), ...]``.

    Terms are accumulated in float64 in ascending client-id order, whatever the
    arrival order, then cast back to the upload dtype.
    """
    uploads = sorted(uploads, key=lambda u: u[0])
    if not uploads:
        raise ZeroTotalTasks("no uploads to aggregate")
    for cid, _, beta in uploads:
        if beta < 0:
            raise FederationError(f"client {cid} reported negative task count {beta}")
    total = sum(int(b) for _, _, b in uploads)
    if total <= 0:
        raise ZeroTotalTasks("total task count is zero")
    reference = uploads[0][1]
    for cid, params, _ in uploads[1:]:
        reference.check_compatible(params, who=f"client {cid}")
    out = ParameterSet()
    for name in reference.names():
        acc = None
        lo = hi = None
        for _, params, beta in uploads:
            w = params[name]
            term = (beta / total) * w.astype(np.float64)
            acc = term if acc is None else acc + term
            lo = w if lo is None else np.minimum(lo, w)
            hi = w if hi is None else np.maximum(hi, w)
        # the weights sum to 1 only up to rounding; keep the result in the hull
        out.add(name, np.clip(acc, lo, hi).astype(reference[name].dtype))
    return out


@dataclass
class FederationConfig:
    num_clients: int = 5
    rounds: int = 40
    episodes_per_round: int = 100
    spec: EpisodeSpec = field(default_factory=EpisodeSpec)
    lr: float = 1e-3
    seed: int = 0
    transport: str = "inprocess"
    address: tuple = ("127.0.0.1", 0)
    timeout_s: float = 300.0
    optimizer: str = "adam"
    distance: str = "squared_euclidean"

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.episodes_per_round < 0:
            raise ConfigError("episodes_per_round must be >= 0")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"unknown transport {self.transport!r}; choose from {TRANSPORTS}")


@dataclass
class RoundReport:
    round_index: int
    aggregate_ms: float
    update_ms: float
    betas: dict
    client_stats: dict

    @property
    def mean_loss(self):
        losses = [l for s in self.client_stats.values() for l in s.losses]
        return float(np.mean(losses)) if losses else 0.0

    @property
    def mean_accuracy(self):
        accs = [a for s in self.client_stats.values() for a in s.accuracies]
        return float(np.mean(accs)) if accs else 0.0


class Client:
    """One device: a private base-class pool, a model replica and its optimizer.

    Optimizer moments and the episode sampler persist across rounds; only the
    parameters are overwritten by each broadcast.
    """

    def __init__(self, client_id, model, base_pool, config):
        self.client_id = client_id
        self.model = model
        self.pool = base_pool
        self.config = config
        self.optimizer = make_optimizer(config.optimizer, model.parameters(), config.lr)
        self.rng = rng_for(config.seed, "episodes", client_id)
        self.last_stats = LocalStats()
        self._snapshot = None

    def local_round(self, round_index, episodes):
        """Steps 1-2: train, then return the serialized UPLOAD frame."""
        self._snapshot = (self.model.parameter_set(), self.optimizer.state(),
                          self.rng.bit_generator.state)
        params, stats = run_local_training(
            self.model, self.pool, self.config.spec, episodes, rng_seed=self.rng,
            optimizer=self.optimizer, distance=self.config.distance,
        )
        self.last_stats = stats
        return serialize_message(RoundMessage(MessageKind.UPLOAD, round_index, self.client_id,
                                              stats.beta, self.upload_params(params)))

    def upload_params(self, params):
        return params

    def apply_global(self, frame):
        """Step 4: overwrite local parameters, reply with ACK."""
        msg = deserialize_message(frame)
        if msg.kind is not MessageKind.GLOBAL:
            raise ProtocolError(f"client {self.client_id} expected GLOBAL, got {msg.kind.name}")
        self.model.load_parameter_set(msg.params)
        self._snapshot = None
        return serialize_message(RoundMessage(MessageKind.ACK, msg.round_index, self.client_id))

    def rollback(self):
        if self._snapshot is None:
            return
        params, opt_state, rng_state = self._snapshot
        self.model.load_parameter_set(params)
        self.optimizer.load_state(opt_state)
        self.rng.bit_generator.state = rng_state
        self._snapshot = None


class Server:
    """Sole owner of the global parameters."""

    def __init__(self, initial):
        self.global_params = initial.copy()
        self.round_index = 0

    def aggregate_uploads(self, messages, expected_round):
        uploads = []
        for msg in messages:
            if msg.kind is not MessageKind.UPLOAD:
                raise ProtocolError(f"expected UPLOAD from client {msg.client_id}, got {msg.kind.name}")
            if msg.round_index != expected_round:
                raise ProtocolError(
                    f"client {msg.client_id} uploaded round {msg.round_index}, expected {expected_round}"
                )
            self.global_params.check_compatible(msg.params, who=f"client {msg.client_id}")
            uploads.append((msg.client_id, msg.params, msg.beta))
        if sum(m.beta for m in messages) == 0:
            # nobody trained: the global model stays exactly as it was
            return self.global_params.copy()
        return aggregate(uploads)

    def global_frame(self, params=None):
        return serialize_message(RoundMessage(MessageKind.GLOBAL, self.round_index, 0, 0,
                                              params if params is not None else self.global_params))


class InProcessTransport:
    """Clients run sequentially in ascending id order on the calling thread."""

    def __init__(self, config):
        self.config = config
        self.clients = []

    def start(self, clients):
        self.clients = list(clients)

    def collect_uploads(self, round_index, episodes):
        return [deserialize_message(c.local_round(round_index, episodes)) for c in self.clients]

    def broadcast(self, frame):
        for c in self.clients:
            ack = deserialize_message(c.apply_global(frame))
            if ack.kind is not MessageKind.ACK:
                raise ProtocolError(f"client {c.client_id} did not acknowledge")

    def abort(self, round_index):
        for c in self.clients:
            c.rollback()

    def close(self):
        pass


class _SocketClientWorker(threading.Thread):
    """Client loop: HELLO(round) -> train -> UPLOAD; GLOBAL -> apply -> ACK.

    An ACK sent *by the server* means the round was aborted; the client rolls
    back and acknowledges.
    """

    def __init__(self, client, address, dtype):
        super().__init__(name=f"client-{client.client_id}", daemon=True)
        self.client = client
        self.address = address
        self.dtype = dtype
        self.error = None
        self.ready = threading.Event()

    def run(self):
        try:
            with default_dtype(self.dtype), socket.create_connection(self.address) as sock:
                send_message(sock, RoundMessage(MessageKind.HELLO, 0, self.client.client_id))
                self.ready.set()
                while True:
                    try:
                        msg = recv_message(sock)
                    except (ProtocolError, OSError):
                        return  # server closed the connection
                    if msg.kind is MessageKind.HELLO:
                        sock.sendall(length_prefixed(self.client.local_round(msg.round_index, msg.beta)))
                    elif msg.kind is MessageKind.GLOBAL:
                        sock.sendall(length_prefixed(self.client.apply_global(serialize_message(msg))))
                    elif msg.kind is MessageKind.ACK:
                        self.client.rollback()
                        send_message(sock, RoundMessage(MessageKind.ACK, msg.round_index,
                                                        self.client.client_id))
        except Exception as exc:  # surfaced by the server side
            self.error = exc
            self.ready.set()


class SocketTransport:
    """TCP with u32 length-prefixed frames; one connection and thread per client."""

    def __init__(self, config):
        self.config = config
        self.listener = None
        self.conns = {}
        self.workers = {}

    def start(self, clients):
        self.listener = socket.create_server(tuple(self.config.address))
        self.listener.settimeout(self.config.timeout_s)
        address = self.listener.getsockname()
        dtype = get_default_dtype()
        for c in clients:
            worker = _SocketClientWorker(c, address, dtype)
            self.workers[c.client_id] = worker
            worker.start()
        for _ in clients:
            try:
                conn, _ = self.listener.accept()
            except socket.timeout:
                missing = sorted(set(self.workers) - set(self.conns))
                raise ClientTimeout(missing[0], self.config.timeout_s) from None
            conn.settimeout(self.config.timeout_s)
            hello = recv_message(conn)
            if hello.kind is not MessageKind.HELLO:
                raise ProtocolError(f"expected HELLO, got {hello.kind.name}")
            self.conns[hello.client_id] = conn
        log.debug("socket transport listening on %s with %d clients", address, len(self.conns))

    def _recv(self, cid):
        try:
            return recv_message(self.conns[cid])
        except socket.timeout:
            raise ClientTimeout(cid, self.config.timeout_s) from None
        except ProtocolError:
            err = self.workers[cid].error
            if err is not None:
                raise err
            raise

    def collect_uploads(self, round_index, episodes):
        for cid in sorted(self.conns):
            send_message(self.conns[cid], RoundMessage(MessageKind.HELLO, round_index, cid, episodes))
        return [self._recv(cid) for cid in sorted(self.conns)]

    def broadcast(self, frame):
        for cid in sorted(self.conns):
            self.conns[cid].sendall(length_prefixed(frame))
        for cid in sorted(self.conns):
            ack = self._recv(cid)
            if ack.kind is not MessageKind.ACK:
                raise ProtocolError(f"client {cid} did not acknowledge")

    def abort(self, round_index):
        for cid in sorted(self.conns):
            try:
                send_message(self.conns[cid], RoundMessage(MessageKind.ACK, round_index, cid))
                self._recv(cid)
            except (OSError, FederationError):
                log.warning("client %d did not confirm rollback", cid)

    def close(self):
        for conn in self.conns.values():
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        if self.listener is not None:
            self.listener.close()
        for w in self.workers.values():
            w.join(timeout=5)
        self.conns.clear()
        self.workers.clear()


def make_transport(config):
    return SocketTransport(config) if config.transport == "socket" else InProcessTransport(config)


class Federation:
    """Runs communication rounds over a set of clients.

    ``model_factory()`` must return a fresh model; every replica and the server
    start from the first replica's initial parameters.
    """

    def __init__(self, config, model_factory, client_pools, transport=None):
        if len(client_pools) != config.num_clients:
            raise ConfigError(f"{len(client_pools)} client pools for num_clients={config.num_clients}")
        self.config = config
        self.global_model = model_factory()
        initial = self.global_model.parameter_set()
        self.server = Server(initial)
        self.clients = []
        for cid, pool in enumerate(client_pools):
            model = model_factory()
            model.load_parameter_set(initial)
            self.clients.append(Client(cid, model, pool, config))
        self.transport = transport or make_transport(config)
        self._started = False
        self.reports = []

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def start(self):
        if not self._started:
            self.transport.start(self.clients)
            self._started = True

    def close(self):
        if self._started:
            self.transport.close()
            self._started = False

    @property
    def global_params(self):
        return self.server.global_params

    def run_round(self, episodes=None):
        self.start()
        episodes = self.config.episodes_per_round if episodes is None else episodes
        r = self.server.round_index
        uploads = self.transport.collect_uploads(r, episodes)
        t0 = time.perf_counter()
        try:
            new_global = self.server.aggregate_uploads(uploads, r)
        except (StructureMismatch, ZeroTotalTasks, ProtocolError):
            self.transport.abort(r)
            raise
        aggregate_ms = (time.perf_counter() - t0) * 1000
        t1 = time.perf_counter()
        self.server.global_params = new_global
        self.transport.broadcast(self.server.global_frame())
        update_ms = (time.perf_counter() - t1) * 1000
        self.server.round_index += 1
        self.global_model.load_parameter_set(new_global)
        report = RoundReport(
            r, aggregate_ms, update_ms,
            {m.client_id: m.beta for m in uploads},
            {c.client_id: c.last_stats for c in self.clients},
        )
        self.reports.append(report)
        return report

    def run(self, rounds=None, on_round=None):
        rounds = self.config.rounds if rounds is None else rounds
        out = []
        with self:
            for _ in range(rounds):
                report = self.run_round()
                if on_round is not None:
                    on_round(report)
                out.append(report)
        return out


def save_checkpoint(path, params, round_index=0):
    frame = serialize_message(RoundMessage(MessageKind.GLOBAL, round_index, 0, 0, params))
    with open(path, "wb") as fh:
        fh.write(frame)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        msg = deserialize_message(fh.read())
    return msg.params
