"""Multi-process execution: one OS process per LP.

Envelopes travel between LP processes as wire frames over TCP. The
coordinator talks to each worker over a separate control connection
(``multiprocessing.connection``) and drives the same barrier protocol as the
in-process drivers. Before every command it tells the worker how many frames
it must have received so far, which is how a worker knows the previous step's
traffic has fully arrived.
"""

from __future__ import annotations

import logging
import os
import socket
import subprocess
import sys
import threading
import time
import traceback
from collections import Counter
from multiprocessing.connection import Client, Connection, Listener
from typing import Any

from . import clustering
from .errors import BarrierTimeout, ConfigError, SimulationAborted
from .kernel import DONE, BarrierCoordinator, LpRuntime, SimConfig, _check_placement, build_model
from .replication import PlacementMap, place_instances
from .report import LpResult, SimReport, build_report
from .transport import FrameReader, Inbox, InstanceId

log = logging.getLogger(__name__)


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"endpoint {text!r} is not host:port")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"endpoint {text!r} has a non-numeric port") from None


class _Wire:
    """Inbound side of an LP's data plane: reader threads feeding the inbox."""

    def __init__(self, server: socket.socket, inbox: Inbox, peers: int) -> None:
        self.inbox = inbox
        self.frames_in = 0
        self.error: BaseException | None = None
        self._cond = threading.Condition()
        self._server = server
        threading.Thread(target=self._accept, args=(peers,), daemon=True).start()

    def _accept(self, peers: int) -> None:
        for _ in range(peers):
            conn, _ = self._server.accept()
            threading.Thread(target=self._read, args=(conn,), daemon=True).start()

    def _read(self, conn: socket.socket) -> None:
        reader = FrameReader()
        try:
            with conn:
                while True:
                    data = conn.recv(1 << 16)
                    if not data:
                        return
                    envelopes = list(reader.feed(data))
                    if envelopes:
                        self.inbox.put_many(envelopes)
                        with self._cond:
                            self.frames_in += len(envelopes)
                            self._cond.notify_all()
        except BaseException as exc:  # surfaced by await_frames
            with self._cond:
                self.error = exc
                self._cond.notify_all()

    def await_frames(self, expected: int, timeout: float) -> None:
        with self._cond:
            ok = self._cond.wait_for(lambda: self.frames_in >= expected or self.error is not None, timeout)
        if self.error is not None:
            raise SimulationAborted(f"wire reader failed: {self.error!r}")
        if not ok:
            raise BarrierTimeout(f"expected {expected} inbound frames, got {self.frames_in}")


def worker_main(lp_id: int, control_address: Any, authkey: bytes, endpoint: str) -> None:
    host, port = parse_endpoint(endpoint)
    server = socket.create_server((host, port))
    ctrl = Client(control_address, authkey=authkey)
    try:
        ctrl.send(("hello", lp_id, host, server.getsockname()[1]))
        _serve(lp_id, ctrl, server)
    except Exception:
        try:
            ctrl.send(("error", lp_id, traceback.format_exc()))
        except OSError:
            pass
    finally:
        ctrl.close()
        server.close()


def _serve(lp_id: int, ctrl: Connection, server: socket.socket) -> None:
    _, config, rows, data_eps = ctrl.recv()
    model = build_model(config)
    placement = PlacementMap.from_rows(config.num_lps, config.replicas, rows)
    lp = LpRuntime(lp_id, config, model)
    lp.seed_instances(placement)
    wire = _Wire(server, lp.inbox, config.num_lps - 1)
    peers: dict[int, socket.socket] = {}
    for other, (h, p) in sorted(data_eps.items()):
        if other != lp_id:
            s = socket.create_connection((h, p))
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            peers[other] = s
    ctrl.send(("ready", lp_id))
    timeout = config.barrier_timeout
    local = {lp_id: lp.inbox}

    try:
        while True:
            cmd = ctrl.recv()
            kind = cmd[0]
            if kind == "step":
                _, t, down, expected, new_rows = cmd
                if new_rows is not None:
                    placement = PlacementMap.from_rows(config.num_lps, config.replicas, new_rows)
                wire.await_frames(expected, timeout)
                outgoing = lp.advance_timestep(t)
                chunks: dict[int, list[bytes]] = {}
                lost = lp.dispatch(outgoing, placement, local, set(down), lambda dst, frame: chunks.setdefault(dst, []).append(frame))
                for dst, frames in chunks.items():
                    peers[dst].sendall(b"".join(frames))
                ctrl.send(("done", t, {dst: len(f) for dst, f in chunks.items()}, dict(lost)))
            elif kind == "interactions":
                ctrl.send(("interactions", {inst: dict(row) for inst, row in lp.take_interactions().items()}))
            elif kind == "emigrate":
                _, inst, expected = cmd
                wire.await_frames(expected, timeout)
                ctrl.send(("blob", lp.release_instance(InstanceId(*inst))))
            elif kind == "immigrate":
                _, inst, blob = cmd
                lp.install_instance(InstanceId(*inst), blob)
                ctrl.send(("ok",))
            elif kind in ("crash", "finish"):
                _, expected = cmd
                wire.await_frames(expected, timeout)
                result = lp.crash() if kind == "crash" else lp.finalize()
                ctrl.send(("final", result))
                return
            else:
                raise ValueError(f"unknown command {kind!r}")
    finally:
        for s in peers.values():
            s.close()


class _RemoteHost:
    """Coordinator-side stand-in for an LP living in a worker process."""

    def __init__(self, coord: _Coordinator, lp: int) -> None:
        self.coord = coord
        self.lp = lp

    def release_instance(self, instance: InstanceId) -> bytes:
        reply = self.coord.call(self.lp, ("emigrate", tuple(instance), self.coord.expected[self.lp]))
        return reply[1]

    def install_instance(self, instance: InstanceId, blob: bytes) -> None:
        self.coord.call(self.lp, ("immigrate", tuple(instance), blob))


class _Coordinator:
    def __init__(self, config: SimConfig) -> None:
        self.config = config
        self.conns: dict[int, Connection] = {}
        self.procs: list[subprocess.Popen] = []
        self.expected: Counter[int] = Counter()

    def _recv(self, lp: int, timeout: float) -> tuple:
        conn = self.conns[lp]
        if not conn.poll(timeout):
            raise BarrierTimeout(f"LP {lp} sent nothing for {timeout:.1f}s")
        msg = conn.recv()
        if msg[0] == "error":
            raise SimulationAborted(f"LP {msg[1]} failed:\n{msg[2]}")
        return msg

    def call(self, lp: int, msg: tuple) -> tuple:
        self.conns[lp].send(msg)
        return self._recv(lp, self.config.barrier_timeout)

    def start(self) -> dict[int, tuple[str, int]]:
        config = self.config
        authkey = os.urandom(16)
        endpoints = config.endpoints or tuple("127.0.0.1:0" for _ in range(config.num_lps))
        listener = Listener(("127.0.0.1", 0), authkey=authkey)
        host, port = listener.address
        env = dict(os.environ, FTSIM_AUTHKEY=authkey.hex())
        for i in range(config.num_lps):
            cmd = [sys.executable, "-m", "ftsim.procmode", str(i), host, str(port), endpoints[i]]
            self.procs.append(subprocess.Popen(cmd, env=env))

        accepted: list[Connection] = []

        def accept_all() -> None:
            try:
                for _ in range(config.num_lps):
                    accepted.append(listener.accept())
            except OSError:
                pass

        acceptor = threading.Thread(target=accept_all, daemon=True)
        acceptor.start()
        acceptor.join(config.barrier_timeout)
        listener.close()
        if len(accepted) < config.num_lps:
            raise SimulationAborted(f"only {len(accepted)} of {config.num_lps} LP processes connected")
        data_eps = {}
        for conn in accepted:
            if not conn.poll(config.barrier_timeout):
                raise SimulationAborted("an LP process connected but never introduced itself")
            _, lp, h, p = conn.recv()
            self.conns[lp] = conn
            data_eps[lp] = (h, p)
        return data_eps

    def shutdown(self) -> None:
        for conn in self.conns.values():
            conn.close()
        for p in self.procs:
            try:
                p.wait(timeout=5)
            except subprocess.TimeoutExpired:
                p.kill()
                p.wait()


def run_processes(config: SimConfig) -> SimReport:
    coord = _Coordinator(config)
    try:
        return _drive(coord)
    finally:
        coord.shutdown()


def _drive(coord: _Coordinator) -> SimReport:
    config = coord.config
    data_eps = coord.start()
    placement = place_instances(config.num_entities, config.policy, config.num_lps)
    for lp, conn in sorted(coord.conns.items()):
        conn.send(("setup", config, placement.as_rows(), data_eps))
    for lp in sorted(coord.conns):
        coord._recv(lp, config.barrier_timeout)

    barrier = BarrierCoordinator(range(config.num_lps), config.fault_plan)
    results: dict[int, LpResult] = {}
    dead_letters: Counter[int] = Counter()
    hosts = {i: _RemoteHost(coord, i) for i in range(config.num_lps)}
    cap = config.instance_cap
    applied = skipped = 0
    new_rows = None

    start = time.perf_counter()
    for t in range(config.total_timesteps):
        for victim in barrier.release(t):
            results[victim] = coord.call(victim, ("crash", coord.expected[victim]))[1]
            log.info("LP %d crashed before step %d", victim, t)
        down = sorted(barrier.crashed)
        active = sorted(barrier.running)
        for i in active:
            coord.conns[i].send(("step", t, down, coord.expected[i], new_rows))
        new_rows = None
        statuses: dict[int, str] = {}
        deadline = time.monotonic() + config.barrier_timeout
        for i in active:
            try:
                _, step, frames_to, lost_to = coord._recv(i, max(0.0, deadline - time.monotonic()))
            except BarrierTimeout:
                continue
            coord.expected.update(frames_to)
            dead_letters.update(lost_to)
            statuses[i] = DONE
        barrier.sync(t, statuses)

        if config.migration_enabled and (t + 1) % config.migration_period == 0 and t + 1 < config.total_timesteps:
            matrix = clustering.InteractionMatrix(window_start=t + 1)
            for i in sorted(barrier.running):
                matrix.merge(coord.call(i, ("interactions",))[1])
            decisions = clustering.evaluate_migrations(matrix, placement, config.migration_threshold, cap, set(down))
            rnd = clustering.migrate(decisions, placement, hosts, cap)
            placement = rnd.placement
            applied += len(rnd.applied)
            skipped += len(rnd.skipped)
            _check_placement(placement)
            if rnd.applied:
                new_rows = placement.as_rows()
    elapsed = time.perf_counter() - start

    for i in sorted(barrier.running):
        results[i] = coord.call(i, ("finish", coord.expected[i]))[1]
    return build_report(config, list(results.values()), dead_letters, placement.epoch, applied, skipped, elapsed)


def main(argv: list[str] | None = None) -> None:
    lp_id, host, port, endpoint = (argv if argv is not None else sys.argv[1:])
    authkey = bytes.fromhex(os.environ["FTSIM_AUTHKEY"])
    worker_main(int(lp_id), (host, int(port)), authkey, endpoint)


if __name__ == "__main__":
    main()
