"""Federated training over simulated topologies.

Three round protocols share one state object:

* DFL  - every participant trains, sends its model to each neighbour and
  averages its own model with what it received.
* SDFL - every participant trains; the round's aggregator (``round % n``)
  gathers all models over shortest paths (relays are recorded hop by
  hop), averages them and pushes the result back along the same paths.
* CFL  - leaves of a star train and upload to the hub, which holds no
  data, averages and broadcasts.

Models travel as serialized float32 payloads through an in-memory
transport; every hop is written to the TransportLedger.  Aggregation
inputs are always the deserialized payloads, including a node's own model.
"""
from __future__ import annotations

import logging
import hashlib
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ExperimentConfig, uses_features, uses_stationary
from .data import (
    RecordTable, apply_split_recipe, fit_scaler, ingest_csv, partition, scale, synthesize,
)
from .errors import InvalidArgumentError, ShortfallError, TrainingError
from .features import engineer_features
from .ledger import TransportLedger
from .metrics import AVERAGING_NOTE, confusion, mean_over_participants, summarize
from .metrics import report as summarize_experiment
from .model import (
    ModelConfig, Params, TrainConfig, TrainingLog, deserialize, forward, init_params, loss,
    serialize, train_local,
)
from .stationary import apply_plan, fit_plan, identity_plan
from .timeseries import WindowedDataset, window

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ topology


@dataclass(frozen=True)
class Topology:
    kind: str
    n: int
    adjacency: np.ndarray
    hub: int | None = None

    def neighbors(self, node: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[node])]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def degree(self, node: int) -> int:
        return int(self.adjacency[node].sum())

    def shortest_path(self, src: int, dst: int) -> list[int]:
        """BFS path src -> dst; among equal-length paths, lower ids are explored first."""
        parent = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if u == dst:
                break
            for v in self.neighbors(u):
                if v not in parent:
                    parent[v] = u
                    queue.append(v)
        if dst not in parent:
            raise InvalidArgumentError(f"no path from {src} to {dst}")
        path = [dst]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        return path[::-1]


def build_topology(kind: str, n: int, seed: int | None = None, hub: int = 0) -> Topology:
    """Fully connected, ring (id order) or star (``hub`` at the centre).

    ``seed`` is accepted for interface symmetry; all three layouts are fixed.
    """
    adj = np.zeros((n, n), dtype=bool)
    if kind == "fully":
        if n < 2:
            raise InvalidArgumentError("a fully connected topology needs n >= 2")
        adj[:] = True
        np.fill_diagonal(adj, False)
        return Topology(kind, n, adj)
    if kind == "ring":
        if n < 2:
            raise InvalidArgumentError("a ring needs n >= 2")
        for i in range(n):
            j = (i + 1) % n
            adj[i, j] = adj[j, i] = True
        return Topology(kind, n, adj)
    if kind == "star":
        if n < 2:
            raise InvalidArgumentError("a star needs n >= 2")
        if not 0 <= hub < n:
            raise InvalidArgumentError(f"hub {hub} outside [0, {n})")
        adj[hub, :] = adj[:, hub] = True
        adj[hub, hub] = False
        return Topology(kind, n, adj, hub)
    raise InvalidArgumentError(f"unknown topology {kind!r}")


# -------------------------------------------------------------------- fedavg


def fedavg(models, ids=None) -> Params:
    """Sample-count weighted mean of ``[(params, count), ...]``.

    Inputs are reduced in ascending ``ids`` order (list position when ids
    is None), so the result does not depend on argument order.  The sum
    of ``count * params`` is divided once by the total count, which keeps
    the average of identical float32-valued models bit-exact.
    """
    models = list(models)
    if not models:
        raise InvalidArgumentError("nothing to aggregate")
    ids = list(range(len(models))) if ids is None else list(ids)
    if len(ids) != len(models) or len(set(ids)) != len(ids):
        raise InvalidArgumentError("ids must be unique, one per model")
    order = sorted(range(len(models)), key=lambda k: ids[k])
    counts = [float(models[k][1]) for k in order]
    if any(c < 0 for c in counts):
        raise InvalidArgumentError("sample counts must be non-negative")
    total = sum(counts)
    if total <= 0:
        raise InvalidArgumentError("sample counts are all zero")
    ref = models[order[0]][0]
    out = {}
    for name, arr in ref.items():
        acc = np.zeros_like(arr, dtype=np.float64)
        for k, c in zip(order, counts):
            p = models[k][0]
            if name not in p or p[name].shape != arr.shape or p.keys() != ref.keys():
                raise InvalidArgumentError(f"parameter {name!r} differs between models")
            acc += c * p[name]
        out[name] = acc / total
    return out


# --------------------------------------------------------------------- state


@dataclass
class Participant:
    pid: int
    train: WindowedDataset | None = None
    validation: WindowedDataset | None = None
    test: WindowedDataset | None = None
    params: Params | None = None
    train_seed: int = 0
    trains: bool = True
    last_log: TrainingLog | None = None

    @property
    def n_samples(self) -> int:
        return 0 if self.train is None else len(self.train)


@dataclass
class FederationState:
    topology: Topology
    paradigm: str
    participants: dict[int, Participant]
    model_config: ModelConfig
    train_config: TrainConfig
    ledger: TransportLedger = field(default_factory=TransportLedger)
    hub: int | None = None

    @property
    def trainers(self) -> list[int]:
        return sorted(p for p, part in self.participants.items() if part.trains)


def round_seed(base: int, round_index: int) -> int:
    return int(np.random.SeedSequence([base, round_index]).generate_state(1)[0])


def _train_all(state: FederationState, round_index: int) -> None:
    for pid in state.trainers:
        part = state.participants[pid]
        cfg = replace(state.train_config, seed=round_seed(part.train_seed, round_index))
        try:
            part.params, part.last_log = train_local(part.params, part.train, cfg)
        except Exception as exc:
            raise TrainingError(pid, exc) from exc


def _serialize_all(state: FederationState, pids) -> dict[int, bytes]:
    return {pid: serialize(state.participants[pid].params, state.model_config) for pid in pids}


def run_round_dfl(state: FederationState, round_index: int) -> FederationState:
    if state.paradigm != "DFL":
        raise InvalidArgumentError("state is not configured for DFL")
    _train_all(state, round_index)
    pids = sorted(state.participants)
    payloads = _serialize_all(state, pids)
    for pid in pids:
        for nb in state.topology.neighbors(pid):
            state.ledger.record(round_index, "share", pid, nb, payloads[pid])
    new = {}
    for pid in pids:
        group = [pid] + state.topology.neighbors(pid)
        models = [
            (deserialize(payloads[q], state.model_config), state.participants[q].n_samples)
            for q in group
        ]
        new[pid] = fedavg(models, ids=group)
    for pid in pids:
        state.participants[pid].params = new[pid]
    return state


def sdfl_aggregator(round_index: int, n: int) -> int:
    return round_index % n


def _send_along(state, round_index, path, payload, first_kind):
    for hop, (u, v) in enumerate(zip(path[:-1], path[1:])):
        state.ledger.record(round_index, first_kind if hop == 0 else "relay", u, v, payload)


def run_round_sdfl(state: FederationState, round_index: int) -> FederationState:
    if state.paradigm != "SDFL":
        raise InvalidArgumentError("state is not configured for SDFL")
    _train_all(state, round_index)
    pids = sorted(state.participants)
    agg = pids[sdfl_aggregator(round_index, len(pids))]
    payloads = _serialize_all(state, pids)
    paths = {pid: state.topology.shortest_path(pid, agg) for pid in pids if pid != agg}
    for pid, path in paths.items():
        _send_along(state, round_index, path, payloads[pid], "upload")
    models = [
        (deserialize(payloads[q], state.model_config), state.participants[q].n_samples) for q in pids
    ]
    aggregate = serialize(fedavg(models, ids=pids), state.model_config)
    for pid, path in paths.items():
        _send_along(state, round_index, path[::-1], aggregate, "broadcast")
    for pid in pids:
        state.participants[pid].params = deserialize(aggregate, state.model_config)
    return state


def run_round_cfl(state: FederationState, round_index: int) -> FederationState:
    if state.paradigm != "CFL" or state.topology.kind != "star":
        raise InvalidArgumentError("CFL needs a star topology")
    hub = state.topology.hub
    _train_all(state, round_index)
    leaves = state.trainers
    payloads = _serialize_all(state, leaves)
    for pid in leaves:
        state.ledger.record(round_index, "upload", pid, hub, payloads[pid])
    models = [
        (deserialize(payloads[q], state.model_config), state.participants[q].n_samples) for q in leaves
    ]
    aggregate = serialize(fedavg(models, ids=leaves), state.model_config)
    for pid in leaves:
        state.ledger.record(round_index, "broadcast", hub, pid, aggregate)
    for pid in sorted(state.participants):
        state.participants[pid].params = deserialize(aggregate, state.model_config)
    return state


ROUND_FUNCS = {"DFL": run_round_dfl, "SDFL": run_round_sdfl, "CFL": run_round_cfl}


# ----------------------------------------------------------------- evaluation


def evaluate(params: Params, data: WindowedDataset, num_classes: int, chunk: int = 4096) -> dict:
    """Confusion matrix, mean loss and summary metrics of ``params`` on ``data``."""
    probs = np.concatenate(
        [forward(params, data.values[s : s + chunk]) for s in range(0, len(data), chunk)]
    )
    cm = confusion(probs.argmax(axis=1), data.labels, num_classes)
    return {"loss": loss(probs, data.labels), "confusion": cm, **summarize(cm)}


# ----------------------------------------------------------------- experiment


@dataclass
class PreparedData:
    participants: dict[int, dict[str, WindowedDataset]]
    class_map: dict[int, int]
    scaler: object
    plan: object
    partition_plan: object
    feature_names: tuple[str, ...]


def load_records(cfg: ExperimentConfig) -> tuple[RecordTable, RecordTable | None]:
    if cfg.data.source == "synthetic":
        return synthesize(cfg.data.synthetic), None
    train = RecordTable.concat([ingest_csv(p, cfg.data.csv_format) for p in cfg.data.train_csv])
    test = None
    if cfg.data.test_csv:
        test = RecordTable.concat([ingest_csv(p, cfg.data.csv_format) for p in cfg.data.test_csv])
    return train, test


def trainer_ids(cfg: ExperimentConfig) -> list[int]:
    ids = list(range(cfg.participants))
    if cfg.paradigm == "CFL":
        ids.remove(cfg.hub)
    return ids


def prepare_data(cfg: ExperimentConfig, records=None) -> PreparedData:
    """Recipe -> stationary plan -> scaler -> partition -> windows -> features."""
    cfg = cfg.resolved()
    train_records, test_records = records if records is not None else load_records(cfg)
    split = apply_split_recipe(train_records, cfg.recipe, test_records)
    splits = {"train": split.train, "validation": split.validation, "test": split.test}
    if split.train.n_rows == 0:
        raise ShortfallError("the recipe leaves no training rows")

    if uses_stationary(cfg.pipeline):
        normal = split.class_map.get(0, 0)
        plan = fit_plan(split.train, cfg.stationary, normal_class=normal)
        splits = {k: apply_plan(v, plan) for k, v in splits.items()}
    else:
        plan = identity_plan(split.train.feature_names)

    scaler = fit_scaler(splits["train"], ddof=cfg.scaler_ddof)
    splits = {k: scale(v, scaler) for k, v in splits.items()}

    ids = trainer_ids(cfg)
    plan_p, per = partition(splits, len(ids), cfg.seed, cfg.runs_per_participant)
    participants = {}
    feature_names = split.train.feature_names
    for pid, parts in zip(ids, per):
        windows = {}
        for name, data in parts.items():
            if data.n_rows == 0:
                raise ShortfallError(f"participant {pid} received no {name} runs")
            w = window(data, cfg.model.ts, "per-simulation")
            if uses_features(cfg.pipeline):
                w = engineer_features(w)
            windows[name] = w
        participants[pid] = windows
        feature_names = windows["train"].feature_names
    return PreparedData(participants, split.class_map, scaler, plan, plan_p, feature_names)


@dataclass
class ExperimentReport:
    data: dict
    ledger: TransportLedger
    final_params: dict[int, Params]
    prepared: PreparedData
    wall_clock_seconds: float = 0.0


def build_state(cfg: ExperimentConfig, prepared: PreparedData) -> FederationState:
    topo = build_topology(cfg.topology, cfg.participants, cfg.seed, cfg.hub)
    first = next(iter(prepared.participants.values()))["train"]
    n_cls = cfg.model.num_classes or len(prepared.class_map)
    if n_cls < len(prepared.class_map):
        raise InvalidArgumentError(
            f"model.num_classes={n_cls} is smaller than the {len(prepared.class_map)} data classes"
        )
    mcfg = ModelConfig(first.n_features, cfg.model.hidden1, cfg.model.hidden2, n_cls, cfg.model.ts)
    participants = {}
    for pid in range(cfg.participants):
        init_seed = cfg.seed if cfg.shared_init else round_seed(cfg.seed, 10_000 + pid)
        windows = prepared.participants.get(pid)
        participants[pid] = Participant(
            pid=pid,
            train=windows["train"] if windows else None,
            validation=windows["validation"] if windows else None,
            test=windows["test"] if windows else None,
            params=init_params(mcfg, init_seed),
            train_seed=round_seed(cfg.seed, pid),
            trains=windows is not None,
        )
    hub = cfg.hub if cfg.paradigm == "CFL" else None
    return FederationState(topo, cfg.paradigm, participants, mcfg, cfg.train, hub=hub)


def _eval_entry(result: dict, train_loss) -> dict:
    entry = {k: v for k, v in result.items() if k != "confusion"}
    if train_loss is not None:
        entry["train_loss"] = train_loss
    return entry


def run_experiment(cfg: ExperimentConfig, records=None) -> ExperimentReport:
    """Run every round, evaluating on validation after each and on test at the end."""
    cfg = cfg.validate().resolved()
    started = time.perf_counter()
    prepared = prepare_data(cfg, records)
    state = build_state(cfg, prepared)
    step = ROUND_FUNCS[cfg.paradigm]
    n_cls = state.model_config.num_classes

    def evaluate_round(r: int) -> dict:
        per = {}
        for pid in state.trainers:
            part = state.participants[pid]
            res = evaluate(part.params, part.validation, n_cls)
            tl = part.last_log.epoch_losses[-1] if part.last_log and part.last_log.epoch_losses else None
            per[str(pid)] = _eval_entry(res, tl)
        sent = state.ledger.totals()
        return {
            "round": r,
            "participants": per,
            "mean": mean_over_participants(list(per.values())),
            "payloads": len(state.ledger.in_round(r - 1)) if r > 0 else 0,
            "cumulative_bytes": {str(k): v["bytes_transmitted"] for k, v in sent.items()},
        }

    rounds = [evaluate_round(0)]
    for r in range(cfg.rounds):
        step(state, r)
        rounds.append(evaluate_round(r + 1))
        log.info("round %d: mean val macro-F1 %.4f", r + 1, rounds[-1]["mean"]["macro"]["f1"])

    final = {}
    for pid in state.trainers:
        part = state.participants[pid]
        res = evaluate(part.params, part.test, n_cls)
        final[str(pid)] = {**_eval_entry(res, None), "confusion": res["confusion"].tolist()}
    report = assemble_report(cfg, state, prepared, rounds, final)
    elapsed = time.perf_counter() - started
    return ExperimentReport(
        report, state.ledger, {p: state.participants[p].params for p in sorted(state.participants)},
        prepared, elapsed,
    )


def assemble_report(cfg, state, prepared, rounds, final) -> dict:
    summary = summarize_experiment(final, state.ledger, range(state.topology.n))
    summary["transport"]["ledger_sha256"] = hashlib.sha256(state.ledger.to_csv().encode()).hexdigest()
    return {
        "config_digest": cfg.digest(),
        "pipeline": cfg.pipeline,
        "paradigm": cfg.paradigm,
        "topology": cfg.topology,
        "participants": cfg.participants,
        "trainers": state.trainers,
        "rounds_run": cfg.rounds,
        "class_map": {str(k): v for k, v in prepared.class_map.items()},
        "num_classes": state.model_config.num_classes,
        "input_dim": state.model_config.input_dim,
        "train_windows": {str(p): state.participants[p].n_samples for p in state.trainers},
        "averaging_note": AVERAGING_NOTE,
        "rounds": rounds,
        "final": {"participants": final, "mean": summary["mean"]},
        "transport": summary["transport"],
    }
