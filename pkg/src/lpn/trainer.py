"""Episodic training loop, decoupled-decay Adam updates, checkpoints.

The update rule applies weight decay directly to the parameter, unscaled by
the learning rate:

    theta <- theta - wd * theta - lr * m_hat / (sqrt(v_hat) + eps)

so lr = 0 leaves parameters untouched except for the decay term.

Checkpoints are a little-endian binary container (magic ``LPNC``) holding a
canonical JSON echo of the run configuration, the optimizer step, and every
tensor in float64, written in a fixed order so save -> load -> save is byte
identical.
"""
from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from lpn import tensorcore as tc
from lpn.config import ConfigError, RunConfig, config_from_dict, config_to_dict
from lpn.dataio import Dataset, FormatError
from lpn.episodes import episode_seed, sample_episode
from lpn.inference import LossBreakdown
from lpn.metrics import STREAM_TRAIN, STREAM_VAL, EvalReport, evaluate
from lpn.model import bind_params, forward_episode, init_param_values

CHECKPOINT_MAGIC = b"LPNC"
CHECKPOINT_VERSION = 1

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

# Structural keys a checkpoint must agree on before its tensors can be bound.
_STRUCTURAL_KEYS = ("n_way", "d", "d_hidden", "r_heads", "k_rank", "variant")


@dataclass
class TrainState:
    values: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    loss_history: list[float] = field(default_factory=list)
    best_values: dict[str, np.ndarray] | None = None
    best_metric: float = float("nan")


def init_state(cfg: RunConfig, seed: int | None = None) -> TrainState:
    values = init_param_values(cfg, cfg.seed if seed is None else seed)
    return TrainState(
        values=values,
        m={name: np.zeros_like(a) for name, a in values.items()},
        v={name: np.zeros_like(a) for name, a in values.items()},
    )


def apply_update(state: TrainState, grads: dict[str, np.ndarray],
                 lr: float, weight_decay: float) -> None:
    """One in-place optimizer step over every parameter, in insertion order."""
    t = state.step
    for name in state.values:
        g = grads[name]
        state.m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * g
        state.v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        m_hat = state.m[name] / (1.0 - BETA1 ** t)
        v_hat = state.v[name] / (1.0 - BETA2 ** t)
        theta = state.values[name]
        state.values[name] = theta - weight_decay * theta - lr * m_hat / (np.sqrt(v_hat) + EPS)


@dataclass(frozen=True)
class StepRecord:
    step: int
    breakdown: LossBreakdown
    floor_events: int
    scl_no_signal: bool


def train_step(state: TrainState, ep, cfg: RunConfig) -> StepRecord:
    """Forward one episode, backpropagate, and update the parameters.

    A non-finite value anywhere in the graph aborts with the offending node
    named; the parameters are left at their pre-step values in that case.
    """
    graph = tc.Graph(check_finite=True)
    params = bind_params(graph, state.values, cfg.variant)
    out = forward_episode(graph, params, ep, cfg, with_loss=True)
    grads = graph.backward(out.total)
    state.step += 1
    apply_update(state, grads, cfg.lr, cfg.weight_decay)
    state.loss_history.append(out.breakdown.total)
    return StepRecord(step=state.step, breakdown=out.breakdown,
                      floor_events=graph.floor_events,
                      scl_no_signal=out.scl_no_signal)


def train_loop(cfg: RunConfig, ds: Dataset, state: TrainState | None = None,
               log: Callable[[StepRecord], None] | None = None,
               on_validation: Callable[[int, EvalReport], None] | None = None) -> TrainState:
    """Run episodes state.step .. episodes_train-1, validating periodically.

    Episode draws are keyed by (cfg.seed, train stream, step index), so a run
    resumed from a checkpoint sees exactly the episodes the unbroken run
    would have seen. Validation keeps the parameter set with the best AUC;
    when the dataset has no validation split, training classes stand in.
    """
    if state is None:
        state = init_state(cfg)
    val_split = "validation" if ds.labels_for("validation") else "train"
    for idx in range(state.step, cfg.episodes_train):
        ep = sample_episode(ds, "train", cfg.n_way, cfg.k_shot, cfg.q_per_class,
                            seed=episode_seed(cfg.seed, STREAM_TRAIN, idx),
                            shared_pair_prob=cfg.shared_pair_prob)
        rec = train_step(state, ep, cfg)
        if log is not None:
            log(rec)
        if cfg.episodes_val > 0 and cfg.val_every > 0 and rec.step % cfg.val_every == 0:
            report = evaluate(state.values, ds, val_split, cfg,
                              episodes=cfg.episodes_val,
                              base_seed=episode_seed(cfg.seed, STREAM_VAL, rec.step),
                              workers=1)
            auc = report.mean_auc
            if on_validation is not None:
                on_validation(rec.step, report)
            # ties prefer the later step: equal AUC, more count-head training
            if not math.isnan(auc) and (math.isnan(state.best_metric) or auc >= state.best_metric):
                state.best_metric = auc
                state.best_values = copy.deepcopy(state.values)
    if state.best_values is None:
        state.best_values = copy.deepcopy(state.values)
    return state


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(blob)


def save_checkpoint(path: str, state: TrainState, cfg: RunConfig) -> None:
    config_blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    tensors: list[tuple[str, np.ndarray]] = []
    for name, arr in state.values.items():
        tensors.append((f"param.{name}", arr))
    for name, arr in state.m.items():
        tensors.append((f"adam.m.{name}", arr))
    for name, arr in state.v.items():
        tensors.append((f"adam.v.{name}", arr))
    tensors.append(("loss_history", np.asarray(state.loss_history, dtype=np.float64)))
    if state.best_values is not None:
        for name, arr in state.best_values.items():
            tensors.append((f"best.{name}", arr))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<Q", state.step))
        fh.write(struct.pack("<d", state.best_metric))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)


def _read_exact(fh, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError("unexpected end of file in checkpoint")
    return data


def load_checkpoint(path: str, expect: RunConfig | None = None) -> tuple[TrainState, RunConfig]:
    """Restore a training state; `expect` enforces structural agreement.

    A checkpoint whose run shape (way count, widths, rank, variant) differs
    from the expected configuration cannot be bound to the model and is
    rejected with the mismatching key named.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise FormatError("unsupported checkpoint: bad magic")
        version = struct.unpack("<I", _read_exact(fh, 4))[0]
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        config_len = struct.unpack("<I", _read_exact(fh, 4))[0]
        try:
            cfg = config_from_dict(json.loads(_read_exact(fh, config_len).decode("utf-8")))
        except (ValueError, ConfigError) as exc:
            raise FormatError(f"checkpoint config is invalid: {exc}") from exc
        step = struct.unpack("<Q", _read_exact(fh, 8))[0]
        best_metric = struct.unpack("<d", _read_exact(fh, 8))[0]
        n_tensors = struct.unpack("<I", _read_exact(fh, 4))[0]
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            name_len = struct.unpack("<I", _read_exact(fh, 4))[0]
            name = _read_exact(fh, name_len).decode("utf-8")
            ndim = struct.unpack("<I", _read_exact(fh, 4))[0]
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape)
            if name in tensors:
                raise FormatError(f"duplicate tensor {name!r} in checkpoint")
            tensors[name] = arr.astype(np.float64)
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    if expect is not None:
        expected = config_to_dict(expect)
        stored = config_to_dict(cfg)
        for key in _STRUCTURAL_KEYS:
            if expected[key] != stored[key]:
                raise ConfigError(
                    f"checkpoint was built with {key}={stored[key]}, run expects {expected[key]}")
    values = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    m = {k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")}
    best = {k[len("best."):]: v for k, v in tensors.items() if k.startswith("best.")}
    if set(m) != set(values) or set(v) != set(values):
        raise FormatError("checkpoint optimizer state does not cover the parameters")
    history = tensors.get("loss_history", np.zeros(0))
    state = TrainState(values=values, m=m, v=v, step=int(step),
                       loss_history=[float(x) for x in history],
                       best_values=best or None, best_metric=best_metric)
    return state, cfg
