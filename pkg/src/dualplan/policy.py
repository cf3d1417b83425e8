"""Policy/Q network with closed-form gradients.

One tanh hidden layer shared by two linear heads: a softmax policy head and
a per-action Q head. Everything works on single feature vectors or on
row-stacked batches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dualplan.errors import (
    CheckpointError,
    DimensionMismatch,
    EncoderMismatch,
    TooFewActions,
    VersionMismatch,
)

CHECKPOINT_FORMAT = "dualplan-policy"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("w1", "b1", "wp", "bp", "wq", "bq")


@dataclass
class PolicyParams:
    w1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    wp: np.ndarray  # (A, H) policy head
    bp: np.ndarray  # (A,)
    wq: np.ndarray  # (A, H) Q head
    bq: np.ndarray  # (A,)
    version: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        H, D = self.w1.shape
        A = self.wp.shape[0]
        expected = {"b1": (H,), "wp": (A, H), "bp": (A,), "wq": (A, H), "bq": (A,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(D, H, A)."""
        return self.w1.shape[1], self.w1.shape[0], self.wp.shape[0]

    @classmethod
    def initialize(cls, D: int, H: int, A: int, rng: np.random.Generator | int | None = None):
        rng = np.random.default_rng(rng)
        lim1, lim2 = 1.0 / math.sqrt(D), 1.0 / math.sqrt(H)
        return cls(
            w1=rng.uniform(-lim1, lim1, (H, D)),
            b1=np.zeros(H),
            wp=rng.uniform(-lim2, lim2, (A, H)),
            bp=np.zeros(A),
            wq=rng.uniform(-lim2, lim2, (A, H)),
            bq=np.zeros(A),
        )

    @classmethod
    def zeros(cls, D: int, H: int, A: int):
        return cls(np.zeros((H, D)), np.zeros(H), np.zeros((A, H)), np.zeros(A),
                   np.zeros((A, H)), np.zeros(A))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> PolicyParams:
        return PolicyParams(**{k: v.copy() for k, v in self.arrays().items()},
                            version=self.version, meta=dict(self.meta))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def with_flat(self, vec: np.ndarray) -> PolicyParams:
        out, pos = {}, 0
        for name, arr in self.arrays().items():
            out[name] = np.asarray(vec[pos:pos + arr.size], dtype=float).reshape(arr.shape).copy()
            pos += arr.size
        return PolicyParams(**out, version=self.version, meta=dict(self.meta))

    def scaled_add(self, other: PolicyParams, alpha: float) -> PolicyParams:
        """In place: self += alpha * other."""
        for name in PARAM_NAMES:
            getattr(self, name)[...] += alpha * getattr(other, name)
        return self

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    def equals(self, other: PolicyParams) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(params: PolicyParams, features: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    D = params.dims[0]
    if X.ndim != 2 or X.shape[1] != D:
        raise DimensionMismatch(f"features of shape {x.shape} do not match D={D}")
    return X, single


@dataclass
class ForwardCache:
    X: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    q: np.ndarray


def forward(params: PolicyParams, features: np.ndarray) -> ForwardCache:
    X, _ = _as_batch(params, features)
    h = np.tanh(X @ params.w1.T + params.b1)
    logits = h @ params.wp.T + params.bp
    q = h @ params.wq.T + params.bq
    return ForwardCache(X, h, logits, softmax(logits), q)


def policy_forward(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    """Action distribution pi(a|s); shape (A,) for one state, (N, A) for a batch."""
    cache = forward(params, features)
    return cache.probs[0] if np.ndim(features) == 1 else cache.probs


def q_forward(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    cache = forward(params, features)
    return cache.q[0] if np.ndim(features) == 1 else cache.q


def backward(
    params: PolicyParams,
    features: np.ndarray,
    dlogits: np.ndarray,
    dq: np.ndarray,
    cache: ForwardCache | None = None,
) -> PolicyParams:
    """Gradient of a scalar loss given its gradients w.r.t. logits and Q outputs."""
    if cache is None:
        cache = forward(params, features)
    X, h = cache.X, cache.h
    A = params.dims[2]
    dlogits = np.asarray(dlogits, dtype=float)
    dq = np.asarray(dq, dtype=float)
    if dlogits.size != X.shape[0] * A or dq.size != X.shape[0] * A:
        raise DimensionMismatch(f"upstream gradients must have {A} columns")
    dlogits = dlogits.reshape(X.shape[0], A)
    dq = dq.reshape(X.shape[0], A)
    dh = dlogits @ params.wp + dq @ params.wq
    dz = dh * (1.0 - h**2)
    return PolicyParams(
        w1=dz.T @ X,
        b1=dz.sum(axis=0),
        wp=dlogits.T @ h,
        bp=dlogits.sum(axis=0),
        wq=dq.T @ h,
        bq=dq.sum(axis=0),
    )


def top2_gap(probs: np.ndarray) -> float:
    """top(1) - top(2) of an action distribution."""
    p = np.asarray(probs, dtype=float)
    if p.size < 2:
        raise TooFewActions("the top-2 gap needs at least two actions")
    top = np.partition(p, -2)[-2:]
    return float(top[1] - top[0])


def entropy(probs: np.ndarray) -> float:
    p = np.asarray(probs, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def save_checkpoint(params: PolicyParams, path: str | Path, encoder_hash: str | None = None,
                    extra: dict | None = None) -> Path:
    D, H, A = params.dims
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {"D": D, "H": H, "A": A},
        "encoder_hash": encoder_hash,
        "param_version": params.version,
        "meta": params.meta,
        "extra": extra or {},
        "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in params.arrays().items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def load_checkpoint(path: str | Path, dims: tuple[int, int, int] | None = None,
                    encoder_hash: str | None = None) -> PolicyParams:
    """Load a checkpoint, optionally checking (D, H, A) and the encoder hash.

    ``H`` in ``dims`` may be None to accept any hidden width.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a policy checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}")
    try:
        arrays = {
            k: np.array(payload["arrays"][k]["data"], dtype=float).reshape(payload["arrays"][k]["shape"])
            for k in PARAM_NAMES
        }
        params = PolicyParams(**arrays, version=int(payload.get("param_version", 0)),
                              meta=dict(payload.get("meta") or {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DimensionMismatch):
            raise
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if dims is not None:
        want = tuple(dims)
        got = params.dims
        if any(w is not None and w != g for w, g in zip(want, got)):
            raise DimensionMismatch(f"checkpoint dims {got} do not match expected {want}")
    if encoder_hash is not None and payload.get("encoder_hash") not in (None, encoder_hash):
        raise EncoderMismatch("checkpoint was trained with a different state encoder")
    return params


class PolicyModel:
    """Encoder plus parameters: the object planners and trainers consume."""

    def __init__(self, encoder, params: PolicyParams):
        if params.dims[0] != encoder.dim:
            raise DimensionMismatch(f"encoder dim {encoder.dim} != parameter D {params.dims[0]}")
        self.encoder = encoder
        self.params = params
        self.calls = 0

    @classmethod
    def fresh(cls, encoder, hidden: int = 64, n_actions: int | None = None, seed=None):
        A = n_actions if n_actions is not None else encoder.n_actions
        return cls(encoder, PolicyParams.initialize(encoder.dim, hidden, A, seed))

    @classmethod
    def uniform(cls, encoder, hidden: int = 1, n_actions: int | None = None):
        A = n_actions if n_actions is not None else encoder.n_actions
        return cls(encoder, PolicyParams.zeros(encoder.dim, hidden, A))

    @property
    def n_actions(self) -> int:
        return self.params.dims[2]

    def features(self, state) -> np.ndarray:
        return self.encoder.encode(state)

    def distribution(self, state) -> np.ndarray:
        self.calls += 1
        return policy_forward(self.params, self.features(state))

    def q_values(self, state) -> np.ndarray:
        return q_forward(self.params, self.features(state))

    def greedy(self, state) -> int:
        return int(np.argmax(self.distribution(state)))

    def save(self, path) -> Path:
        from dualplan.encoder import config_hash

        return save_checkpoint(self.params, path, config_hash(self.encoder),
                               extra={"encoder": self.encoder.config()})

    @classmethod
    def load(cls, encoder, path) -> PolicyModel:
        from dualplan.encoder import config_hash

        params = load_checkpoint(path, dims=(encoder.dim, None, encoder.n_actions),
                                 encoder_hash=config_hash(encoder))
        return cls(encoder, params)
