"""Stacked GRU forecaster in numpy with hand-written backpropagation through time.

Per input step the network concatenates a linear projection of the numeric
features, a time-of-day embedding and a turbine-id embedding, runs the
stacked GRU, and maps the final top-layer hidden state through a linear head.
There are two heads: a 288-step head trained during pretraining and a
36-step head trained during finetuning. The final forecast takes its first
36 steps from the short head and the rest from the long head.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import load_arrays, save_arrays
from .preprocess import RobustScaler, WindowSample, WindowSet, invert_scaler

log = logging.getLogger(__name__)

LONG_HEAD = 288
SHORT_HEAD = 36


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class GruConfig:
    n_features: int = 10
    n_ids: int = 1
    numeric_dim: int = 42
    time_dim: int = 6
    id_dim: int = 6
    hidden: int = 48
    layers: int = 2
    dropout: float = 0.05
    steps_per_day: int = 144
    long_len: int = LONG_HEAD
    short_len: int = SHORT_HEAD

    @property
    def input_width(self) -> int:
        return self.numeric_dim + self.time_dim + self.id_dim


@dataclass(frozen=True)
class GruTrainConfig:
    pretrain_input: int = 72
    pretrain_epochs: int = 20
    finetune_input: int = 36
    finetune_epochs: int = 5
    learning_rate: float = 1e-4
    batch_size: int = 256
    clip_norm: float = 5.0
    stride: int = 1
    seed: int = 0
    keep_best_epoch: bool = False  # restore the phase's lowest-valid-loss weights


class GruCell:
    """One GRU layer. Weights are stacked in (reset, update, new) order."""

    def __init__(self, W_ih, W_hh, b_ih, b_hh):
        self.W_ih, self.W_hh, self.b_ih, self.b_hh = W_ih, W_hh, b_ih, b_hh
        self.hidden_size = W_hh.shape[1]
        if W_ih.shape[0] != 3 * self.hidden_size or W_hh.shape != (3 * self.hidden_size, self.hidden_size):
            raise ValueError("inconsistent GRU weight shapes")

    def _part(self, a, k):
        h = self.hidden_size
        return a[k * h:(k + 1) * h]

    W_ir = property(lambda s: s._part(s.W_ih, 0))
    W_iz = property(lambda s: s._part(s.W_ih, 1))
    W_in = property(lambda s: s._part(s.W_ih, 2))
    W_hr = property(lambda s: s._part(s.W_hh, 0))
    W_hz = property(lambda s: s._part(s.W_hh, 1))
    W_hn = property(lambda s: s._part(s.W_hh, 2))
    b_ir = property(lambda s: s._part(s.b_ih, 0))
    b_iz = property(lambda s: s._part(s.b_ih, 1))
    b_in = property(lambda s: s._part(s.b_ih, 2))
    b_hr = property(lambda s: s._part(s.b_hh, 0))
    b_hz = property(lambda s: s._part(s.b_hh, 1))
    b_hn = property(lambda s: s._part(s.b_hh, 2))

    @classmethod
    def zeros(cls, input_size, hidden_size):
        h3 = 3 * hidden_size
        return cls(np.zeros((h3, input_size)), np.zeros((h3, hidden_size)), np.zeros(h3), np.zeros(h3))


def gru_cell_step(cell: GruCell, x_t, h_prev):
    """One GRU update; works on a single vector or a batch of row vectors."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != cell.W_ih.shape[1] or h_prev.shape[-1] != cell.hidden_size:
        raise ValueError("shape mismatch between cell and inputs")
    H = cell.hidden_size
    gi = x_t @ cell.W_ih.T + cell.b_ih
    gh = h_prev @ cell.W_hh.T + cell.b_hh
    r = sigmoid(gi[..., :H] + gh[..., :H])
    z = sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
    n = np.tanh(gi[..., 2 * H:] + r * gh[..., 2 * H:])
    return (1.0 - z) * n + z * h_prev


def init_params(cfg: GruConfig, seed: int = 0) -> dict:
    """Uniform(+-1/sqrt(hidden)) weights and embeddings, zero biases."""
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(cfg.hidden)

    def u(*shape):
        return rng.uniform(-k, k, size=shape)

    H = cfg.hidden
    p = {
        "proj.W": u(cfg.n_features, cfg.numeric_dim),
        "proj.b": np.zeros(cfg.numeric_dim),
        "emb.time": u(cfg.steps_per_day, cfg.time_dim),
        "emb.id": u(cfg.n_ids, cfg.id_dim),
    }
    d_in = cfg.input_width
    for layer in range(cfg.layers):
        p[f"gru{layer}.W_ih"] = u(3 * H, d_in)
        p[f"gru{layer}.W_hh"] = u(3 * H, H)
        p[f"gru{layer}.b_ih"] = np.zeros(3 * H)
        p[f"gru{layer}.b_hh"] = np.zeros(3 * H)
        d_in = H
    p["head288.W"] = u(H, cfg.long_len)
    p["head288.b"] = np.zeros(cfg.long_len)
    p["head36.W"] = u(H, cfg.short_len)
    p["head36.b"] = np.zeros(cfg.short_len)
    return p


def _head_name(head: int) -> str:
    if head not in (LONG_HEAD, SHORT_HEAD):
        raise ValueError(f"unknown head {head}")
    return f"head{head}"


@dataclass(eq=False)
class GruNetwork:
    config: GruConfig
    params: dict
    short_head_trained: bool = False

    @classmethod
    def create(cls, config: GruConfig, seed: int = 0) -> "GruNetwork":
        return cls(config, init_params(config, seed))

    def cell(self, layer: int) -> GruCell:
        p = self.params
        return GruCell(p[f"gru{layer}.W_ih"], p[f"gru{layer}.W_hh"], p[f"gru{layer}.b_ih"], p[f"gru{layer}.b_hh"])

    # -- forward / backward ------------------------------------------------

    def forward(self, inputs, tod, ids, head: int = LONG_HEAD, train: bool = False, rng=None,
                keep_cache: bool = False):
        """Batched forward pass.

        ``inputs`` is ``(B, T, n_features)``, ``tod`` ``(B, T)`` slot indices,
        ``ids`` ``(B,)`` rows of the id embedding. Dropout between GRU layers
        is applied only when ``train`` is set.
        """
        cfg, p = self.config, self.params
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 2:
            inputs, tod, ids = inputs[None], np.asarray(tod)[None], np.atleast_1d(ids)
        ids = np.asarray(ids, dtype=np.int64)
        tod = np.asarray(tod, dtype=np.int64)
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= cfg.n_ids:
            raise KeyError(f"turbine index outside the id embedding (0..{cfg.n_ids - 1})")
        B, T, _ = inputs.shape
        H = cfg.hidden
        u = np.concatenate([
            inputs @ p["proj.W"] + p["proj.b"],
            p["emb.time"][tod],
            np.broadcast_to(p["emb.id"][ids][:, None, :], (B, T, cfg.id_dim)),
        ], axis=2)

        caches = []
        layer_in = u
        for layer in range(cfg.layers):
            W_ih, W_hh = p[f"gru{layer}.W_ih"], p[f"gru{layer}.W_hh"]
            b_hh = p[f"gru{layer}.b_hh"]
            gi = layer_in @ W_ih.T + p[f"gru{layer}.b_ih"]
            h = np.zeros((B, H))
            hs = np.empty((B, T, H))
            rs, zs, ns, ghn = (np.empty((B, T, H)) for _ in range(4))
            for t in range(T):
                gh = h @ W_hh.T + b_hh
                r = sigmoid(gi[:, t, :H] + gh[:, :H])
                z = sigmoid(gi[:, t, H:2 * H] + gh[:, H:2 * H])
                n = np.tanh(gi[:, t, 2 * H:] + r * gh[:, 2 * H:])
                h = (1.0 - z) * n + z * h
                hs[:, t], rs[:, t], zs[:, t], ns[:, t], ghn[:, t] = h, r, z, n, gh[:, 2 * H:]
            drop = None
            if train and cfg.dropout > 0 and layer < cfg.layers - 1:
                rng = rng if rng is not None else np.random.default_rng()
                keep = 1.0 - cfg.dropout
                drop = (rng.random((B, T, H)) < keep) / keep
            caches.append((layer_in, hs, rs, zs, ns, ghn, drop))
            layer_in = hs * drop if drop is not None else hs

        hT = layer_in[:, -1]
        name = _head_name(head)
        out = hT @ p[f"{name}.W"] + p[f"{name}.b"]
        if keep_cache:
            self._cache = (inputs, tod, ids, caches, hT, head)
        return out

    def backward(self, dout) -> dict:
        """Gradients of a scalar loss given ``dout = dL/d(output)`` from the last cached forward."""
        cfg, p = self.config, self.params
        inputs, tod, ids, caches, hT, head = self._cache
        B, T, _ = inputs.shape
        H = cfg.hidden
        g = {k: np.zeros_like(v) for k, v in p.items()}
        name = _head_name(head)
        g[f"{name}.W"] = hT.T @ dout
        g[f"{name}.b"] = dout.sum(axis=0)
        dh_seq = np.zeros((B, T, H))
        dh_seq[:, -1] = dout @ p[f"{name}.W"].T

        for layer in reversed(range(cfg.layers)):
            layer_in, hs, rs, zs, ns, ghn, _ = caches[layer]
            W_ih, W_hh = p[f"gru{layer}.W_ih"], p[f"gru{layer}.W_hh"]
            dgi = np.empty((B, T, 3 * H))
            dW_hh = np.zeros_like(W_hh)
            db_hh = np.zeros(3 * H)
            dh_next = np.zeros((B, H))
            for t in reversed(range(T)):
                h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
                r, z, n = rs[:, t], zs[:, t], ns[:, t]
                dh = dh_seq[:, t] + dh_next
                dn = dh * (1.0 - z)
                dz = dh * (h_prev - n)
                da_n = dn * (1.0 - n * n)
                da_r = da_n * ghn[:, t] * r * (1.0 - r)
                da_z = dz * z * (1.0 - z)
                dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
                dgi[:, t] = np.concatenate([da_r, da_z, da_n], axis=1)
                dW_hh += dgh.T @ h_prev
                db_hh += dgh.sum(axis=0)
                dh_next = dh * z + dgh @ W_hh
            g[f"gru{layer}.W_hh"] = dW_hh
            g[f"gru{layer}.b_hh"] = db_hh
            g[f"gru{layer}.W_ih"] = dgi.reshape(B * T, -1).T @ layer_in.reshape(B * T, -1)
            g[f"gru{layer}.b_ih"] = dgi.sum(axis=(0, 1))
            d_in = dgi @ W_ih
            if layer > 0:
                drop = caches[layer - 1][6]
                dh_seq = d_in * drop if drop is not None else d_in
            else:
                du = d_in

        nd, td = cfg.numeric_dim, cfg.time_dim
        g["proj.W"] = inputs.reshape(B * T, -1).T @ du[:, :, :nd].reshape(B * T, -1)
        g["proj.b"] = du[:, :, :nd].sum(axis=(0, 1))
        np.add.at(g["emb.time"], tod.reshape(-1), du[:, :, nd:nd + td].reshape(B * T, -1))
        np.add.at(g["emb.id"], ids, du[:, :, nd + td:].sum(axis=1))
        self._cache = None
        return g

    def loss_and_grads(self, inputs, tod, ids, target, mask, head=LONG_HEAD, rng=None, train=True):
        """Masked MSE and its gradients. Returns ``(loss, grads)``; grads is None if nothing is unmasked."""
        mask = np.asarray(mask, dtype=bool)
        count = int(mask.sum())
        out = self.forward(inputs, tod, ids, head, train=train, rng=rng, keep_cache=True)
        if count == 0:
            self._cache = None
            return 0.0, None
        diff = np.where(mask, out - np.nan_to_num(target), 0.0)
        loss = float((diff * diff).sum() / count)
        grads = self.backward(2.0 * diff / count)
        return loss, grads

    def predict(self, inputs, tod, ids, head=LONG_HEAD):
        return self.forward(inputs, tod, ids, head, train=False)

    # -- persistence -------------------------------------------------------

    def state(self) -> tuple[dict, dict]:
        meta = {"config": asdict(self.config), "short_head_trained": self.short_head_trained}
        return dict(self.params), meta

    @classmethod
    def from_state(cls, arrays: dict, meta: dict) -> "GruNetwork":
        return cls(GruConfig(**meta["config"]), {k: np.array(v) for k, v in arrays.items()},
                   bool(meta["short_head_trained"]))

    def save(self, path) -> None:
        arrays, meta = self.state()
        save_arrays(path, arrays, {"kind": "gru_network", **meta})

    @classmethod
    def load(cls, path) -> "GruNetwork":
        arrays, meta = load_arrays(path)
        return cls.from_state(arrays, meta)


# --------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, names=None) -> None:
    """Bias-corrected Adam update, in place, for ``names`` (default: all grads)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k in (names if names is not None else grads):
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(grads: dict, names, max_norm: float) -> float:
    total = float(np.sqrt(sum(float((grads[k] ** 2).sum()) for k in names)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in names:
            grads[k] = grads[k] * scale
    return total


# --------------------------------------------------------------------------
# Training


def evaluate_loss(net: GruNetwork, windows: WindowSet, head: int, batch_size: int = 1024) -> float:
    """Masked MSE over a window set in eval mode (NaN if nothing is unmasked)."""
    total, count = 0.0, 0
    for a in range(0, len(windows), batch_size):
        inputs, tod, ids, tgt, msk = windows.gather(np.arange(a, min(a + batch_size, len(windows))))
        out = net.predict(inputs, tod, ids, head)
        d = np.where(msk, out - np.nan_to_num(tgt), 0.0)
        total += float((d * d).sum())
        count += int(msk.sum())
    return total / count if count else float("nan")


def train_phase(net: GruNetwork, train: WindowSet, head: int, epochs: int, cfg: GruTrainConfig,
                rng: np.random.Generator, valid: WindowSet | None = None) -> list:
    """Train the encoder plus one head; the other head is left untouched."""
    other = "head36" if head == LONG_HEAD else "head288"
    names = [k for k in net.params if not k.startswith(other)]
    state = AdamState(learning_rate=cfg.learning_rate)
    history = []
    skipped = 0
    best_loss, best_params = np.inf, None
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        losses = []
        for a in range(0, len(order), cfg.batch_size):
            batch = np.sort(order[a:a + cfg.batch_size])
            inputs, tod, ids, tgt, msk = train.gather(batch)
            loss, grads = net.loss_and_grads(inputs, tod, ids, tgt, msk, head, rng=rng)
            if grads is None:
                skipped += 1
                continue
            clip_global_norm(grads, names, cfg.clip_norm)
            adam_step(net.params, grads, state, names)
            losses.append(loss)
        rec = {"epoch": epoch, "head": head, "train_loss": float(np.mean(losses)) if losses else float("nan"),
               "skipped_batches": skipped}
        if valid is not None and len(valid):
            rec["valid_loss"] = evaluate_loss(net, valid, head)
            if cfg.keep_best_epoch and rec["valid_loss"] < best_loss:
                best_loss = rec["valid_loss"]
                best_params = {k: net.params[k].copy() for k in names}
        log.info("gru head=%d epoch=%d train=%.5f valid=%s", head, epoch, rec["train_loss"],
                 rec.get("valid_loss"))
        history.append(rec)
    if best_params is not None:
        net.params.update(best_params)
        history[-1]["restored_valid_loss"] = best_loss
    return history


def train_continual(net: GruNetwork, pre_train: WindowSet, fine_train: WindowSet, cfg: GruTrainConfig,
                    pre_valid: WindowSet | None = None, fine_valid: WindowSet | None = None) -> list:
    """Pretrain encoder + 288-head, then finetune encoder + 36-head from those weights."""
    if len(pre_train) == 0:
        raise ValueError("empty pretraining window set")
    rng = np.random.default_rng(cfg.seed)
    history = train_phase(net, pre_train, LONG_HEAD, cfg.pretrain_epochs, cfg, rng, pre_valid)
    if cfg.finetune_epochs > 0:
        if len(fine_train) == 0:
            raise ValueError("empty finetuning window set")
        history += train_phase(net, fine_train, SHORT_HEAD, cfg.finetune_epochs, cfg, rng, fine_valid)
        net.short_head_trained = True
    return history


def stitch(long_pred, short_pred, n_short: int = SHORT_HEAD):
    """First ``n_short`` steps from the short head, the rest from the long head."""
    out = np.array(long_pred, dtype=np.float64, copy=True)
    out[..., :n_short] = short_pred[..., :n_short]
    return out


def predict_stitched(net: GruNetwork, window_long: WindowSample, window_short: WindowSample,
                     scaler: RobustScaler, id_index: int | None = None):
    """288-step forecast in power units from matching long/short input windows."""
    if window_long.origin != window_short.origin:
        raise ValueError(f"origin mismatch: {window_long.origin} vs {window_short.origin}")
    ids = np.array([window_long.turbine_id if id_index is None else id_index])
    long_out = net.predict(window_long.input[None], window_long.time_of_day[None], ids, LONG_HEAD)[0]
    if net.short_head_trained:
        short_out = net.predict(window_short.input[None], window_short.time_of_day[None], ids, SHORT_HEAD)[0]
        scaled = stitch(long_out, short_out)
    else:
        log.warning("36-step head is untrained; returning the 288-step head only")
        scaled = long_out
    return invert_scaler(scaler, scaled[:, None], ["patv"])[:, 0]
