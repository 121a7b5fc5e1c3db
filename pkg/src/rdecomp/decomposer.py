"""Learned decomposition of episodic returns over time intervals.

A predictor maps a trajectory to one scalar surrogate reward per interval.
Two interval families are supported, both indexed so that interval i ends
at step i (max index i):

  singletons: interval i covers step i alone
  prefixes:   interval i covers steps 0..i

Three architectures mirror the usual sequence-model ladder. The per-step
feed-forward net handles singletons only; the recurrent and attention
variants are causal, so their output for interval i is a function of steps
0..i exactly — perturbing any later step changes nothing.

Training regresses the summed per-interval predictions onto the episodic
return with a squared loss. Returns are standardized by a running
normalizer before regression (raw returns can span orders of magnitude;
raw targets destabilize these small networks), and predictions are
de-standardized for policy-gradient use, spreading the mean evenly across
intervals so the composite identity survives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rdecomp import autodiff as ad
from rdecomp import nn

VALID_KINDS = ("singletons", "prefixes")

# Layer widths at the two scales. "paper" is the published configuration;
# "desk" halves every width for the small benchmark environments.
WIDTHS = {
    "paper": {
        "embed": 64,
        "heads": 4,
        "qk": 32,
        "ff_hidden": 128,
        "pool": 64,
        "lstm_hidden": 96,
        "ff_channels": [128, 128, 128, 256],
    },
    "desk": {
        "embed": 32,
        "heads": 4,
        "qk": 16,
        "ff_hidden": 64,
        "pool": 32,
        "lstm_hidden": 48,
        "ff_channels": [64, 64, 64, 128],
    },
}


class IntervalSet:
    """The family of time intervals the surrogate rewards are defined on."""

    def __init__(self, kind):
        if kind not in VALID_KINDS:
            raise ValueError(f"interval kind must be one of {VALID_KINDS}, got {kind!r}")
        self.kind = kind

    def members(self, i):
        """Time steps covered by interval i (its max index is always i)."""
        return list(range(i + 1)) if self.kind == "prefixes" else [i]

    def count(self, t_len):
        return t_len

    def max_index(self, i):
        return i

    def __repr__(self):
        return f"IntervalSet({self.kind!r})"


@dataclass
class RewardDecomposition:
    """Per-interval surrogate rewards for one trajectory.

    per_interval is ordered by interval end (ascending max index);
    composite is its left-to-right sum, and residual = R - composite.
    Both identities hold by construction.
    """

    per_interval: np.ndarray
    composite: float
    residual: float

    @classmethod
    def from_values(cls, values, episodic_return):
        values = np.asarray(values, dtype=np.float64)
        composite = 0.0
        for v in values:
            composite += float(v)
        return cls(values, composite, episodic_return - composite)


class ReturnNormalizer:
    """Running mean/std of episodic returns used to standardize targets."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def update(self, returns):
        for r in np.atleast_1d(returns):
            self.count += 1
            delta = r - self.mean
            self.mean += delta / self.count
            self._m2 += delta * (r - self.mean)

    @property
    def std(self):
        if self.count < 2:
            return 1.0
        return max(float(np.sqrt(self._m2 / self.count)), 1e-6)

    def normalize(self, r):
        return (r - self.mean) / self.std

    def state(self):
        return {"count": self.count, "mean": self.mean, "m2": self._m2}

    @classmethod
    def from_state(cls, state):
        out = cls()
        out.count = state["count"]
        out.mean = state["mean"]
        out._m2 = state["m2"]
        return out


# ---------------------------------------------------------------------------
# predictor architectures


class FeedForwardPredictor:
    """Per-step MLP: interval i sees (s_i, a_i) only. Singleton intervals."""

    architecture = "ff"

    def __init__(self, input_dim, rng, scale="desk"):
        widths = WIDTHS[scale]
        channels = widths["ff_channels"]
        self.input_dim = input_dim
        self.scale = scale
        params = {}
        dims = [input_dim] + channels
        for i in range(len(channels)):
            w, b = nn.init_linear(rng, dims[i], dims[i + 1])
            params[f"l{i}_w"], params[f"l{i}_b"] = w, b
        params["head_w"], params["head_b"] = nn.init_linear(rng, channels[-1], 1)
        self.params = params
        self.n_layers = len(channels)

    def supports(self, kind):
        return kind == "singletons"

    def reward_sequence(self, x):
        """x: Tensor (T, input_dim) -> Tensor (T, 1) of per-interval rewards."""
        h = x
        for i in range(self.n_layers):
            h = ad.tanh(nn.linear(h, self.params[f"l{i}_w"], self.params[f"l{i}_b"]))
        return nn.linear(h, self.params["head_w"], self.params["head_b"])

    def hyperparams(self):
        return {"input_dim": self.input_dim, "scale": self.scale}


class RecurrentPredictor:
    """Shared embedding into an LSTM run forward in time.

    For prefix intervals the hidden states 0..i are mean-pooled before the
    regression head; for singletons the head reads h_i directly.
    """

    architecture = "recurrent"

    def __init__(self, input_dim, rng, scale="desk"):
        widths = WIDTHS[scale]
        self.input_dim = input_dim
        self.scale = scale
        self.embed_dim = widths["embed"]
        self.hidden_dim = widths["lstm_hidden"]
        ew, eb = nn.init_linear(rng, input_dim, self.embed_dim)
        cell = nn.lstm_params(rng, self.embed_dim, self.hidden_dim)
        hw, hb = nn.init_linear(rng, self.hidden_dim, 1)
        self.params = {
            "embed_w": ew,
            "embed_b": eb,
            "lstm_w": cell["w"],
            "lstm_b": cell["b"],
            "head_w": hw,
            "head_b": hb,
        }

    def supports(self, kind):
        return kind in VALID_KINDS

    def _hidden_states(self, x):
        t_len = x.shape[0]
        v = ad.tanh(nn.linear(x, self.params["embed_w"], self.params["embed_b"]))
        cell = {"w": self.params["lstm_w"], "b": self.params["lstm_b"]}
        h = ad.constant(np.zeros((1, self.hidden_dim)))
        c = ad.constant(np.zeros((1, self.hidden_dim)))
        rows = []
        for t in range(t_len):
            h, c = nn.lstm_step(cell, ad.narrow(v, 0, t, t + 1), h, c, self.hidden_dim)
            rows.append(h)
        return ad.concat(rows, axis=0)

    def reward_sequence(self, x, kind="prefixes"):
        hs = self._hidden_states(x)
        if kind == "prefixes":
            t_len = x.shape[0]
            # Row t of the lower-triangular averaging matrix mean-pools h_0..h_t.
            tri = np.tril(np.ones((t_len, t_len))) / np.arange(1, t_len + 1)[:, None]
            hs = ad.matmul(ad.constant(tri), hs)
        return nn.linear(hs, self.params["head_w"], self.params["head_b"])

    def hyperparams(self):
        return {"input_dim": self.input_dim, "scale": self.scale}


class AttentionPredictor:
    """Causally masked single-layer attention encoder with importance pooling.

    Pipeline per trajectory: shared embedding v_t (optionally plus a
    sinusoidal position signal), one encoder layer (multi-head causal
    self-attention, residual, layer norm, position-wise feed-forward,
    residual, layer norm) giving h_t, an importance gate
    z = sigmoid(w_s2 tanh(W_s1 H^T)), and a linear head on h*_t = z_t h_t.
    """

    architecture = "attention"

    def __init__(self, input_dim, rng, scale="desk", positional=True):
        widths = WIDTHS[scale]
        self.input_dim = input_dim
        self.scale = scale
        self.positional = positional
        d = widths["embed"]
        self.embed_dim = d
        self.n_heads = widths["heads"]
        self.qk_dim = widths["qk"]
        self.head_dim = d // self.n_heads
        self.ff_hidden = widths["ff_hidden"]
        self.pool_dim = widths["pool"]
        p = {}
        p["embed_w"], p["embed_b"] = nn.init_linear(rng, input_dim, d)
        p["wq"], _ = nn.init_linear(rng, d, self.n_heads * self.qk_dim)
        p["wk"], _ = nn.init_linear(rng, d, self.n_heads * self.qk_dim)
        p["wv"], _ = nn.init_linear(rng, d, self.n_heads * self.head_dim)
        p["wo"], p["bo"] = nn.init_linear(rng, self.n_heads * self.head_dim, d)
        p["ln1_g"] = ad.Tensor(np.ones(d))
        p["ln1_b"] = ad.Tensor(np.zeros(d))
        p["ff1_w"], p["ff1_b"] = nn.init_linear(rng, d, self.ff_hidden)
        p["ff2_w"], p["ff2_b"] = nn.init_linear(rng, self.ff_hidden, d)
        p["ln2_g"] = ad.Tensor(np.ones(d))
        p["ln2_b"] = ad.Tensor(np.zeros(d))
        p["pool_w1"], _ = nn.init_linear(rng, d, self.pool_dim)
        p["pool_w2"], _ = nn.init_linear(rng, self.pool_dim, 1)
        p["head_w"], p["head_b"] = nn.init_linear(rng, d, 1)
        self.params = p

    def supports(self, kind):
        return kind in VALID_KINDS

    def embed(self, x):
        """Shared per-step embedding; identical (s, a) pairs embed identically."""
        return ad.tanh(nn.linear(x, self.params["embed_w"], self.params["embed_b"]))

    def encode(self, v):
        """Encoder layer; returns (H, list of per-head attention matrices).

        The position signal enters here, not in `embed`, so the embedding
        stays a pure function of the state-action pair.
        """
        p = self.params
        if self.positional:
            pos = nn.sinusoidal_positions(v.shape[0], self.embed_dim)
            v = ad.add(v, ad.constant(pos))
        heads = []
        attns = []
        q_all = ad.matmul(v, p["wq"])
        k_all = ad.matmul(v, p["wk"])
        v_all = ad.matmul(v, p["wv"])
        inv_sqrt = 1.0 / np.sqrt(self.qk_dim)
        for h in range(self.n_heads):
            q = ad.narrow(q_all, 1, h * self.qk_dim, (h + 1) * self.qk_dim)
            k = ad.narrow(k_all, 1, h * self.qk_dim, (h + 1) * self.qk_dim)
            val = ad.narrow(v_all, 1, h * self.head_dim, (h + 1) * self.head_dim)
            scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt)
            attn = ad.softmax(scores, causal=True)
            attns.append(attn)
            heads.append(ad.matmul(attn, val))
        mixed = nn.linear(ad.concat(heads, axis=1), p["wo"], p["bo"])
        u = ad.layer_norm(ad.add(v, mixed), p["ln1_g"], p["ln1_b"])
        ff = nn.linear(ad.tanh(nn.linear(u, p["ff1_w"], p["ff1_b"])), p["ff2_w"], p["ff2_b"])
        return ad.layer_norm(ad.add(u, ff), p["ln2_g"], p["ln2_b"]), attns

    def importance(self, hs):
        """z_t in (0, 1) per step: sigmoid(w_s2 tanh(W_s1 H^T))."""
        return ad.sigmoid(
            ad.matmul(ad.tanh(ad.matmul(hs, self.params["pool_w1"])), self.params["pool_w2"])
        )

    def forward_full(self, x):
        """Returns (rewards (T,1), z (T,1), per-head attention matrices)."""
        hs, attns = self.encode(self.embed(x))
        z = self.importance(hs)
        pooled = ad.scale_rows(hs, z)
        rhat = nn.linear(pooled, self.params["head_w"], self.params["head_b"])
        return rhat, z, attns

    def reward_sequence(self, x):
        return self.forward_full(x)[0]

    def hyperparams(self):
        return {
            "input_dim": self.input_dim,
            "scale": self.scale,
            "positional": self.positional,
        }


def make_predictor(architecture, input_dim, rng, scale="desk", positional=True):
    if architecture == "ff":
        return FeedForwardPredictor(input_dim, rng, scale)
    if architecture == "recurrent":
        return RecurrentPredictor(input_dim, rng, scale)
    if architecture == "attention":
        return AttentionPredictor(input_dim, rng, scale, positional)
    raise ValueError(f"unknown architecture {architecture!r}")


def predictor_from_checkpoint(params, meta):
    """Rebuild a predictor from checkpoint contents (see rdecomp.checkpoint)."""
    hp = meta["hyperparams"]
    rng = np.random.default_rng(0)
    model = make_predictor(
        meta["architecture"],
        hp["input_dim"],
        rng,
        hp.get("scale", "desk"),
        hp.get("positional", True),
    )
    missing = set(model.params) ^ set(params)
    if missing:
        raise ValueError(f"checkpoint parameter mismatch: {sorted(missing)}")
    model.params = params
    return model


# ---------------------------------------------------------------------------
# prediction and regression


def _reward_tensor(model, traj, interval_set, n_actions=None):
    x = ad.constant(traj.input_matrix(n_actions))
    if not model.supports(interval_set.kind):
        raise ValueError(
            f"{model.architecture} predictor does not support "
            f"{interval_set.kind!r} intervals"
        )
    if model.architecture == "recurrent":
        return model.reward_sequence(x, interval_set.kind)
    return model.reward_sequence(x)


def predict(model, traj, interval_set, normalizer=None, n_actions=None):
    """Decompose one trajectory into per-interval rewards.

    With a normalizer, the model's standardized-scale outputs are mapped
    back to return units: each interval gets std * r + mean / T so the
    composite matches the raw-return scale.
    """
    values = _reward_tensor(model, traj, interval_set, n_actions).data.reshape(-1)
    if normalizer is not None:
        values = normalizer.std * values + normalizer.mean / traj.length
    return RewardDecomposition.from_values(values, traj.episodic_return)


def regression_loss(model, batch, interval_set, normalizer=None, n_actions=None):
    """Tape-level squared loss: sum over batch of (sum r_hat - R)^2."""
    per_traj = []
    for traj in batch:
        rhat = _reward_tensor(model, traj, interval_set, n_actions)
        target = traj.episodic_return
        if normalizer is not None:
            target = normalizer.normalize(target)
        err = ad.shift(ad.sum_all(rhat), -target)
        per_traj.append(ad.square(err))
    return ad.sum_all(ad.concat(per_traj, axis=0))


def regression_step(
    model, batch, interval_set, lr=None, optimizer=None, normalizer=None, n_actions=None
):
    """One gradient-descent update of the predictor; returns the loss value.

    A non-finite loss aborts with the offending value before any parameter
    is touched.
    """
    if not batch:
        raise ValueError("regression_step: empty batch")
    if optimizer is None:
        optimizer = nn.SgdOptimizer(lr if lr is not None else 1e-3)
    loss = regression_loss(model, batch, interval_set, normalizer, n_actions)
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"regression loss is non-finite ({value})")
    grads = ad.backward(loss)
    model.params = optimizer.step(model.params, grads)
    return value
