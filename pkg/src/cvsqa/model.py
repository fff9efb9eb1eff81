"""Sequence-to-sequence LSTM variational autoencoder in plain numpy.

Architecture: a 2-layer LSTM encoder compresses a window into the final
hidden and cell states of both layers (the 32x4 state block). Affine heads
map the flattened block to a Gaussian latent; the reconstruction decoder is
seeded from the latent (hidden) and the encoder cells (cell) and must emit
the input window reversed; an auxiliary prediction decoder is seeded from
the full encoder state and must emit the next window. Decoder inputs are
zero at every step, so all information flows through the initial states.

Two cell variants are provided. The default "cell" variant feeds the
previous cell state into the gates and gives the candidate no recurrent
term; "standard" is the textbook cell (gates and candidate read the
previous hidden state). Everything runs in float64; forward passes can
record caches for the trainer's reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .traces import DataError

VARIANTS = ("cell", "standard")
MODES = ("point", "cycle")

#: Stacked LSTM depth; fixed by the architecture.
N_LAYERS = 2


@dataclass(frozen=True)
class ModelConfig:
    """Window geometry and network sizes."""

    mode: str = "cycle"
    data_dim: int = 150
    n_input: int = 2
    n_future: int = 2
    hidden_dim: int = 32
    latent_dim: int = 32
    variant: str = "cell"

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}")
        if self.variant not in VARIANTS:
            raise DataError(f"variant must be one of {VARIANTS}")
        if min(self.data_dim, self.n_input, self.hidden_dim, self.latent_dim) < 1:
            raise DataError("dims and input length must be >= 1")
        if self.n_future < 0:
            raise DataError("future length must be >= 0")


class LstmState(NamedTuple):
    """Hidden and cell vectors of one layer."""

    h: np.ndarray
    c: np.ndarray


@dataclass
class LstmLayerParams:
    """One LSTM layer with gates stacked row-wise in order F, I, O, G.

    W: (4h, input_dim) input weights; b: (4h,) biases. U holds the recurrent
    weights: in the "cell" variant it is (3h, h) and multiplies the previous
    cell state for the F/I/O gates only (the candidate G has no recurrent
    term); in "standard" it is (4h, h) and multiplies the previous hidden
    state for all four blocks.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    variant: str = "cell"

    def __post_init__(self):
        h = self.hidden_dim
        if self.W.shape[0] != 4 * h or self.b.shape != (4 * h,):
            raise DataError("W must have 4*hidden rows and b 4*hidden entries")
        rows = 3 * h if self.variant == "cell" else 4 * h
        if self.U.shape != (rows, h):
            raise DataError(f"U must have shape ({rows}, {h})")

    @property
    def hidden_dim(self) -> int:
        return self.b.shape[0] // 4 if self.b.ndim else 0

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    # per-gate views, mainly for tests and oracles
    def gate_w(self, gate: str) -> np.ndarray:
        h = self.hidden_dim
        k = "fiog".index(gate)
        return self.W[k * h : (k + 1) * h]

    def gate_u(self, gate: str) -> np.ndarray:
        h = self.hidden_dim
        k = "fiog".index(gate)
        if gate == "g" and self.variant == "cell":
            raise DataError("candidate has no recurrent weights in this variant")
        return self.U[k * h : (k + 1) * h]

    def gate_b(self, gate: str) -> np.ndarray:
        h = self.hidden_dim
        k = "fiog".index(gate)
        return self.b[k * h : (k + 1) * h]


@dataclass
class LatentHeads:
    """Affine maps around the latent.

    w_mu/w_logvar: (latent, 4h) from the flattened encoder state block;
    w_z: (2h, latent) from the latent to the decoder initial hidden states
    (one h-vector per layer). w_logvar emits log-variance.
    """

    w_mu: np.ndarray
    b_mu: np.ndarray
    w_logvar: np.ndarray
    b_logvar: np.ndarray
    w_z: np.ndarray
    b_z: np.ndarray


@dataclass
class OutputProj:
    """Affine projection hidden_dim -> data_dim applied to layer-2 outputs."""

    W: np.ndarray
    b: np.ndarray


@dataclass
class SeqVaeParams:
    """All learnable arrays plus the configuration they were built for."""

    encoder: tuple[LstmLayerParams, LstmLayerParams]
    decoder_recon: tuple[LstmLayerParams, LstmLayerParams]
    decoder_pred: tuple[LstmLayerParams, LstmLayerParams]
    heads: LatentHeads
    out_recon: OutputProj
    out_pred: OutputProj
    config: ModelConfig

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Canonical (name, array) list; fixed order defines the flat layout."""
        out: list[tuple[str, np.ndarray]] = []
        for prefix, stack in (
            ("enc", self.encoder),
            ("dec_r", self.decoder_recon),
            ("dec_p", self.decoder_pred),
        ):
            for l, layer in enumerate(stack):
                out.append((f"{prefix}{l}.W", layer.W))
                out.append((f"{prefix}{l}.U", layer.U))
                out.append((f"{prefix}{l}.b", layer.b))
        h = self.heads
        out += [
            ("heads.w_mu", h.w_mu), ("heads.b_mu", h.b_mu),
            ("heads.w_logvar", h.w_logvar), ("heads.b_logvar", h.b_logvar),
            ("heads.w_z", h.w_z), ("heads.b_z", h.b_z),
            ("out_r.W", self.out_recon.W), ("out_r.b", self.out_recon.b),
            ("out_p.W", self.out_pred.W), ("out_p.b", self.out_pred.b),
        ]
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def with_flat(self, vec: np.ndarray) -> "SeqVaeParams":
        """Rebuild params from a flat vector laid out as in flatten()."""
        vec = np.asarray(vec, dtype=np.float64)
        shapes = [(n, a.shape) for n, a in self.named_arrays()]
        total = sum(int(np.prod(s)) for _, s in shapes)
        if vec.shape != (total,):
            raise DataError(f"flat vector must have {total} entries")
        arrays = {}
        pos = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            arrays[name] = vec[pos : pos + size].reshape(shape).copy()
            pos += size
        return params_from_arrays(arrays, self.config)

    def copy(self) -> "SeqVaeParams":
        return self.with_flat(self.flatten())


def params_from_arrays(arrays: dict[str, np.ndarray], config: ModelConfig) -> SeqVaeParams:
    """Assemble SeqVaeParams from a name -> array mapping."""
    def layer(prefix: str) -> LstmLayerParams:
        return LstmLayerParams(
            W=arrays[f"{prefix}.W"], U=arrays[f"{prefix}.U"], b=arrays[f"{prefix}.b"],
            variant=config.variant,
        )

    return SeqVaeParams(
        encoder=(layer("enc0"), layer("enc1")),
        decoder_recon=(layer("dec_r0"), layer("dec_r1")),
        decoder_pred=(layer("dec_p0"), layer("dec_p1")),
        heads=LatentHeads(
            w_mu=arrays["heads.w_mu"], b_mu=arrays["heads.b_mu"],
            w_logvar=arrays["heads.w_logvar"], b_logvar=arrays["heads.b_logvar"],
            w_z=arrays["heads.w_z"], b_z=arrays["heads.b_z"],
        ),
        out_recon=OutputProj(W=arrays["out_r.W"], b=arrays["out_r.b"]),
        out_pred=OutputProj(W=arrays["out_p.W"], b=arrays["out_p.b"]),
        config=config,
    )


def init_params(config: ModelConfig, seed: int = 0) -> SeqVaeParams:
    """Seeded init: every weight matrix uniform within +-1/sqrt(hidden), biases 0."""
    rng = np.random.default_rng([seed, 11])
    h, d, lat = config.hidden_dim, config.data_dim, config.latent_dim
    u_rows = 3 * h if config.variant == "cell" else 4 * h
    bound = 1.0 / np.sqrt(h)

    def mat(*shape: int) -> np.ndarray:
        return rng.uniform(-bound, bound, size=shape)

    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape)

    arrays: dict[str, np.ndarray] = {}
    for prefix in ("enc", "dec_r", "dec_p"):
        for l in range(N_LAYERS):
            d_in = d if l == 0 else h
            arrays[f"{prefix}{l}.W"] = mat(4 * h, d_in)
            arrays[f"{prefix}{l}.U"] = mat(u_rows, h)
            arrays[f"{prefix}{l}.b"] = zeros(4 * h)
    arrays["heads.w_mu"] = mat(lat, 4 * h)
    arrays["heads.b_mu"] = zeros(lat)
    arrays["heads.w_logvar"] = mat(lat, 4 * h)
    arrays["heads.b_logvar"] = zeros(lat)
    arrays["heads.w_z"] = mat(N_LAYERS * h, lat)
    arrays["heads.b_z"] = zeros(N_LAYERS * h)
    arrays["out_r.W"] = mat(d, h)
    arrays["out_r.b"] = zeros(d)
    arrays["out_p.W"] = mat(d, h)
    arrays["out_p.b"] = zeros(d)
    return params_from_arrays(arrays, config)


# --------------------------------------------------------------------------
# Cell step
# --------------------------------------------------------------------------


def _sigmoid_inplace(x: np.ndarray) -> np.ndarray:
    """Overwrite x with sigmoid(x) using numpy's vectorized exp.

    1/(1+exp(-x)) saturates cleanly at both tails (exp overflow gives inf,
    whose reciprocal is the correct 0), so only the overflow warning needs
    suppressing.
    """
    np.negative(x, out=x)
    with np.errstate(over="ignore"):
        np.exp(x, out=x)
    x += 1.0
    np.reciprocal(x, out=x)
    return x


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function."""
    return _sigmoid_inplace(np.array(x, dtype=np.float64))


def lstm_cell_step(layer: LstmLayerParams, x: np.ndarray, prev: LstmState) -> LstmState:
    """Advance one layer by one step for a single example.

    "cell" variant: F/I/O = sig(W_g x + U_g c_prev + b_g), G = tanh(W_G x + b_G).
    "standard": all four preactivations gain U_g h_prev instead.
    Both: c = F*c_prev + I*G, h = O*tanh(c).
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(prev.h, dtype=np.float64)
    c_prev = np.asarray(prev.c, dtype=np.float64)
    hd = layer.hidden_dim
    if x.shape != (layer.input_dim,) or h_prev.shape != (hd,) or c_prev.shape != (hd,):
        raise DataError("cell step dimensions do not match the layer")
    pre = layer.W @ x + layer.b
    if layer.variant == "cell":
        pre[: 3 * hd] += layer.U @ c_prev
    else:
        pre += layer.U @ h_prev
    f = sigmoid(pre[:hd])
    i = sigmoid(pre[hd : 2 * hd])
    o = sigmoid(pre[2 * hd : 3 * hd])
    g = np.tanh(pre[3 * hd :])
    c = f * c_prev + i * g
    return LstmState(h=o * np.tanh(c), c=c)


# --------------------------------------------------------------------------
# Batched stack forward (time-major internals)
# --------------------------------------------------------------------------


@dataclass
class LayerCache:
    """Per-step activations of one layer, time-major.

    Gate activations are stored in two contiguous blocks so the backward
    pass never does a strided matmul: gfio is (T, B, 3h) holding the post-
    sigmoid F/I/O gates, gg is (T, B, h) holding the post-tanh candidate.
    c_all and h_all are (T+1, B, h) with the initial states in row 0, so the
    previous-step stacks needed by the parameter gradients are plain views.
    tanhc caches tanh(c_t).
    """

    x: np.ndarray | None  # layer input stack (None when identically zero)
    gfio: np.ndarray
    gg: np.ndarray
    c_all: np.ndarray
    h_all: np.ndarray
    tanhc: np.ndarray


@dataclass
class StackCache:
    layers: list[LayerCache]


def _run_layer(
    layer: LstmLayerParams,
    x_seq: np.ndarray | None,
    n_steps: int,
    batch: int,
    h0: np.ndarray,
    c0: np.ndarray,
    keep: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, LayerCache | None]:
    """Run one layer over a sequence; returns (H stack, h_T, c_T, cache).

    x_seq is (T, B, d_in) or None for all-zero inputs. The input-side affine
    is batched over all steps; only the recurrent product runs stepwise. In
    the "cell" variant the candidate has no recurrent term, so its tanh is
    applied to every step in one call before the loop.
    """
    hd = layer.hidden_dim
    h3 = 3 * hd
    cell_variant = layer.variant == "cell"

    # Preactivations straight into the gate storage, F/I/O and G separately
    # so each stays contiguous.
    if x_seq is None:
        gfio = np.empty((n_steps, batch, h3))
        gfio[:] = layer.b[:h3]
        gg = np.empty((n_steps, batch, hd))
        gg[:] = layer.b[h3:]
    else:
        flat = x_seq.reshape(n_steps * batch, -1)
        gfio = (flat @ layer.W[:h3].T).reshape(n_steps, batch, h3)
        gfio += layer.b[:h3]
        gg = (flat @ layer.W[h3:].T).reshape(n_steps, batch, hd)
        gg += layer.b[h3:]
    if cell_variant:
        np.tanh(gg, out=gg)
        ut_fio = layer.U.T
        ut_g = None
    else:
        ut_fio = layer.U[:h3].T
        ut_g = layer.U[h3:].T

    h_all = np.empty((n_steps + 1, batch, hd))
    c_all = np.empty((n_steps + 1, batch, hd))
    h_all[0] = h0
    c_all[0] = c0
    tanhc = np.empty((n_steps, batch, hd)) if keep else None

    rec = np.empty((batch, h3))
    tmp = np.empty((batch, hd))
    for t in range(n_steps):
        gf = gfio[t]
        g2 = gg[t]
        prev_c = c_all[t]
        if cell_variant:
            np.matmul(prev_c, ut_fio, out=rec)
        else:
            prev_h = h_all[t]
            np.matmul(prev_h, ut_fio, out=rec)
            np.matmul(prev_h, ut_g, out=tmp)
            g2 += tmp
            np.tanh(g2, out=g2)
        gf += rec
        _sigmoid_inplace(gf)
        c_new = c_all[t + 1]
        np.multiply(gf[:, :hd], prev_c, out=c_new)  # F * c_prev
        np.multiply(gf[:, hd : 2 * hd], g2, out=tmp)  # I * G
        c_new += tmp
        tc = tanhc[t] if keep else tmp
        np.tanh(c_new, out=tc)
        np.multiply(gf[:, 2 * hd :], tc, out=h_all[t + 1])  # O * tanh(c)
    cache = None
    if keep:
        cache = LayerCache(x=x_seq, gfio=gfio, gg=gg, c_all=c_all, h_all=h_all, tanhc=tanhc)
    return h_all[1:], h_all[-1], c_all[-1], cache


def run_stack(
    layers: tuple[LstmLayerParams, LstmLayerParams],
    x_seq: np.ndarray | None,
    n_steps: int,
    batch: int,
    init: list[tuple[np.ndarray, np.ndarray]],
    keep: bool = False,
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]], StackCache | None]:
    """Run the 2-layer stack; layer 2 consumes layer 1's hidden outputs.

    Returns (layer-2 H stack, [(h_T, c_T) per layer], cache).
    """
    caches = []
    finals = []
    h_stack = x_seq
    for l, layer in enumerate(layers):
        h0, c0 = init[l]
        h_stack, h_t, c_t, cache = _run_layer(
            layer, h_stack if l else x_seq, n_steps, batch, h0, c0, keep
        )
        finals.append((h_t, c_t))
        caches.append(cache)
    stack_cache = StackCache(layers=caches) if keep else None
    return h_stack, finals, stack_cache


def flatten_states(h1, h2, c1, c2) -> np.ndarray:
    """Concatenate final states as [H1, H2, C1, C2] along the last axis."""
    return np.concatenate([h1, h2, c1, c2], axis=-1)


def apply_proj(proj: OutputProj, h_stack: np.ndarray) -> np.ndarray:
    """Project (T, B, h) layer-2 outputs to (T, B, data_dim)."""
    t, b, hd = h_stack.shape
    return (h_stack.reshape(t * b, hd) @ proj.W.T + proj.b).reshape(t, b, -1)


# --------------------------------------------------------------------------
# Batched model forward
# --------------------------------------------------------------------------


@dataclass
class ForwardCache:
    """Everything the trainer's backward pass needs."""

    inputs_tm: np.ndarray  # (T_in, B, d) time-major inputs
    future_tm: np.ndarray  # (T_out, B, d)
    enc: StackCache
    rec: StackCache
    prd: StackCache | None
    h_flat: np.ndarray  # (B, 4h)
    mu: np.ndarray
    logvar: np.ndarray
    std: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    recon_tm: np.ndarray  # (T_in, B, d) decoder outputs
    pred_tm: np.ndarray | None
    rec_h2: np.ndarray  # (T_in, B, h) recon decoder layer-2 hiddens
    prd_h2: np.ndarray | None


@dataclass
class BatchLoss:
    """Per-example loss parts, each an array of shape (B,)."""

    total: np.ndarray
    recon_l2sq: np.ndarray
    pred_l2sq: np.ndarray
    kl: np.ndarray


def kl_term(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) for one example.

    Equals 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar); nonnegative, zero only
    at mu = 0, logvar = 0.
    """
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar))


def _kl_batch(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=1)


def forward_batch(
    params: SeqVaeParams,
    inputs: np.ndarray,
    future: np.ndarray | None,
    eps: np.ndarray,
    keep: bool = False,
) -> tuple[BatchLoss, ForwardCache | None]:
    """Full model forward over a batch.

    inputs: (B, T_in, d); future: (B, T_out, d) or None when the model has no
    prediction arm; eps: (B, latent). Returns per-example loss parts and,
    when keep is set, the activation caches for backpropagation.
    """
    cfg = params.config
    inputs = np.asarray(inputs, dtype=np.float64)
    b, t_in, d = inputs.shape
    if t_in != cfg.n_input or d != cfg.data_dim:
        raise DataError("input window shape does not match the model config")
    if cfg.n_future > 0:
        if future is None:
            raise DataError("model expects a future window")
        future = np.asarray(future, dtype=np.float64)
        if future.shape != (b, cfg.n_future, d):
            raise DataError("future window shape does not match the model config")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (b, cfg.latent_dim):
        raise DataError("eps must have shape (batch, latent_dim)")

    hd = cfg.hidden_dim
    x_tm = np.ascontiguousarray(inputs.transpose(1, 0, 2))
    zeros = np.zeros((b, hd))
    enc_h2, enc_finals, enc_cache = run_stack(
        params.encoder, x_tm, t_in, b, [(zeros, zeros)] * N_LAYERS, keep
    )
    (h1, c1), (h2, c2) = enc_finals
    h_flat = flatten_states(h1, h2, c1, c2)

    heads = params.heads
    mu = h_flat @ heads.w_mu.T + heads.b_mu
    logvar = h_flat @ heads.w_logvar.T + heads.b_logvar
    std = np.exp(0.5 * logvar)
    z = mu + std * eps

    dec_h0 = z @ heads.w_z.T + heads.b_z
    rec_init = [(dec_h0[:, :hd], c1), (dec_h0[:, hd:], c2)]
    rec_h2, _, rec_cache = run_stack(
        params.decoder_recon, None, t_in, b, rec_init, keep
    )
    recon_tm = apply_proj(params.out_recon, rec_h2)
    rev_tm = x_tm[::-1]
    recon_err = recon_tm - rev_tm
    recon_l2sq = np.sum(recon_err * recon_err, axis=(0, 2))

    pred_tm = None
    prd_cache = None
    prd_h2 = None
    if cfg.n_future > 0:
        fut_tm = np.ascontiguousarray(future.transpose(1, 0, 2))
        prd_init = [(h1, c1), (h2, c2)]
        prd_h2, _, prd_cache = run_stack(
            params.decoder_pred, None, cfg.n_future, b, prd_init, keep
        )
        pred_tm = apply_proj(params.out_pred, prd_h2)
        pred_err = pred_tm - fut_tm
        pred_l2sq = np.sum(pred_err * pred_err, axis=(0, 2))
    else:
        fut_tm = np.zeros((0, b, d))
        pred_l2sq = np.zeros(b)

    kl = _kl_batch(mu, logvar)
    loss = BatchLoss(
        total=recon_l2sq + pred_l2sq + kl,
        recon_l2sq=recon_l2sq,
        pred_l2sq=pred_l2sq,
        kl=kl,
    )
    cache = None
    if keep:
        cache = ForwardCache(
            inputs_tm=x_tm, future_tm=fut_tm,
            enc=enc_cache, rec=rec_cache, prd=prd_cache,
            h_flat=h_flat, mu=mu, logvar=logvar, std=std, eps=eps, z=z,
            recon_tm=recon_tm, pred_tm=pred_tm,
            rec_h2=rec_h2, prd_h2=prd_h2,
        )
    return loss, cache


# --------------------------------------------------------------------------
# Single-window convenience API
# --------------------------------------------------------------------------


def encode(params: SeqVaeParams, window: np.ndarray) -> np.ndarray:
    """Encode one window; returns the state block of shape (hidden, 4).

    Columns are [H1, H2, C1, C2], the final states of both layers.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    if window.shape[0] == 0:
        raise DataError("cannot encode an empty sequence")
    x_tm = window[:, None, :]
    hd = params.config.hidden_dim
    zeros = np.zeros((1, hd))
    _, finals, _ = run_stack(
        params.encoder, x_tm, window.shape[0], 1, [(zeros, zeros)] * N_LAYERS
    )
    (h1, c1), (h2, c2) = finals
    return np.stack([h1[0], h2[0], c1[0], c2[0]], axis=1)


def state_block_flat(block: np.ndarray) -> np.ndarray:
    """Flatten the (hidden, 4) state block to [H1, H2, C1, C2] order."""
    return block.T.ravel()


class LatentSample(NamedTuple):
    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray
    z: np.ndarray


def sample_latent(heads: LatentHeads, block: np.ndarray, eps: np.ndarray) -> LatentSample:
    """mu/logvar from the flattened state block; z = mu + exp(logvar/2)*eps."""
    flat = state_block_flat(np.asarray(block, dtype=np.float64))
    mu = heads.w_mu @ flat + heads.b_mu
    logvar = heads.w_logvar @ flat + heads.b_logvar
    eps = np.asarray(eps, dtype=np.float64)
    z = mu + np.exp(0.5 * logvar) * eps
    return LatentSample(mu=mu, logvar=logvar, eps=eps, z=z)


def decode_recon(params: SeqVaeParams, z: np.ndarray, c_enc: np.ndarray) -> np.ndarray:
    """Reconstruction decoder for one window.

    z: (latent,); c_enc: (2, hidden) encoder cell states [C1, C2]. Returns the
    (n_input, data_dim) estimate of the reversed input window.
    """
    cfg = params.config
    z = np.asarray(z, dtype=np.float64)[None, :]
    c_enc = np.asarray(c_enc, dtype=np.float64)
    hd = cfg.hidden_dim
    dec_h0 = z @ params.heads.w_z.T + params.heads.b_z
    init = [(dec_h0[:, :hd], c_enc[0][None, :]), (dec_h0[:, hd:], c_enc[1][None, :])]
    h2, _, _ = run_stack(params.decoder_recon, None, cfg.n_input, 1, init)
    return apply_proj(params.out_recon, h2)[:, 0, :]


def decode_pred(params: SeqVaeParams, block: np.ndarray) -> np.ndarray:
    """Prediction decoder for one window, seeded from the full state block.

    block: (hidden, 4) from encode(). Returns (n_future, data_dim); empty
    when the model was configured with no prediction arm.
    """
    cfg = params.config
    if cfg.n_future == 0:
        return np.zeros((0, cfg.data_dim))
    block = np.asarray(block, dtype=np.float64)
    h1, h2, c1, c2 = (block[:, k][None, :] for k in range(4))
    init = [(h1, c1), (h2, c2)]
    out_h2, _, _ = run_stack(params.decoder_pred, None, cfg.n_future, 1, init)
    return apply_proj(params.out_pred, out_h2)[:, 0, :]


class LossParts(NamedTuple):
    total: float
    recon_l2sq: float
    pred_l2sq: float
    kl: float


def loss(
    params: SeqVaeParams,
    inputs: np.ndarray,
    future: np.ndarray | None,
    eps: np.ndarray,
) -> LossParts:
    """Training objective for one window: recon + pred + KL, each weight 1.

    The reconstruction term compares against the reversed input; the
    prediction term is absent when the model has no future arm.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    fut = None
    if params.config.n_future > 0:
        fut = np.asarray(future, dtype=np.float64)
        if fut.ndim == 1:
            fut = fut[:, None]
        fut = fut[None, ...]
    parts, _ = forward_batch(params, inputs[None, ...], fut, np.asarray(eps)[None, :])
    return LossParts(
        total=float(parts.total[0]),
        recon_l2sq=float(parts.recon_l2sq[0]),
        pred_l2sq=float(parts.pred_l2sq[0]),
        kl=float(parts.kl[0]),
    )


def reconstruct(params: SeqVaeParams, window: np.ndarray) -> np.ndarray:
    """Deterministic (eps=0) reconstruction of one window, reversed order.

    Convenience path used by the assessor: encode, take z = mu, decode.
    """
    block = encode(params, window)
    lat = sample_latent(params.heads, block, np.zeros(params.config.latent_dim))
    c_enc = np.stack([block[:, 2], block[:, 3]])
    return decode_recon(params, lat.z, c_enc)
