"""Desk-scale training: reverse-mode gradients, truncated BPTT, Adam.

Gradients are derived by hand and checked against central finite
differences (grad_check).  A training step covers a window of up to
``updated_stride`` consecutive slices: the forward pass stores every
intermediate, the backward pass walks the slices in reverse carrying
d(loss)/d(hidden) across the in-window recurrence, and the hidden state
leaving the window is detached.  One window = one Adam step.

All math is float64 numpy.  The only reductions are einsums with fixed
loop order, so a fixed seed reproduces training bitwise on one platform.

Hard activations use the derivative of the saturated side at their
kinks (exactly 0); the finite-difference checker excludes coordinates
whose +/-epsilon forward passes land in different activation regions,
since a two-sided difference straddling a kink measures nothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import compress_volume
from .errors import ConfigError, DepthMismatch, NonFiniteLoss
from .logistic import nll_bits, nll_grad
from .model import (
    _causal_offsets,
    _dsc,
    _estimate,
    _full_offsets,
    _gate,
    _masked_conv,
    _std_conv,
    hidden_zeros,
    normalize_slice,
    pad_plane,
)
from .params import (
    ModelParams,
    TENSOR_ORDER,
    default_scale_l,
    init_params,
    save_weights,
)
from .volume import Volume, bpp

__all__ = [
    "AdamState",
    "GradCheckReport",
    "TrainConfig",
    "adam_init",
    "adam_step",
    "evaluate",
    "forward_backward_window",
    "grad_check",
    "train",
    "write_loss_curve",
]


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the reference recipe."""

    learning_rate: float = 5e-4
    epochs: int = 50
    updated_stride: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    m: int = 16
    scale_l: "float | None" = None  # None: 1 for 8-bit data, 8 for deeper
    shuffle: bool = False
    clip_norm: "float | None" = None
    zero_hidden: bool = False
    checkpoint_every: int = 0

    def validate(self) -> None:
        if self.updated_stride < 1:
            raise ConfigError("updated_stride must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0 when set")


def _zero_grads(p: ModelParams) -> dict:
    return {name: np.zeros_like(getattr(p, name)) for name, _ in TENSOR_ORDER}


@dataclass
class _SliceRecord:
    """Every intermediate of one slice's forward pass."""

    s: np.ndarray
    xpad: np.ndarray
    fx: np.ndarray
    gx: "np.ndarray | None"
    fh: np.ndarray
    mid: np.ndarray
    relu: np.ndarray
    fused: np.ndarray
    mu: np.ndarray
    logs: np.ndarray
    logs_raw: np.ndarray
    h_prev: np.ndarray


def _forward(slices, h_in, p: ModelParams, zero_hidden: bool):
    """Forward over a window.  Returns (loss_bits, h_out, records)."""
    recs = []
    total = 0.0
    h = h_in
    n = len(slices)
    for t in range(n):
        s = slices[t]
        x = normalize_slice(s, p.depth_bits)
        hh, ww = x.shape
        xpad = pad_plane(x, p.kernel // 2)
        fx = _masked_conv(xpad, p, hh, ww)
        fh, mid, relu = _dsc(h, p)
        fused = _gate(fx, fh, h)
        mu, logs, logs_raw = _estimate(fused, p)
        total += nll_bits(s, mu, logs, p.depth_bits, p.scale_l)
        if zero_hidden:
            gx = None
            h_next = h  # stays all-zero
        else:
            gx = _std_conv(xpad, p, hh, ww)
            h_next = _gate(gx, fh, h)
        recs.append(_SliceRecord(s=s, xpad=xpad, fx=fx, gx=gx, fh=fh,
                                 mid=mid, relu=relu, fused=fused, mu=mu,
                                 logs=logs, logs_raw=logs_raw, h_prev=h))
        h = h_next
    return float(total), h, recs


def _gate_backward(dout, fx, fh, h_prev, m):
    """Backward through the fusion gate; returns (dfx, dfh, dh_prev)."""
    a = fx[..., :m] + fh[..., :m]
    b = fx[..., m:2 * m] + fh[..., m:2 * m]
    r = np.clip(a / 6.0 + 0.5, 0.0, 1.0)
    u = np.clip(b / 6.0 + 0.5, 0.0, 1.0)
    cpre = fx[..., 2 * m:] + r * fh[..., 2 * m:]
    c = np.clip(cpre, -1.0, 1.0)
    du = dout * (h_prev - c)
    dc = dout * (1.0 - u)
    dcpre = np.where(np.abs(cpre) < 1.0, dc, 0.0)
    dr = dcpre * fh[..., 2 * m:]
    da = np.where((a > -3.0) & (a < 3.0), dr / 6.0, 0.0)
    db = np.where((b > -3.0) & (b < 3.0), du / 6.0, 0.0)
    dfx = np.concatenate([da, db, dcpre], axis=-1)
    dfh = np.concatenate([da, db, dcpre * r], axis=-1)
    return dfx, dfh, dout * u


def _conv_backward(dout, xpad, offs, pad):
    """Weight/bias gradients of a tap-list conv (input is data, no dx)."""
    hh, ww, c = dout.shape
    dw = np.empty((c, len(offs)), dtype=np.float64)
    for t in range(len(offs)):
        di, dj = int(offs[t, 0]), int(offs[t, 1])
        win = xpad[pad + di:pad + di + hh, pad + dj:pad + dj + ww]
        dw[:, t] = np.einsum("ij,ijc->c", win, dout)
    return dw, dout.sum(axis=(0, 1))


def _dsc_backward(dfh, rec: _SliceRecord, p: ModelParams, g: dict):
    """Backward through pointwise <- ReLU <- depthwise; returns dh_prev."""
    drelu = np.einsum("ijc,cm->ijm", dfh, p.pw_w)
    g["pw_w"] += np.einsum("ijc,ijm->cm", dfh, rec.relu)
    g["pw_b"] += dfh.sum(axis=(0, 1))
    dmid = np.where(rec.mid > 0.0, drelu, 0.0)
    q = p.k_dsc // 2
    hh, ww, m = dmid.shape
    hpad = np.zeros((hh + 2 * q, ww + 2 * q, m), dtype=np.float64)
    hpad[q:q + hh, q:q + ww, :] = rec.h_prev
    dhpad = np.zeros_like(hpad)
    offs = _full_offsets(p.k_dsc)
    for t in range(len(offs)):
        di, dj = int(offs[t, 0]), int(offs[t, 1])
        win = hpad[q + di:q + di + hh, q + dj:q + dj + ww, :]
        g["dw_w"][:, t] += np.einsum("ijm,ijm->m", dmid, win)
        dhpad[q + di:q + di + hh, q + dj:q + dj + ww, :] += dmid * p.dw_w[:, t]
    g["dw_b"] += dmid.sum(axis=(0, 1))
    return dhpad[q:q + hh, q:q + ww, :]


def forward_backward_window(slices, h_in, p: ModelParams,
                            zero_hidden: bool = False):
    """Loss, gradients, and detached outgoing hidden state for one window.

    slices: (n, H, W) uint16 with n <= updated_stride (not enforced here);
    h_in: (H, W, M) float64, treated as a constant.  Returns
    (loss_bits, grads dict, h_out).
    """
    loss, h_out, recs = _forward(slices, h_in, p, zero_hidden)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"window loss is {loss!r}")
    g = _zero_grads(p)
    m = p.m
    pad = p.kernel // 2
    offs_c = _causal_offsets(p.kernel)
    offs_f = _full_offsets(p.kernel)
    dh = None  # d loss / d h_t flowing from later slices
    for rec in reversed(recs):
        dmu, dlogs = nll_grad(rec.s, rec.mu, rec.logs, p.depth_bits, p.scale_l)
        dlraw = np.where(np.abs(rec.logs_raw) < 7.0, dlogs, 0.0)
        g["est_w"][0] += np.einsum("ij,ijm->m", dmu, rec.fused)
        g["est_w"][1] += np.einsum("ij,ijm->m", dlraw, rec.fused)
        g["est_b"][0] += dmu.sum()
        g["est_b"][1] += dlraw.sum()
        dfused = dmu[..., None] * p.est_w[0] + dlraw[..., None] * p.est_w[1]
        dfx, dfh, dh_prev = _gate_backward(dfused, rec.fx, rec.fh, rec.h_prev, m)
        if dh is not None and rec.gx is not None:
            dgx, dfh_u, dh_prev_u = _gate_backward(dh, rec.gx, rec.fh,
                                                   rec.h_prev, m)
            dw, db = _conv_backward(dgx, rec.xpad, offs_f, pad)
            g["std_w"] += dw
            g["std_b"] += db
            dfh = dfh + dfh_u
            dh_prev = dh_prev + dh_prev_u
        dw, db = _conv_backward(dfx, rec.xpad, offs_c, pad)
        g["masked_w"] += dw
        g["masked_b"] += db
        dh_prev = dh_prev + _dsc_backward(dfh, rec, p, g)
        dh = None if zero_hidden else dh_prev
    for name, arr in g.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteLoss(f"non-finite gradient in {name}")
    return loss, g, h_out


# --- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(p: ModelParams) -> AdamState:
    return AdamState(m=_zero_grads(p), v=_zero_grads(p), step=0)


def adam_step(p: ModelParams, g: dict, st: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns (new params, new state)."""
    step = st.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_m, new_v, fields = {}, {}, {}
    for name, _ in TENSOR_ORDER:
        gr = g[name]
        mt = b1 * st.m[name] + (1.0 - b1) * gr
        vt = b2 * st.v[name] + (1.0 - b2) * gr * gr
        new_m[name] = mt
        new_v[name] = vt
        fields[name] = getattr(p, name) - cfg.learning_rate * (mt / c1) / (
            np.sqrt(vt / c2) + cfg.epsilon)
    return replace(p, **fields), AdamState(m=new_m, v=new_v, step=step)


def _clip(g: dict, limit: float) -> dict:
    total = 0.0
    for arr in g.values():
        total += float(np.sum(arr * arr))
    norm = np.sqrt(total)
    if norm <= limit:
        return g
    scale = limit / norm
    return {name: arr * scale for name, arr in g.items()}


# --- training loop ------------------------------------------------------------


def train(dataset, cfg: TrainConfig, init: "ModelParams | None" = None,
          checkpoint_dir=None, log=None):
    """Train on a list of Volumes; returns (params, loss curve).

    The curve has one (epoch, mean_loss_bits, mean_bpp) row per epoch:
    mean_loss_bits is the summed window loss divided by the number of
    volumes, mean_bpp the same total divided by the number of samples
    (a model estimate; evaluate() measures the real codec).

    Visit order is dataset order, or a seeded permutation per epoch when
    cfg.shuffle is set.  The hidden state carries (detached) across the
    windows of one volume and resets to zero between volumes.
    """
    cfg.validate()
    if not dataset:
        raise ConfigError("training needs at least one volume")
    depth = dataset[0].depth_bits
    for v in dataset:
        if v.depth_bits != depth:
            raise DepthMismatch("training volumes must share one bit depth")
    scale_l = cfg.scale_l if cfg.scale_l is not None else default_scale_l(depth)
    p = init if init is not None else init_params(
        m=cfg.m, depth_bits=depth, scale_l=scale_l, seed=cfg.seed)
    if init is not None and init.depth_bits != depth:
        raise DepthMismatch("initial weights were built for another depth")
    st = adam_init(p)
    order_rng = np.random.default_rng(cfg.seed)
    total_px = sum(v.num_samples for v in dataset)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        order = (order_rng.permutation(len(dataset)) if cfg.shuffle
                 else range(len(dataset)))
        epoch_bits = 0.0
        for vi in order:
            vol = dataset[vi]
            h = hidden_zeros(vol.h, vol.w, p.m)
            for start in range(0, vol.t, cfg.updated_stride):
                window = vol.samples[start:start + cfg.updated_stride]
                try:
                    loss, g, h = forward_backward_window(
                        window, h, p, zero_hidden=cfg.zero_hidden)
                except NonFiniteLoss as exc:
                    raise NonFiniteLoss(
                        f"epoch {epoch}, volume {vi}, slice {start}: {exc}"
                    ) from exc
                if cfg.clip_norm is not None:
                    g = _clip(g, cfg.clip_norm)
                p, st = adam_step(p, g, st, cfg)
                epoch_bits += loss
        row = (epoch, epoch_bits / len(dataset), epoch_bits / total_px)
        curve.append(row)
        if log is not None:
            log(row)
        if checkpoint_dir is not None and cfg.checkpoint_every > 0 \
                and epoch % cfg.checkpoint_every == 0:
            save_weights(p, f"{checkpoint_dir}/weights_epoch{epoch:04d}.srlw")
    return p, curve


def write_loss_curve(path, curve) -> None:
    """CSV with columns epoch, mean_loss_bits, mean_bpp."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss_bits", "mean_bpp"])
        for epoch, bits, mean_bpp in curve:
            w.writerow([epoch, repr(float(bits)), repr(float(mean_bpp))])


# --- evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    per_volume: list
    mean: "float | None"


def _eval_one(args):
    vol, p, zero_hidden = args
    blob = compress_volume(vol, p, zero_hidden=zero_hidden)
    return bpp(len(blob), vol)


def evaluate(dataset, p: ModelParams, zero_hidden: bool = False,
             jobs: int = 1) -> EvalReport:
    """Measured BPP through the real codec (container bytes, not nll).

    jobs > 1 compresses volumes in parallel processes; the report order
    always matches the dataset order.
    """
    items = [(vol, p, zero_hidden) for vol in dataset]
    if not items:
        return EvalReport(per_volume=[], mean=None)
    if jobs > 1 and len(items) > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=jobs) as ex:
            per = list(ex.map(_eval_one, items))
    else:
        per = [_eval_one(it) for it in items]
    return EvalReport(per_volume=per, mean=float(np.mean(per)))


# --- gradient checking --------------------------------------------------------


def _tri(x, lo, hi):
    """Three-way region id per element: below lo / inside / at-or-above hi."""
    return (x > lo).astype(np.int8) + (x >= hi).astype(np.int8)


def _patterns(recs, p: ModelParams):
    """Activation-region ids of a forward pass, for kink detection."""
    m = p.m
    pats = []
    for rec in recs:
        a = rec.fx[..., :m] + rec.fh[..., :m]
        b = rec.fx[..., m:2 * m] + rec.fh[..., m:2 * m]
        r = np.clip(a / 6.0 + 0.5, 0.0, 1.0)
        cpre = rec.fx[..., 2 * m:] + r * rec.fh[..., 2 * m:]
        pats.extend([_tri(a, -3.0, 3.0), _tri(b, -3.0, 3.0),
                     _tri(cpre, -1.0, 1.0), rec.mid > 0.0,
                     _tri(rec.logs_raw, -7.0, 7.0)])
        if rec.gx is not None:
            a2 = rec.gx[..., :m] + rec.fh[..., :m]
            b2 = rec.gx[..., m:2 * m] + rec.fh[..., m:2 * m]
            r2 = np.clip(a2 / 6.0 + 0.5, 0.0, 1.0)
            cpre2 = rec.gx[..., 2 * m:] + r2 * rec.fh[..., 2 * m:]
            pats.extend([_tri(a2, -3.0, 3.0), _tri(b2, -3.0, 3.0),
                         _tri(cpre2, -1.0, 1.0)])
    return pats


def _same_patterns(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class TensorCheck:
    worst: float
    checked: int
    excluded: int


@dataclass
class GradCheckReport:
    per_tensor: dict
    worst: float = field(init=False)
    checked: int = field(init=False)
    excluded: int = field(init=False)

    def __post_init__(self):
        self.worst = max((t.worst for t in self.per_tensor.values()),
                         default=0.0)
        self.checked = sum(t.checked for t in self.per_tensor.values())
        self.excluded = sum(t.excluded for t in self.per_tensor.values())


def gradcheck_params(m: int = 16, depth_bits: int = 8,
                     seed: int = 0) -> ModelParams:
    """Fresh params with biases jittered away from activation kinks.

    With zero biases and a zero initial hidden state the depthwise
    output of the first slice is exactly 0, the ReLU kink, so every
    dw_b coordinate gets excluded from finite differencing.  Uniform
    bias noise moves the pre-activations off the kinks without changing
    what is being verified.
    """
    p = init_params(m=m, depth_bits=depth_bits, seed=seed)
    rng = np.random.default_rng(seed + 1)
    jitter = {
        name: getattr(p, name) + rng.uniform(-0.2, 0.2,
                                             size=getattr(p, name).shape)
        for name, is_bias in TENSOR_ORDER if is_bias
    }
    return replace(p, **jitter)


def grad_check(p: ModelParams, slices, h_in=None, epsilon: float = 1e-4,
               n_coords: int = 220, seed: int = 0,
               zero_hidden: bool = False) -> GradCheckReport:
    """Central-difference check of forward_backward_window's gradients.

    Samples coordinates from every tensor (a per-tensor quota plus a
    random top-up).  A coordinate whose +epsilon/-epsilon passes fall in
    different hard-activation regions is excluded rather than checked:
    the analytic subgradient at a kink is one-sided and a straddling
    difference quotient is meaningless.  Relative error uses a 1e-3
    denominator floor so near-zero gradient pairs compare absolutely.
    """
    slices = np.ascontiguousarray(slices)
    if h_in is None:
        h_in = hidden_zeros(slices.shape[1], slices.shape[2], p.m)
    _, g, _ = forward_backward_window(slices, h_in, p, zero_hidden=zero_hidden)
    rng = np.random.default_rng(seed)

    names = [name for name, _ in TENSOR_ORDER]
    quota = max(1, n_coords // len(names))
    coords = []
    leftover = []
    for name in names:
        size = getattr(p, name).size
        take = min(quota, size)
        chosen = rng.choice(size, size=take, replace=False)
        coords.extend((name, int(i)) for i in chosen)
        rest = np.setdiff1d(np.arange(size), chosen)
        leftover.extend((name, int(i)) for i in rest)
    if len(coords) < n_coords and leftover:
        extra = rng.choice(len(leftover),
                           size=min(n_coords - len(coords), len(leftover)),
                           replace=False)
        coords.extend(leftover[i] for i in extra)

    report = {name: TensorCheck(worst=0.0, checked=0, excluded=0)
              for name in names}
    for name, idx in coords:
        tc = report[name]
        base = getattr(p, name)
        bumped = base.copy()
        bumped.flat[idx] = base.flat[idx] + epsilon
        lp, _, recs_p = _forward(slices, h_in, replace(p, **{name: bumped}),
                                 zero_hidden)
        bumped = base.copy()
        bumped.flat[idx] = base.flat[idx] - epsilon
        lm, _, recs_m = _forward(slices, h_in, replace(p, **{name: bumped}),
                                 zero_hidden)
        if not _same_patterns(_patterns(recs_p, p), _patterns(recs_m, p)):
            tc.excluded += 1
            continue
        fd = (lp - lm) / (2.0 * epsilon)
        an = float(g[name].flat[idx])
        rel = abs(an - fd) / max(1e-3, abs(an), abs(fd))
        tc.checked += 1
        if rel > tc.worst:
            tc.worst = rel
    return GradCheckReport(per_tensor=report)
