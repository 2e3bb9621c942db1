"""Label-informed adversarial VAE in plain numpy with hand-written backprop.

Architecture (all sizes configurable)::

    pre-encoder    x -> tanh(x W + b)                        (d -> H)
    classifier     pre(x) -> softmax                         q(y|x)
    encoder        [pre(x), onehot y] -> (mu, log_var)        q(z|x,y), k-dim
    decoder        [z, onehot y] -> tanh -> x_hat            p(x|y,z), unit variance
    class head     z -> softmax                              p(y|z)
    domain head    z -> tanh -> sigmoid                      behind gradient reversal

Parameters live in a flat ``dict[str, np.ndarray]``; gradients use the same keys.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import LabeledDomainSample

LOG_VAR_CLAMP = 10.0


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 2
    pre_hidden: int = 32
    latent_dim: int = 4
    dec_hidden: int = 32
    dom_hidden: int = 32


@dataclass
class TrainConfig:
    lambda_elbo: float = 0.05
    eta0: float = 0.01
    alpha_lr: float = 10.0
    beta_lr: float = 0.75
    gamma_grl: float = 10.0
    epochs: int = 2000
    batch_size: int = 128
    target_labeled_batch: int = 64
    source_batch: Optional[int] = 64
    momentum: float = 0.9
    seed: int = 42
    use_domain: bool = True
    use_elbo: bool = True
    pseudo_ce: bool = True

    def __post_init__(self):
        for name in ("eta0", "alpha_lr", "beta_lr", "gamma_grl", "momentum"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_elbo < 0:
            raise ValueError("lambda_elbo must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.target_labeled_batch < 0:
            raise ValueError("epochs and batch sizes must be positive")
        if self.source_batch is not None and self.source_batch < 1:
            raise ValueError("source_batch must be positive")


def learning_rate(p: float, eta0: float = 0.01, alpha: float = 10.0, beta: float = 0.75) -> float:
    return eta0 / (1.0 + alpha * p) ** beta


def grl_weight(p: float, gamma: float = 10.0) -> float:
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


# -- parameters --------------------------------------------------------------

def _xavier(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(seed=0, arch: Architecture = Architecture()) -> dict:
    rng = np.random.default_rng(seed)
    d, H, k, Hd, Hm = arch.input_dim, arch.pre_hidden, arch.latent_dim, arch.dec_hidden, arch.dom_hidden
    shapes = [
        ("pre_W", d, H), ("cls_W", H, 2), ("enc_W", H + 2, 2 * k),
        ("dec_W1", k + 2, Hd), ("dec_W2", Hd, d), ("yhead_W", k, 2),
        ("dom_W1", k, Hm), ("dom_W2", Hm, 1),
    ]
    params = {}
    for name, fi, fo in shapes:
        params[name] = _xavier(rng, fi, fo)
        params[name.replace("_W", "_b")] = np.zeros(fo)
    return params


def latent_dim(params: dict) -> int:
    return params["yhead_W"].shape[0]


def zeros_like(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _onehot(y, n=2):
    out = np.zeros((len(y), n))
    out[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
    return out


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


# -- inference paths ---------------------------------------------------------

def pre_encode(params, x):
    return np.tanh(np.asarray(x, dtype=float) @ params["pre_W"] + params["pre_b"])


def classify(params, x) -> np.ndarray:
    """``q(y|x)`` as an ``n x 2`` probability matrix."""
    return _softmax(pre_encode(params, x) @ params["cls_W"] + params["cls_b"])


def predict(params, x) -> np.ndarray:
    # argmax keeps the first index, so an exact tie maps to class 0
    return np.argmax(classify(params, x), axis=1)


def encode(params, x, y):
    """Posterior mean and clamped log-variance of ``q(z|x,y)``."""
    h = pre_encode(params, x)
    out = np.hstack([h, _onehot(y)]) @ params["enc_W"] + params["enc_b"]
    k = latent_dim(params)
    return out[:, :k], np.clip(out[:, k:], -LOG_VAR_CLAMP, LOG_VAR_CLAMP)


def domain_prob(params, z) -> np.ndarray:
    g = np.tanh(np.asarray(z) @ params["dom_W1"] + params["dom_b1"])
    return _sigmoid(g @ params["dom_W2"] + params["dom_b2"]).ravel()


def kl_to_standard_normal(mu, log_var) -> np.ndarray:
    """Row-wise ``KL(N(mu, exp(log_var)) || N(0, I))``."""
    mu = np.atleast_2d(mu)
    log_var = np.atleast_2d(log_var)
    return 0.5 * np.sum(np.exp(log_var) + mu ** 2 - 1.0 - log_var, axis=1)


def entropy(q) -> np.ndarray:
    q = np.atleast_2d(q)
    return -np.sum(np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0), axis=1)


# -- ELBO block with backward -------------------------------------------------

def _elbo_forward(params, h, x, y, eps):
    k = latent_dim(params)
    yoh = _onehot(y)
    e_in = np.hstack([h, yoh])
    out = e_in @ params["enc_W"] + params["enc_b"]
    mu, lv_raw = out[:, :k], out[:, k:]
    lv = np.clip(lv_raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    d_in = np.hstack([z, yoh])
    a = np.tanh(d_in @ params["dec_W1"] + params["dec_b1"])
    xhat = a @ params["dec_W2"] + params["dec_b2"]
    recon = -0.5 * np.sum((x - xhat) ** 2, axis=1)
    ly = z @ params["yhead_W"] + params["yhead_b"]
    logp_y = _log_softmax(ly)[np.arange(len(y)), y]
    kl = kl_to_standard_normal(mu, lv)
    elbo = recon + logp_y - kl
    cache = dict(e_in=e_in, lv_raw=lv_raw, lv=lv, mu=mu, std=std, eps=eps, z=z, d_in=d_in, a=a,
                 xhat=xhat, x=x, ly=ly, yoh=yoh)
    return elbo, z, cache


def _elbo_backward(params, grads, cache, g_elbo, g_z):
    """Accumulate parameter grads; return gradient wrt the pre-encoder code."""
    k = latent_dim(params)
    ge = g_elbo[:, None]
    dxhat = ge * (cache["x"] - cache["xhat"])
    grads["dec_W2"] += cache["a"].T @ dxhat
    grads["dec_b2"] += dxhat.sum(0)
    da = (dxhat @ params["dec_W2"].T) * (1.0 - cache["a"] ** 2)
    grads["dec_W1"] += cache["d_in"].T @ da
    grads["dec_b1"] += da.sum(0)
    dz = (da @ params["dec_W1"].T)[:, :k]
    dly = ge * (cache["yoh"] - _softmax(cache["ly"]))
    grads["yhead_W"] += cache["z"].T @ dly
    grads["yhead_b"] += dly.sum(0)
    dz = dz + dly @ params["yhead_W"].T + g_z
    dmu = dz - ge * cache["mu"]
    dlv = 0.5 * dz * cache["eps"] * cache["std"] - 0.5 * ge * (np.exp(cache["lv"]) - 1.0)
    dlv = dlv * (np.abs(cache["lv_raw"]) < LOG_VAR_CLAMP)
    dout = np.hstack([dmu, dlv])
    grads["enc_W"] += cache["e_in"].T @ dout
    grads["enc_b"] += dout.sum(0)
    H = params["pre_W"].shape[1]
    return (dout @ params["enc_W"].T)[:, :H]


def labeled_elbo(params, x, y, eps=None, seed=None) -> np.ndarray:
    """One-sample reparameterized ELBO per row (Gaussian constant dropped)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int).ravel()
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal((len(x), latent_dim(params)))
    elbo, _, _ = _elbo_forward(params, pre_encode(params, x), x, y, eps)
    return elbo


def unlabeled_elbo(params, x, eps=None, seed=None) -> np.ndarray:
    """``sum_y q(y|x) ELBO(x, y) + H(q(.|x))`` per row; ``eps`` has shape ``(n, 2, k)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal((len(x), 2, latent_dim(params)))
    h = pre_encode(params, x)
    q = _softmax(h @ params["cls_W"] + params["cls_b"])
    e = np.stack([_elbo_forward(params, h, x, np.full(len(x), c), eps[:, c])[0] for c in (0, 1)], axis=1)
    return np.sum(q * e, axis=1) + entropy(q)


# -- full objective ------------------------------------------------------------

@dataclass
class Batch:
    """Source-role labeled rows, target labeled rows, target unlabeled rows."""

    xs: np.ndarray
    ys: np.ndarray
    xl: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    yl: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    xu: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.xs, self.xl, self.xu = (np.asarray(a, dtype=float).reshape(-1, 2) for a in (self.xs, self.xl, self.xu))
        self.ys = np.asarray(self.ys, dtype=int)
        self.yl = np.asarray(self.yl, dtype=int)

    def noise(self, rng: np.random.Generator, k: int) -> dict:
        return {
            "eps_l": rng.standard_normal((len(self.xs) + len(self.xl), k)),
            "eps_u": rng.standard_normal((len(self.xu), 2, k)),
        }


@dataclass
class ObjectiveResult:
    loss: float
    grads: dict
    parts: dict
    latent_div: float = float("nan")


def objective(params, batch: Batch, lam: float = 0.05, grl: float = 1.0, noise: Optional[dict] = None,
              use_domain: bool = True, use_elbo: bool = True, pseudo_ce: bool = False, rng=None) -> ObjectiveResult:
    """Loss ``CE + D - lam * ELBO`` and its gradient under gradient reversal.

    ``CE`` is the mean cross-entropy of ``q(y|x)`` on all labeled rows and,
    with ``pseudo_ce``, on unlabeled target rows against their argmax labels.
    ``D`` is the class-balanced domain cross-entropy of the domain head on
    latents of source rows (domain 0) and target rows (domain 1); unlabeled
    target rows enter with their argmax pseudo-label.  ``ELBO`` is the mean
    of the labeled and unlabeled bounds over all rows.  The domain head
    receives ``dD``; everything upstream of ``z`` receives ``-grl * dD``.
    """
    ns, nl, nu = len(batch.xs), len(batch.xl), len(batch.xu)
    if ns + nl + nu == 0:
        raise ValueError("empty batch")
    use_domain = use_domain and ns > 0 and nl + nu > 0
    need_latent = use_domain or (use_elbo and lam != 0.0)
    k = latent_dim(params)
    if noise is None and need_latent:
        noise = batch.noise(rng if rng is not None else np.random.default_rng(0), k)
    grads = zeros_like(params)
    parts = {}

    xL = np.vstack([batch.xs, batch.xl])
    yL = np.concatenate([batch.ys, batch.yl]).astype(int)
    nL = len(yL)
    pre_L = np.tanh(xL @ params["pre_W"] + params["pre_b"])
    dh_L = np.zeros_like(pre_L)
    pre_U = np.tanh(batch.xu @ params["pre_W"] + params["pre_b"]) if nu else np.zeros((0, pre_L.shape[1]))
    dh_U = np.zeros_like(pre_U)

    logits_U = pre_U @ params["cls_W"] + params["cls_b"]
    q_U = _softmax(logits_U) if nu else np.zeros((0, 2))
    pseudo = np.argmax(q_U, axis=1) if nu else np.zeros(0, dtype=int)

    # classification; pseudo-labels are treated as fixed targets
    ce = 0.0
    n_ce = nL + (nu if pseudo_ce else 0)
    if n_ce:
        logits = pre_L @ params["cls_W"] + params["cls_b"]
        ce = float(-np.sum(_log_softmax(logits)[np.arange(nL), yL]) / n_ce)
        dlog = (_softmax(logits) - _onehot(yL)) / n_ce
        grads["cls_W"] += pre_L.T @ dlog
        grads["cls_b"] += dlog.sum(0)
        dh_L += dlog @ params["cls_W"].T
        if pseudo_ce and nu:
            ce -= float(np.sum(_log_softmax(logits_U)[np.arange(nu), pseudo]) / n_ce)
            dlog_p = (q_U - _onehot(pseudo)) / n_ce
            grads["cls_W"] += pre_U.T @ dlog_p
            grads["cls_b"] += dlog_p.sum(0)
            dh_U += dlog_p @ params["cls_W"].T
    parts["ce"] = ce

    elbo_term = 0.0
    gz_L = np.zeros((nL, k))
    gz_U = np.zeros((nu, 2, k))
    caches_L = None
    caches_U = []
    if need_latent:
        elbo_L, z_L, caches_L = _elbo_forward(params, pre_L, xL, yL, noise["eps_l"])
        elbo_U = np.zeros((nu, 2))
        z_U = np.zeros((nu, 2, k))
        for c in (0, 1):
            e, z, cache = _elbo_forward(params, pre_U, batch.xu, np.full(nu, c), noise["eps_u"][:, c])
            elbo_U[:, c], z_U[:, c] = e, z
            caches_U.append(cache)
        U = np.sum(q_U * elbo_U, axis=1) + entropy(q_U) if nu else np.zeros(0)
        n_e = nL + nu
        elbo_term = float((elbo_L.sum() + U.sum()) / n_e)

    # domain discrimination through gradient reversal
    dom = 0.0
    latent_div = float("nan")
    if use_domain:
        z_src = z_L[:ns]
        z_tgt = np.vstack([z_L[ns:], z_U[np.arange(nu), pseudo]]) if nu else z_L[ns:]
        zz = np.vstack([z_src, z_tgt])
        t = np.concatenate([np.zeros(ns), np.ones(len(z_tgt))])
        w = np.concatenate([np.full(ns, 0.5 / ns), np.full(len(z_tgt), 0.5 / len(z_tgt))])
        g1 = np.tanh(zz @ params["dom_W1"] + params["dom_b1"])
        logit = (g1 @ params["dom_W2"] + params["dom_b2"]).ravel()
        # BCE with logits: softplus(logit) - t * logit
        dom = float(np.sum(w * (np.logaddexp(0.0, logit) - t * logit)))
        p = _sigmoid(logit)
        dlogit = (w * (p - t))[:, None]
        grads["dom_W2"] += g1.T @ dlogit
        grads["dom_b2"] += dlogit.sum(0)
        dg = (dlogit @ params["dom_W2"].T) * (1.0 - g1 ** 2)
        grads["dom_W1"] += zz.T @ dg
        grads["dom_b1"] += dg.sum(0)
        dzz = -grl * (dg @ params["dom_W1"].T)
        gz_L[:ns] += dzz[:ns]
        gz_L[ns:] += dzz[ns:ns + nl]
        if nu:
            gz_U[np.arange(nu), pseudo] += dzz[ns + nl:]
        pred = p > 0.5
        acc = 0.5 * (np.mean(~pred[:ns]) + np.mean(pred[ns:]))
        latent_div = float(2.0 * max(acc, 1.0 - acc) - 1.0)
    parts["domain"] = dom
    parts["elbo"] = elbo_term

    if need_latent:
        scale = (-lam / (nL + nu)) if use_elbo else 0.0
        dh_L += _elbo_backward(params, grads, caches_L, np.full(nL, scale), gz_L)
        if nu:
            g_q = np.zeros((nu, 2))
            for c in (0, 1):
                dh_U += _elbo_backward(params, grads, caches_U[c], scale * q_U[:, c], gz_U[:, c])
                # dU/dq_c = ELBO_c - log q_c - 1
                g_q[:, c] = scale * (elbo_U[:, c] - np.log(np.maximum(q_U[:, c], 1e-300)) - 1.0)
            dlog_u = q_U * (g_q - np.sum(q_U * g_q, axis=1, keepdims=True))
            grads["cls_W"] += pre_U.T @ dlog_u
            grads["cls_b"] += dlog_u.sum(0)
            dh_U += dlog_u @ params["cls_W"].T

    for pre, dh, xx in ((pre_L, dh_L, xL), (pre_U, dh_U, batch.xu)):
        if len(xx):
            da = dh * (1.0 - pre ** 2)
            grads["pre_W"] += xx.T @ da
            grads["pre_b"] += da.sum(0)

    lam_eff = lam if use_elbo else 0.0
    loss = ce + dom - lam_eff * elbo_term
    return ObjectiveResult(loss, grads, parts, latent_div)


# -- training ------------------------------------------------------------------

class NumericAbort(RuntimeError):
    """Training produced a non-finite loss or parameter."""


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "loss", "cls_acc_src", "cls_acc_tgt", "latent_div", "eta_p", "lambda_p")

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)


def _pool(sample: Optional[LabeledDomainSample]):
    if sample is None:
        return np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros(0, dtype=int)
    y = sample.training_labels()
    lab = y >= 0
    return sample.x[lab], y[lab], sample.x[~lab], sample.y[~lab]


def train(params: dict, config: TrainConfig, src: Optional[LabeledDomainSample],
          tgt: Optional[LabeledDomainSample] = None) -> tuple[dict, TrainHistory]:
    """Minimize the objective with momentum SGD on balanced mini-batches.

    Each epoch is one step: ``source_batch`` source-role rows (true or pseudo
    labels; ``batch_size`` when None) and ``batch_size`` target rows, of which
    up to ``target_labeled_batch`` come from the labeled pool and the rest
    from the unlabeled pool.  The domain loss weighs the two roles equally.
    Without a source, ``batch_size`` rows of the labeled target pool are used.
    """
    params = {k: v.copy() for k, v in params.items()}
    velocity = zeros_like(params)
    rng = np.random.default_rng(config.seed)
    xs, ys, _, _ = _pool(src)
    xl, yl, xu, yu_true = _pool(tgt)
    if len(xs) == 0 and len(xl) == 0:
        raise ValueError("no labeled data to train on")
    k = latent_dim(params)
    B = config.batch_size
    hist = TrainHistory()
    for epoch in range(config.epochs):
        p = epoch / max(config.epochs - 1, 1)
        eta = learning_rate(p, config.eta0, config.alpha_lr, config.beta_lr)
        lam_p = grl_weight(p, config.gamma_grl)
        if len(xs):
            i_s = rng.integers(0, len(xs), B if config.source_batch is None else config.source_batch)
            if len(xu):
                n_l = min(config.target_labeled_batch, B) if len(xl) else 0
            else:
                n_l = B if len(xl) else 0
            i_l = rng.integers(0, len(xl), n_l) if len(xl) else np.zeros(0, dtype=int)
            i_u = rng.integers(0, len(xu), B - n_l) if len(xu) else np.zeros(0, dtype=int)
            batch = Batch(xs[i_s], ys[i_s], xl[i_l], yl[i_l], xu[i_u])
        else:
            i_l = rng.integers(0, len(xl), B)
            batch = Batch(xl[i_l], yl[i_l])
        noise = batch.noise(rng, k)
        res = objective(params, batch, config.lambda_elbo, lam_p, noise,
                        use_domain=config.use_domain, use_elbo=config.use_elbo, pseudo_ce=config.pseudo_ce)
        if not math.isfinite(res.loss):
            raise NumericAbort(f"non-finite loss at epoch {epoch}")
        for name, g in res.grads.items():
            v = velocity[name]
            v *= config.momentum
            v -= eta * g
            params[name] += v
        ns = len(batch.xs)
        pred_s = predict(params, batch.xs) if ns else np.zeros(0)
        acc_s = float(np.mean(pred_s == batch.ys)) if ns else float("nan")
        acc_t = float(np.mean(predict(params, batch.xl) == batch.yl)) if len(batch.xl) else float("nan")
        hist.append(epoch=epoch, loss=res.loss, cls_acc_src=acc_s, cls_acc_tgt=acc_t,
                    latent_div=res.latent_div, eta_p=eta, lambda_p=lam_p, elbo=res.parts["elbo"])
    for name, v in params.items():
        if not np.all(np.isfinite(v)):
            raise NumericAbort(f"non-finite parameter {name}")
    return params, hist


def pseudo_label(params: dict, sample: LabeledDomainSample) -> LabeledDomainSample:
    """Attach argmax ``q(y|x)`` labels to every unlabeled point; true labels untouched."""
    from dataclasses import replace
    pseudo = np.where(sample.labeled, sample.y, -1)
    unl = ~sample.labeled
    if unl.any():
        pseudo[unl] = predict(params, sample.x[unl])
    return replace(sample, pseudo_y=pseudo)


def accuracy(params: dict, sample: LabeledDomainSample) -> float:
    return float(np.mean(predict(params, sample.x) == sample.y))


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, params: dict) -> None:
    """``.npz`` dump; every array keeps its shape, plus a format version."""
    np.savez(path, __version__=np.array(CHECKPOINT_VERSION), **params)


def load_checkpoint(path: str) -> dict:
    with np.load(path) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return {k: data[k].copy() for k in data.files if k != "__version__"}
