"""Forward passes and hand-derived reverse-mode gradients.

The architecture is fixed: a set-abstraction trunk encodes geometry at
three resolutions, a twin trunk on geometry-plus-contact channels
predicts a Gaussian posterior, and an upconv decoder carries the latent
code plus skip features back to the full cloud. Positions never carry
gradients, so grouping and interpolation are precomputed per cloud in a
Structure and shared across passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..geometry import fps_indices
from ..rng import derive_seed
from .config import CONTACT_CHANNELS, RGB_CHANNELS, NetworkConfig
from .params import ParamStore

LOG_SIGMA_MIN = np.log(1e-4)
LOG_SIGMA_MAX = np.log(1e4)
BCE_EPS = 1e-7
INTERP_EPS = 1e-8


@dataclass(frozen=True)
class GaussianLatent:
    """Diagonal Gaussian over the latent code, parameterized by log-sigma."""

    mu: np.ndarray
    log_sigma: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    recon: float
    latent: float


def reparameterize(latent: GaussianLatent, eps: np.ndarray) -> np.ndarray:
    """z = mu + sigma * eps with externally supplied standard-normal eps."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != latent.mu.shape:
        raise InvalidArgumentError("eps must match the latent dimension")
    return latent.mu + latent.sigma * eps


def kl_divergence(mu: np.ndarray, log_sigma: np.ndarray) -> float:
    """KL(N(mu, sigma) || N(0, 1)) summed over dimensions."""
    sig2 = np.exp(2.0 * log_sigma)
    return float(np.sum(0.5 * (mu * mu + sig2 - 1.0 - 2.0 * log_sigma)))


def elbo_loss(target: np.ndarray, predicted: np.ndarray,
              latent: GaussianLatent) -> LossBreakdown:
    """Mean binary cross-entropy plus latent KL; total is their exact sum."""
    y = np.asarray(target, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if y.shape != p.shape:
        raise InvalidArgumentError("target and prediction shapes differ")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    recon = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)))
    latent_term = kl_divergence(latent.mu, latent.log_sigma)
    return LossBreakdown(recon + latent_term, recon, latent_term)


# ---------------------------------------------------------------------------
# Per-cloud structure: grouping and interpolation indices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelStructure:
    indices: np.ndarray    # (m,) FPS picks into the source set
    positions: np.ndarray  # (m, 3)
    groups: np.ndarray     # (m, K) source indices, padded with the center
    rel: np.ndarray        # (m, K, 3) neighbor minus center


@dataclass(frozen=True)
class UpStructure:
    idx: np.ndarray  # (t, k) source indices
    w: np.ndarray    # (t, k) normalized inverse-distance weights


@dataclass(frozen=True)
class Structure:
    positions: np.ndarray
    levels: tuple[LevelStructure, ...]
    ups: tuple[UpStructure, ...]


def _ranked_neighbors(src: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Source indices ordered by distance to center, ties by position."""
    d = np.linalg.norm(src - center, axis=1)
    return np.lexsort((src[:, 2], src[:, 1], src[:, 0], d)), d


def build_structure(positions: np.ndarray, config: NetworkConfig) -> Structure:
    """Precompute FPS picks, ball groups, and upconv interpolation.

    Everything here depends only on positions, not parameters, and the
    orderings use position-based tie-breaks so the result describes the
    point set, not its storage order.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(pos) < config.levels[0].count:
        raise InvalidArgumentError(
            f"cloud of {len(pos)} points is smaller than the first"
            f" abstraction level ({config.levels[0].count})")
    levels = []
    src = pos
    for lnum, lvl in enumerate(config.levels):
        picks = fps_indices(src, lvl.count, derive_seed(config.fps_seed, "fps", lnum))
        centers = src[picks]
        groups = np.empty((lvl.count, lvl.neighbors), dtype=int)
        for i, center in enumerate(centers):
            order, d = _ranked_neighbors(src, center)
            inside = order[d[order] <= lvl.radius][: lvl.neighbors]
            if inside.size == 0:
                inside = np.array([picks[i]])
            pad = np.full(lvl.neighbors - inside.size, picks[i], dtype=int)
            groups[i] = np.concatenate([inside, pad])
        rel = src[groups] - centers[:, None, :]
        levels.append(LevelStructure(picks, centers, groups, rel))
        src = centers

    ups = []
    n_levels = len(config.levels)
    for stage in range(n_levels):
        coarse = levels[n_levels - 1 - stage].positions
        fine = (levels[n_levels - 2 - stage].positions
                if stage < n_levels - 1 else pos)
        k = min(config.upconv_neighbors, len(coarse))
        idx = np.empty((len(fine), k), dtype=int)
        w = np.empty((len(fine), k))
        for i, target in enumerate(fine):
            order, d = _ranked_neighbors(coarse, target)
            near = order[:k]
            idx[i] = near
            w[i] = 1.0 / (d[near] + INTERP_EPS)
        w /= w.sum(axis=1, keepdims=True)
        ups.append(UpStructure(idx, w))
    return Structure(pos, tuple(levels), tuple(ups))


# ---------------------------------------------------------------------------
# Parameter declaration
# ---------------------------------------------------------------------------


def _declare_mlp(store: ParamStore, prefix: str, in_dim: int,
                 widths: tuple[int, ...]) -> int:
    for i, width in enumerate(widths):
        store.declare(f"{prefix}/fc{i}/W", (in_dim, width))
        store.declare(f"{prefix}/fc{i}/b", (width,))
        in_dim = width
    return in_dim


def _declare_trunk(store: ParamStore, prefix: str, in_channels: int,
                   config: NetworkConfig) -> int:
    channels = in_channels
    for lnum, lvl in enumerate(config.levels):
        channels = _declare_mlp(store, f"{prefix}/sa{lnum}", 3 + channels, lvl.widths)
    return channels


def declare_params(config: NetworkConfig) -> ParamStore:
    """Lay out every layer of the three networks in one flat vector."""
    store = ParamStore()
    rgb_out = _declare_trunk(store, "rgb", RGB_CHANNELS, config)
    post_out = _declare_trunk(store, "c", RGB_CHANNELS + CONTACT_CHANNELS, config)
    d = config.latent_dim
    store.declare("c/head_mu/W", (post_out, d))
    store.declare("c/head_mu/b", (d,))
    store.declare("c/head_logsig/W", (post_out, d))
    store.declare("c/head_logsig/b", (d,))

    level_out = [config.levels[i].widths[-1] for i in range(len(config.levels))]
    channels = level_out[-1] + d
    n_levels = len(config.levels)
    for stage in range(n_levels):
        skip = (level_out[n_levels - 2 - stage]
                if stage < n_levels - 1 else RGB_CHANNELS)
        channels = _declare_mlp(store, f"g/up{stage}",
                                channels + skip, config.decoder_widths[stage])
    store.declare("g/head/W", (channels, CONTACT_CHANNELS))
    store.declare("g/head/b", (CONTACT_CHANNELS,))
    store.allocate()
    return store


# ---------------------------------------------------------------------------
# Shared primitives
# ---------------------------------------------------------------------------


def _mlp_forward(store: ParamStore, prefix: str, x: np.ndarray,
                 n_layers: int) -> tuple[np.ndarray, list]:
    caches = []
    for i in range(n_layers):
        w = store.view(f"{prefix}/fc{i}/W")
        b = store.view(f"{prefix}/fc{i}/b")
        out = np.tanh(x @ w + b)
        caches.append((x, w, out))
        x = out
    return x, caches


def _mlp_backward(store: ParamStore, grad_flat: np.ndarray, prefix: str,
                  grad: np.ndarray, caches: list) -> np.ndarray:
    for i in reversed(range(len(caches))):
        x, w, out = caches[i]
        gy = grad * (1.0 - out * out)
        store.view(f"{prefix}/fc{i}/W", grad_flat)[...] += x.T @ gy
        store.view(f"{prefix}/fc{i}/b", grad_flat)[...] += gy.sum(axis=0)
        grad = gy @ w.T
    return grad


def _trunk_forward(store: ParamStore, config: NetworkConfig,
                   structure: Structure, feats: np.ndarray, prefix: str):
    hs, caches = [], []
    cur = np.asarray(feats, dtype=float)
    for lnum, (lvl, ls) in enumerate(zip(config.levels, structure.levels)):
        gathered = cur[ls.groups]                      # (m, K, C)
        x = np.concatenate([ls.rel, gathered], axis=2)
        m, k, d = x.shape
        out, mlp_caches = _mlp_forward(store, f"{prefix}/sa{lnum}",
                                       x.reshape(m * k, d), len(lvl.widths))
        out3 = out.reshape(m, k, -1)
        arg = out3.argmax(axis=1)
        pooled = np.take_along_axis(out3, arg[:, None, :], axis=1)[:, 0, :]
        caches.append((ls.groups, (m, k, d), mlp_caches, arg, cur.shape))
        hs.append(pooled)
        cur = pooled
    return hs, caches


def _trunk_backward(store: ParamStore, grad_flat: np.ndarray,
                    config: NetworkConfig, prefix: str, caches: list,
                    h_grads: list) -> None:
    g_next = None
    for lnum in reversed(range(len(config.levels))):
        groups, (m, k, d), mlp_caches, arg, cur_shape = caches[lnum]
        g_pooled = h_grads[lnum]
        if g_pooled is None:
            g_pooled = np.zeros((m, arg.shape[1]))
        if g_next is not None:
            g_pooled = g_pooled + g_next
        g_out3 = np.zeros((m, k, arg.shape[1]))
        np.put_along_axis(g_out3, arg[:, None, :], g_pooled[:, None, :], axis=1)
        g_x = _mlp_backward(store, grad_flat, f"{prefix}/sa{lnum}",
                            g_out3.reshape(m * k, -1), mlp_caches).reshape(m, k, d)
        g_cur = np.zeros(cur_shape)
        np.add.at(g_cur, groups, g_x[:, :, 3:])
        g_next = g_cur


def _interp_forward(feats: np.ndarray, up: UpStructure) -> np.ndarray:
    return np.einsum("tk,tkc->tc", up.w, feats[up.idx])


def _interp_backward(grad: np.ndarray, up: UpStructure,
                     src_len: int) -> np.ndarray:
    g_src = np.zeros((src_len, grad.shape[1]))
    np.add.at(g_src, up.idx.reshape(-1),
              (up.w[:, :, None] * grad[:, None, :]).reshape(-1, grad.shape[1]))
    return g_src


# ---------------------------------------------------------------------------
# Model passes
# ---------------------------------------------------------------------------


def encode_geometry(store: ParamStore, config: NetworkConfig,
                    structure: Structure, rgb: np.ndarray):
    """Hierarchical geometry features (one per abstraction level)."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.shape != (len(structure.positions), RGB_CHANNELS):
        raise InvalidArgumentError("rgb features must be (cloud size, 3)")
    return _trunk_forward(store, config, structure, rgb, "rgb")


def encode_posterior(store: ParamStore, config: NetworkConfig,
                     structure: Structure, rgb: np.ndarray,
                     contact: np.ndarray):
    """Gaussian posterior over the latent code given geometry and labels."""
    rgb = np.asarray(rgb, dtype=float)
    contact = np.asarray(contact, dtype=float)
    if contact.shape != (len(structure.positions), CONTACT_CHANNELS):
        raise InvalidArgumentError("contact map must be (cloud size, 2)")
    feats = np.concatenate([rgb, contact], axis=1)
    hs, trunk_caches = _trunk_forward(store, config, structure, feats, "c")
    top = hs[-1]
    arg = top.argmax(axis=0)
    pooled = top[arg, np.arange(top.shape[1])]
    mu = pooled @ store.view("c/head_mu/W") + store.view("c/head_mu/b")
    log_sig_raw = pooled @ store.view("c/head_logsig/W") + store.view("c/head_logsig/b")
    log_sig = np.clip(log_sig_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    cache = (trunk_caches, top.shape, arg, pooled, log_sig_raw)
    return GaussianLatent(mu, log_sig), cache


def _posterior_backward(store: ParamStore, grad_flat: np.ndarray,
                        config: NetworkConfig, cache, g_mu: np.ndarray,
                        g_log_sig: np.ndarray) -> None:
    trunk_caches, top_shape, arg, pooled, log_sig_raw = cache
    mask = (log_sig_raw > LOG_SIGMA_MIN) & (log_sig_raw < LOG_SIGMA_MAX)
    g_raw = g_log_sig * mask
    store.view("c/head_mu/W", grad_flat)[...] += np.outer(pooled, g_mu)
    store.view("c/head_mu/b", grad_flat)[...] += g_mu
    store.view("c/head_logsig/W", grad_flat)[...] += np.outer(pooled, g_raw)
    store.view("c/head_logsig/b", grad_flat)[...] += g_raw
    g_pooled = (g_mu @ store.view("c/head_mu/W").T
                + g_raw @ store.view("c/head_logsig/W").T)
    g_top = np.zeros(top_shape)
    g_top[arg, np.arange(top_shape[1])] = g_pooled
    h_grads = [None] * (len(config.levels) - 1) + [g_top]
    _trunk_backward(store, grad_flat, config, "c", trunk_caches, h_grads)


def decode(store: ParamStore, config: NetworkConfig, structure: Structure,
           z: np.ndarray, hs: list, rgb: np.ndarray):
    """Contact probabilities over the full cloud from latent code and skips."""
    z = np.asarray(z, dtype=float)
    if z.shape != (config.latent_dim,):
        raise InvalidArgumentError("z must be a latent_dim vector")
    n_levels = len(config.levels)
    if len(hs) != n_levels:
        raise InvalidArgumentError("need one skip feature map per level")
    x = np.concatenate([hs[-1], np.tile(z, (hs[-1].shape[0], 1))], axis=1)
    stage_caches = []
    for stage in range(n_levels):
        up = structure.ups[stage]
        skip = (hs[n_levels - 2 - stage] if stage < n_levels - 1
                else np.asarray(rgb, dtype=float))
        interp = _interp_forward(x, up)
        cat = np.concatenate([interp, skip], axis=1)
        out, mlp_caches = _mlp_forward(store, f"g/up{stage}", cat,
                                       len(config.decoder_widths[stage]))
        stage_caches.append((len(x), interp.shape[1], mlp_caches))
        x = out
    logits = x @ store.view("g/head/W") + store.view("g/head/b")
    probs = 1.0 / (1.0 + np.exp(-logits))
    cache = (stage_caches, x, probs)
    return probs, cache


def _decode_backward(store: ParamStore, grad_flat: np.ndarray,
                     config: NetworkConfig, structure: Structure, cache,
                     g_probs: np.ndarray):
    """Returns (gradients for each h level, gradient for z)."""
    stage_caches, last, probs = cache
    g_logits = g_probs * probs * (1.0 - probs)
    store.view("g/head/W", grad_flat)[...] += last.T @ g_logits
    store.view("g/head/b", grad_flat)[...] += g_logits.sum(axis=0)
    grad = g_logits @ store.view("g/head/W").T

    n_levels = len(config.levels)
    h_grads: list = [None] * n_levels
    for stage in reversed(range(n_levels)):
        src_len, interp_dim, mlp_caches = stage_caches[stage]
        g_cat = _mlp_backward(store, grad_flat, f"g/up{stage}", grad, mlp_caches)
        g_interp, g_skip = g_cat[:, :interp_dim], g_cat[:, interp_dim:]
        if stage < n_levels - 1:
            lvl = n_levels - 2 - stage
            h_grads[lvl] = (g_skip if h_grads[lvl] is None
                            else h_grads[lvl] + g_skip)
        grad = _interp_backward(g_interp, structure.ups[stage], src_len)
    d = config.latent_dim
    g_h_top = grad[:, :-d]
    g_z = grad[:, -d:].sum(axis=0)
    top = n_levels - 1
    h_grads[top] = g_h_top if h_grads[top] is None else h_grads[top] + g_h_top
    return h_grads, g_z


def model_forward(store: ParamStore, config: NetworkConfig,
                  structure: Structure, rgb: np.ndarray, target: np.ndarray,
                  eps: np.ndarray):
    """Full pass: encoders, reparameterized latent, decoder, ELBO."""
    hs, rgb_caches = encode_geometry(store, config, structure, rgb)
    latent, post_cache = encode_posterior(store, config, structure, rgb, target)
    z = reparameterize(latent, eps)
    probs, dec_cache = decode(store, config, structure, z, hs, rgb)
    loss = elbo_loss(target, probs, latent)
    caches = (hs, rgb_caches, latent, post_cache, z, dec_cache)
    return loss, probs, caches


def grad(store: ParamStore, config: NetworkConfig, structure: Structure,
         rgb: np.ndarray, target: np.ndarray, eps: np.ndarray,
         kl_weight: float = 1.0):
    """Analytic gradient of recon + kl_weight * latent for one sample.

    Returns (LossBreakdown, flat gradient, predicted map). The reported
    loss is always the unweighted ELBO; the weight only scales the
    gradient contribution of the KL term (used for warmup).
    """
    loss, probs, caches = model_forward(store, config, structure, rgb,
                                        target, eps)
    hs, rgb_caches, latent, post_cache, z, dec_cache = caches
    grad_flat = store.zeros_like()

    y = np.asarray(target, dtype=float)
    pc = np.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    count = y.size
    g_pc = (-y / pc + (1.0 - y) / (1.0 - pc)) / count
    inside = (probs > BCE_EPS) & (probs < 1.0 - BCE_EPS)
    g_probs = g_pc * inside

    h_grads, g_z = _decode_backward(store, grad_flat, config, structure,
                                    dec_cache, g_probs)
    _trunk_backward(store, grad_flat, config, "rgb", rgb_caches, h_grads)

    sigma = latent.sigma
    g_mu = g_z + kl_weight * latent.mu
    g_log_sig = g_z * eps * sigma + kl_weight * (sigma * sigma - 1.0)
    _posterior_backward(store, grad_flat, config, post_cache, g_mu, g_log_sig)

    if not np.all(np.isfinite(grad_flat)):
        raise FloatingPointError("non-finite gradient")
    return loss, grad_flat, probs
