"""Proximal fill-in minimization: ADMM over (L, theta, Gamma).

For one matrix ``A`` with soft permutation ``P = P(theta)`` and
``A_theta = P A P^T`` the augmented Lagrangian is::

    ||L||_1 + <Gamma, A_theta - L L^T> + rho/2 ||A_theta - L L^T||_F^2

Each inner iteration takes a gradient step on the smooth part in ``L``,
soft-thresholds and masks to the lower triangle, takes one Adam step on
``theta``, resamples ``P`` and does dual ascent on ``Gamma``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape
from .diffperm import (DENSE_MAX_N, GumbelSinkhornConfig, gumbel_noise, hard_permutation,
                       soft_permutation, soft_reorder)
from .encoder import Encoder, EncoderConfig
from .orderings import fiedler_vector
from .sparse import GraphView, Permutation, SparseSymMatrix, to_graph


class TrainingDivergence(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class PfmConfig:
    lr: float = 0.01
    sigma: float = 0.001
    rho: float = 1.0
    eta: float | None = None          # soft-threshold; defaults to lr
    l_step: float | None = None       # L gradient step; defaults to eta
    backtrack: bool = True
    n_admm: int = 50
    epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    tau: float = 0.1
    sinkhorn_iters: int = 20
    eps: float = 1e-6
    noise_scale: float = 1.0
    gamma_init: str = "randn"         # "randn" or "zeros"
    l_init: str = "diag"              # "diag" or "randn" (tril of normal)
    l_init_scale: float = 1.0
    warm_start: bool = False
    direct_init: str = "fiedler"      # "fiedler" or "random"
    max_n: int = DENSE_MAX_N

    def __post_init__(self):
        for name in ("lr", "sigma", "rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.l_step is not None and not self.l_step > 0:
            raise ValueError("l_step must be positive")
        if self.n_admm < 1 or self.epochs < 1:
            raise ValueError("n_admm and epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.gamma_init not in ("randn", "zeros"):
            raise ValueError("gamma_init must be 'randn' or 'zeros'")
        if self.l_init not in ("randn", "diag"):
            raise ValueError("l_init must be 'randn' or 'diag'")
        if self.direct_init not in ("fiedler", "random"):
            raise ValueError("direct_init must be 'fiedler' or 'random'")
        self.gumbel  # validates the Sinkhorn settings

    @property
    def threshold(self) -> float:
        return self.lr if self.eta is None else self.eta

    @property
    def step(self) -> float:
        if self.l_step is not None:
            return self.l_step
        return self.threshold if self.threshold > 0 else self.lr

    @property
    def gumbel(self) -> GumbelSinkhornConfig:
        return GumbelSinkhornConfig(tau=self.tau, n_iters=self.sinkhorn_iters, eps=self.eps,
                                    sigma=self.sigma, noise_scale=self.noise_scale, seed=self.seed)

    @classmethod
    def from_text(cls, text: str) -> "PfmConfig":
        """Parse ``key=value`` lines; ``#`` starts a comment, unknown keys are errors."""
        known = {f.name: f for f in fields(cls)}
        aliases = {"eta_threshold": "eta", "n_ADMM": "n_admm", "M": "epochs"}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = aliases.get(key, key)
            if key not in known:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _coerce(value, known[key].type, key)
        return cls(**kwargs)


def _coerce(value: str, type_name, key: str):
    t = str(type_name)
    try:
        if value.lower() in ("none", "null") and "None" in t:
            return None
        if t.startswith("bool"):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if t.startswith("int"):
            return int(value)
        if t.startswith("float"):
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"invalid value {value!r} for {key}") from None


@dataclass
class PfmState:
    L: np.ndarray
    Gamma: np.ndarray
    encoder: Encoder
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_t: int = 0


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    dual: float
    quad: float

    @property
    def total(self) -> float:
        return self.l1 + self.dual + self.quad


# ---------------------------------------------------------------- loss pieces

def l1_norm(L: np.ndarray) -> float:
    return float(np.abs(L).sum())


def _dense(A) -> np.ndarray:
    return A.to_dense() if isinstance(A, SparseSymMatrix) else np.asarray(A, dtype=np.float64)


def augmented_lagrangian(L: np.ndarray, P: np.ndarray, Gamma: np.ndarray, A, rho: float
                         ) -> LossBreakdown:
    A = _dense(A)
    if not (L.shape == P.shape == Gamma.shape == A.shape):
        raise ValueError("augmented_lagrangian: all matrices must share one square shape")
    R = P @ A @ P.T - L @ L.T
    return LossBreakdown(l1=l1_norm(L), dual=float(np.sum(Gamma * R)),
                         quad=0.5 * rho * float(np.sum(R * R)))


def smooth_loss(L: np.ndarray, A_theta: np.ndarray, Gamma: np.ndarray, rho: float) -> float:
    R = A_theta - L @ L.T
    return float(np.sum(Gamma * R) + 0.5 * rho * np.sum(R * R))


def grad_L_dual_quad(L: np.ndarray, A_theta: np.ndarray, Gamma: np.ndarray, rho: float
                     ) -> np.ndarray:
    """Gradient in ``L`` of the dual and quadratic terms."""
    R = A_theta - L @ L.T
    return -(Gamma + Gamma.T) @ L - rho * (R + R.T) @ L


def prox_soft_threshold(L: np.ndarray, eta: float) -> np.ndarray:
    """Elementwise ``sign(x) max(|x| - eta, 0)`` then keep the lower triangle."""
    if eta < 0:
        raise ValueError("threshold must be >= 0")
    return np.tril(np.sign(L) * np.maximum(np.abs(L) - eta, 0.0))


def dual_update(Gamma: np.ndarray, P: np.ndarray, A, L: np.ndarray, rho: float) -> np.ndarray:
    A = _dense(A)
    return Gamma + rho * (P @ A @ P.T - L @ L.T)


def l_update(L: np.ndarray, A_theta: np.ndarray, Gamma: np.ndarray, cfg: PfmConfig
             ) -> tuple[np.ndarray, float]:
    """Gradient step plus proximal step; returns the new L and the step used.

    With ``cfg.backtrack`` the step is halved until the smooth part does not
    increase (at most 40 halvings).
    """
    g = grad_L_dual_quad(L, A_theta, Gamma, cfg.rho)
    t = cfg.step
    if cfg.backtrack:
        f0 = smooth_loss(L, A_theta, Gamma, cfg.rho)
        gg = float(np.sum(g * g))
        for _ in range(40):
            trial = L - t * g
            f1 = smooth_loss(trial, A_theta, Gamma, cfg.rho)
            if np.isfinite(f1) and f1 <= f0 - 1e-4 * t * gg:
                break
            t *= 0.5
    return prox_soft_threshold(L - t * g, cfg.threshold), t


def init_L(A_theta: np.ndarray, cfg: PfmConfig, rng: np.random.Generator) -> np.ndarray:
    """``tril(randn)`` or the diagonal ``sqrt(diag(A_theta))``, times ``l_init_scale``.

    Gradient descent started from ``tril(randn)`` tends to park a diagonal
    entry of L near zero and stall; the diagonal start avoids that basin.
    """
    n = A_theta.shape[0]
    if cfg.l_init == "diag":
        L = np.diag(np.sqrt(np.maximum(np.diag(A_theta), 0.0)))
    else:
        L = np.tril(rng.standard_normal((n, n)))
    return cfg.l_init_scale * L


def admm_fixed_permutation(A_theta: np.ndarray, cfg: PfmConfig, n_iter: int,
                           rng: np.random.Generator | None = None, dual: bool = True
                           ) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """L and Gamma updates with the reordered matrix held fixed.

    Returns ``(L, Gamma, residuals)`` with one Frobenius residual per
    iteration.  ``dual=False`` skips the Gamma ascent (plain proximal
    gradient on the penalty, Gamma stays at its initial value).
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = A_theta.shape[0]
    L = init_L(A_theta, cfg, rng)
    Gamma = rng.standard_normal((n, n)) if cfg.gamma_init == "randn" else np.zeros((n, n))
    resid = []
    for _ in range(n_iter):
        L, _ = l_update(L, A_theta, Gamma, cfg)
        R = A_theta - L @ L.T
        if dual:
            Gamma = Gamma + cfg.rho * R
        resid.append(float(np.linalg.norm(R)))
    return L, Gamma, resid


# ---------------------------------------------------------------- theta side

def theta_objective(encoder: Encoder, G: GraphView, A, L: np.ndarray, Gamma: np.ndarray,
                    cfg: PfmConfig, noise: np.ndarray, features: np.ndarray | None = None
                    ) -> tuple[ad.Tensor, Tape, dict]:
    """Dual plus quadratic terms as a function of the encoder weights.

    The l1 term does not depend on theta and is left out.
    """
    tape = Tape()
    weights = encoder.bind(tape)
    Y = encoder.forward(G, weights, features=features)
    P = soft_permutation(Y, cfg.gumbel, noise=noise)
    A_theta = soft_reorder(A, P, max_n=cfg.max_n)
    R = A_theta - (L @ L.T)
    obj = ad.trace_of_product(Gamma, R) + ad.scale(ad.frobenius_sq(R), 0.5 * cfg.rho)
    return obj, tape, weights


def theta_gradients(encoder, G, A, L, Gamma, cfg, noise, features=None
                    ) -> tuple[float, dict[str, np.ndarray]]:
    obj, tape, weights = theta_objective(encoder, G, A, L, Gamma, cfg, noise, features)
    names = list(weights)
    grads = tape.backward(obj, [weights[k] for k in names])
    return float(obj.value), dict(zip(names, grads))


def adam_step(state: PfmState, grads: dict[str, np.ndarray], cfg: PfmConfig) -> None:
    state.adam_t += 1
    t = state.adam_t
    params = state.encoder.params
    for k, g in grads.items():
        m = state.adam_m.get(k, np.zeros_like(g))
        v = state.adam_v.get(k, np.zeros_like(g))
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        state.adam_m[k], state.adam_v[k] = m, v
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        params[k] = params[k] - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _soft_P(encoder: Encoder, G: GraphView, cfg: PfmConfig, rng, features=None) -> np.ndarray:
    Y = encoder.forward(G, features=features)
    noise = cfg.noise_scale * gumbel_noise((G.n, G.n), rng, cfg.eps)
    return soft_permutation(Y, cfg.gumbel, noise=noise).value


def direct_init_scores(G: GraphView, how: str, seed: int) -> np.ndarray:
    """Starting scores for direct mode.

    ``fiedler`` gives negated, standardized Fiedler values so the descending
    sort starts from the ascending-Fiedler ordering.
    """
    if how == "random":
        return 1e-2 * np.random.default_rng(seed).standard_normal(G.n)
    x = fiedler_vector(G)
    sd = x.std()
    return -(x - x.mean()) / sd if sd > 0 else np.zeros(G.n)


# ---------------------------------------------------------------- training

def train(matrices: Sequence[SparseSymMatrix], cfg: PfmConfig,
          encoder_cfg: EncoderConfig | None = None,
          log_sink: Callable[[dict], None] | None = None,
          matrix_ids: Sequence[str] | None = None,
          encoder: Encoder | None = None) -> Encoder:
    """Run ADMM training over ``matrices`` for ``cfg.epochs`` epochs.

    ``L`` and ``Gamma`` are re-initialized on every visit of a matrix unless
    ``cfg.warm_start``.  Each inner iteration emits one record to
    ``log_sink``.  Direct mode needs every matrix to have the same size.
    """
    matrices = list(matrices)
    if not matrices:
        raise ValueError("empty training set")
    ids = list(matrix_ids) if matrix_ids is not None else [str(i) for i in range(len(matrices))]
    for A in matrices:
        if A.n > cfg.max_n:
            raise ValueError(f"matrix of size {A.n} exceeds the dense training bound {cfg.max_n}")
    encoder_cfg = encoder_cfg or EncoderConfig(seed=cfg.seed)
    graphs = [to_graph(A) for A in matrices]
    dense = [A.to_dense() for A in matrices]

    if encoder is None:
        if encoder_cfg.mode == "direct":
            sizes = {A.n for A in matrices}
            if len(sizes) != 1:
                raise ValueError("direct mode needs all training matrices to share one size")
            encoder = Encoder(encoder_cfg, n=matrices[0].n)
            encoder.params["scores"] = direct_init_scores(graphs[0], cfg.direct_init, cfg.seed)
        else:
            encoder = Encoder(encoder_cfg)
    feats = [None if encoder_cfg.mode == "direct" else _features(G) for G in graphs]

    rng = np.random.default_rng(cfg.seed)
    state = PfmState(L=np.zeros((0, 0)), Gamma=np.zeros((0, 0)), encoder=encoder)
    warm: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    for epoch in range(cfg.epochs):
        for mi, (A, G, X) in enumerate(zip(dense, graphs, feats)):
            n = A.shape[0]
            P = _soft_P(encoder, G, cfg, rng, X)
            if cfg.warm_start and mi in warm:
                state.L, state.Gamma = warm[mi]
            else:
                state.L = init_L(P @ A @ P.T, cfg, rng)
                state.Gamma = (rng.standard_normal((n, n)) if cfg.gamma_init == "randn"
                               else np.zeros((n, n)))
            A_theta = P @ A @ P.T
            for k in range(cfg.n_admm):
                state.L, _ = l_update(state.L, A_theta, state.Gamma, cfg)
                noise = cfg.noise_scale * gumbel_noise((n, n), rng, cfg.eps)
                try:
                    _, grads = theta_gradients(encoder, G, A, state.L, state.Gamma, cfg, noise, X)
                except NonFiniteError as exc:
                    raise TrainingDivergence(str(exc), _snapshot(epoch, ids[mi], k, state)) from exc
                adam_step(state, grads, cfg)
                P = _soft_P(encoder, G, cfg, rng, X)
                A_theta = P @ A @ P.T
                state.Gamma = state.Gamma + cfg.rho * (A_theta - state.L @ state.L.T)
                parts = augmented_lagrangian(state.L, P, state.Gamma, A, cfg.rho)
                resid = float(np.linalg.norm(A_theta - state.L @ state.L.T))
                if not all(np.isfinite([parts.l1, parts.dual, parts.quad, resid])):
                    raise TrainingDivergence("non-finite loss",
                                             _snapshot(epoch, ids[mi], k, state))
                if log_sink is not None:
                    log_sink({"epoch": epoch, "matrix_id": ids[mi], "k": k, "l1": parts.l1,
                              "dual": parts.dual, "quad": parts.quad, "residual_fro": resid})
            if cfg.warm_start:
                warm[mi] = (state.L.copy(), state.Gamma.copy())
    return encoder


def _features(G: GraphView) -> np.ndarray:
    from .encoder import spectral_features
    return spectral_features(G)


def _snapshot(epoch, matrix_id, k, state: PfmState) -> dict:
    return {
        "epoch": epoch, "matrix_id": matrix_id, "k": k,
        "L_finite": bool(np.all(np.isfinite(state.L))),
        "Gamma_finite": bool(np.all(np.isfinite(state.Gamma))),
        "L_absmax": float(np.nanmax(np.abs(state.L))) if state.L.size else 0.0,
        "params_finite": {k: bool(np.all(np.isfinite(v))) for k, v in state.encoder.params.items()},
    }


def infer_ordering(A: SparseSymMatrix, encoder: Encoder) -> Permutation:
    """Sort predicted scores (no noise, no Sinkhorn)."""
    G = to_graph(A)
    if encoder.cfg.mode == "direct" and encoder.params["scores"].size != A.n:
        raise ValueError(
            f"direct-mode checkpoint holds {encoder.params['scores'].size} scores, matrix has {A.n} rows")
    return hard_permutation(encoder.scores(G))


def log_to_stream(stream) -> Callable[[dict], None]:
    def sink(record: dict) -> None:
        stream.write(json.dumps(record) + "\n")
    return sink


def config_dict(cfg: PfmConfig) -> dict:
    return asdict(cfg)
