"""Learnable affine augmentation over the Lie algebra of planar affine maps.

Each of the six generators gets a bound ``theta_i``; a copy of an image is
warped by ``expm(sum u_i G_i)`` with ``u_i ~ U(-theta_i/2, theta_i/2)`` and the
classifier output is averaged over copies. Training minimizes cross-entropy
of the averaged logits minus ``lam * ||theta_R||`` where ``R`` holds the
active coordinates still below their shutdown threshold.

Matrices act on normalized [-1, 1] coordinates and map output pixels to input
pixels, so translation ``u = 1`` moves by half the axis and a positive scale
coordinate zooms out.

Training updates ``theta``, the provider's :class:`LinearHead` and, when the
provider exposes parameters (the conv stack), its body. Gradients are exact:
bilinear sampling derivatives, the provider's backward pass and the Frechet
derivative of the exponential map.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from invarlab.embedders import EmbeddingProvider, LinearHead, embed_all
from invarlab.errors import CapabilityError, NumericError, ShapeError, TrainingDiverged
from invarlab.image import (
    PADDING_MODES,
    bilinear_sample,
    bilinear_sample_grad,
    denormalize_matrix,
    normalize_matrix,
    sampling_grid,
)
from invarlab.seeds import derive_rng

logger = logging.getLogger("invarlab.lie")

NAMES = ("translate_x", "translate_y", "rotate", "scale", "stretch", "shear")
N_GENERATORS = len(NAMES)
TX, TY, ROT, SCALE, STRETCH, SHEAR = range(N_GENERATORS)


def _generator(block: Sequence[Sequence[float]] = ((0, 0), (0, 0)), tx: float = 0.0, ty: float = 0.0) -> np.ndarray:
    g = np.zeros((3, 3))
    g[:2, :2] = block
    g[0, 2] = tx
    g[1, 2] = ty
    return g


GENERATORS = np.stack([
    _generator(tx=1.0),
    _generator(ty=1.0),
    _generator(((0.0, -1.0), (1.0, 0.0))),
    _generator(((1.0, 0.0), (0.0, 1.0))),
    _generator(((1.0, 0.0), (0.0, -1.0))),
    _generator(((0.0, 1.0), (1.0, 0.0))),
])

# +-50% translation, full turn, 2000% zoom either way, shear of 1.
DEFAULT_THRESHOLDS = np.array([2.0, 2.0, 2.0 * math.pi, 2.0 * math.log(20.0), 2.0 * math.log(20.0), 2.0])

_TAYLOR_TERMS = 20
_SCALED_NORM = 0.5


# --- exponential map ------------------------------------------------------


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring a truncated Taylor series.

    Raises:
        ShapeError: If ``a`` is not square.
        NumericError: If ``a`` or the result is not finite.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expm needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("expm input has non-finite entries")
    n = a.shape[0]
    norm = float(np.max(np.sum(np.abs(a), axis=0))) if n else 0.0
    squarings = int(math.ceil(math.log2(norm / _SCALED_NORM))) if norm > _SCALED_NORM else 0
    b = a / 2.0**squarings
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, _TAYLOR_TERMS + 1):
        term = term @ b / k
        if not term.any():
            break
        result = result + term
    for _ in range(squarings):
        result = result @ result
    if not np.all(np.isfinite(result)):
        raise NumericError(f"expm overflowed for a matrix of norm {norm:.3g}")
    return result


def expm_frechet(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Directional derivative of :func:`expm` at ``a`` along ``e``."""
    n = a.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = a
    block[:n, n:] = e
    block[n:, n:] = a
    return expm(block)[:n, n:]


def algebra_element(u: np.ndarray) -> np.ndarray:
    return np.tensordot(np.asarray(u, dtype=np.float64), GENERATORS, axes=1)


# --- parameters -----------------------------------------------------------


@dataclass
class LieAugParams:
    """Bounds and regularization state.

    ``active`` masks the generators that take part; inactive coordinates are
    never sampled, regularized or updated. ``antithetic`` draws copies in
    ``(eps, -eps)`` pairs.
    """

    theta: np.ndarray = field(default_factory=lambda: np.zeros(N_GENERATORS))
    lam: float = 0.0
    thresholds: np.ndarray = field(default_factory=lambda: DEFAULT_THRESHOLDS.copy())
    asymmetric_scale: bool = False
    n_train_copies: int = 1
    n_eval_copies: int = 4
    active: tuple[bool, ...] = (True,) * N_GENERATORS
    padding: str = "fill"
    antithetic: bool = False

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).copy()
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64).copy()
        self.active = tuple(bool(a) for a in self.active)
        if self.theta.shape != (N_GENERATORS,) or self.thresholds.shape != (N_GENERATORS,):
            raise ValueError(f"theta and thresholds need {N_GENERATORS} entries")
        if len(self.active) != N_GENERATORS:
            raise ValueError(f"active needs {N_GENERATORS} flags, got {len(self.active)}")
        if not np.all(np.isfinite(self.theta)) or np.any(self.theta < 0.0):
            raise ValueError(f"theta must be finite and non-negative, got {self.theta.tolist()}")
        if np.any(self.thresholds <= 0.0):
            raise ValueError(f"thresholds must be positive, got {self.thresholds.tolist()}")
        if not math.isfinite(self.lam):
            raise ValueError(f"lam must be finite, got {self.lam}")
        if self.n_train_copies < 1 or self.n_eval_copies < 1:
            raise ValueError("copy counts must be >= 1")
        if self.antithetic and (self.n_train_copies % 2 or self.n_eval_copies % 2):
            raise ValueError("antithetic sampling needs even copy counts")
        if self.padding not in PADDING_MODES:
            raise ValueError(f"padding must be one of {PADDING_MODES}, got {self.padding!r}")

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.active, dtype=bool)

    def effective_theta(self) -> np.ndarray:
        return np.where(self.mask, self.theta, 0.0)

    def regularized(self) -> np.ndarray:
        """Coordinates whose regularization is on."""
        return self.mask & (self.theta < self.thresholds)

    def coefficients(self, eps: np.ndarray) -> np.ndarray:
        """Map ``U(-1/2, 1/2)`` draws to the multipliers of ``theta``."""
        c = np.array(eps, dtype=np.float64)
        if self.asymmetric_scale:
            c[..., SCALE] = (c[..., SCALE] - 0.5) / 2.0
        return c

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": dict(zip(NAMES, self.theta.tolist())),
            "lambda": self.lam,
            "thresholds": dict(zip(NAMES, self.thresholds.tolist())),
            "asymmetric_scale": self.asymmetric_scale,
            "n_train_copies": self.n_train_copies,
            "n_eval_copies": self.n_eval_copies,
            "active": [name for name, on in zip(NAMES, self.active) if on],
            "padding": self.padding,
            "antithetic": self.antithetic,
        }


def params_from_config(section: dict[str, Any]) -> LieAugParams:
    """Build params from the ``augerino`` config section.

    ``theta_init`` and ``thresholds`` accept a scalar, a list of six values or
    a mapping by generator name; ``active`` is a list of generator names.
    """

    def vector(value, default: np.ndarray) -> np.ndarray:
        if value is None:
            return default.copy()
        if isinstance(value, dict):
            unknown = set(value) - set(NAMES)
            if unknown:
                raise ValueError(f"unknown generators {sorted(unknown)}")
            out = default.copy()
            for name, v in value.items():
                out[NAMES.index(name)] = float(v)
            return out
        if isinstance(value, (int, float)):
            return np.full(N_GENERATORS, float(value))
        return np.asarray(value, dtype=np.float64)

    active_names = section.get("active", list(NAMES))
    unknown = set(active_names) - set(NAMES)
    if unknown:
        raise ValueError(f"unknown generators {sorted(unknown)}")
    active = tuple(name in active_names for name in NAMES)
    theta = vector(section.get("theta_init"), np.zeros(N_GENERATORS))
    return LieAugParams(
        theta=np.where(active, theta, 0.0),
        lam=float(section.get("lambda", 0.0)),
        thresholds=vector(section.get("thresholds"), DEFAULT_THRESHOLDS),
        asymmetric_scale=bool(section.get("asymmetric_scale", False)),
        n_train_copies=int(section.get("n_train_copies", 1)),
        n_eval_copies=int(section.get("n_eval_copies", 4)),
        active=active,
        padding=section.get("padding", "fill"),
        antithetic=bool(section.get("antithetic", False)),
    )


def params_from_dict(data: dict[str, Any]) -> LieAugParams:
    """Inverse of :meth:`LieAugParams.to_dict`."""
    return params_from_config({**data, "theta_init": data["theta"]})


def draw_eps(rng: np.random.Generator, n_copies: int, antithetic: bool = False) -> np.ndarray:
    """``(n_copies, 6)`` uniform draws on ``[-1/2, 1/2)``."""
    if not antithetic:
        return rng.uniform(-0.5, 0.5, size=(n_copies, N_GENERATORS))
    half = rng.uniform(-0.5, 0.5, size=(n_copies // 2, N_GENERATORS))
    return np.stack([half, -half], axis=1).reshape(n_copies, N_GENERATORS)


def sample_transform(params: LieAugParams, rng: np.random.Generator) -> np.ndarray:
    """One image-space matrix ``expm(sum u_i G_i)``; identity when theta is 0."""
    c = params.coefficients(draw_eps(rng, 1))[0]
    return expm(algebra_element(params.effective_theta() * c))


def _warp(img: np.ndarray, m: np.ndarray, padding: str) -> np.ndarray:
    w, h = img.shape[1], img.shape[0]
    xs, ys = sampling_grid(m, w, h, w, h, inverse_map=True)
    return bilinear_sample(img, xs, ys, padding=padding)


def _require_head(provider: EmbeddingProvider) -> LinearHead:
    if provider.head is None:
        raise CapabilityError(f"{provider.variant} has no classifier head")
    return provider.head


def averaged_forward(
    provider: EmbeddingProvider,
    params: LieAugParams,
    img: np.ndarray,
    rng: np.random.Generator,
    n_copies: int | None = None,
) -> np.ndarray:
    """Logits averaged over ``n_copies`` warped copies of ``img``.

    With theta 0 this is a single plain forward pass.

    Raises:
        CapabilityError: If the provider has no classifier head.
    """
    _require_head(provider)
    theta = params.effective_theta()
    if not theta.any():
        return provider.classify(img)
    n = params.n_eval_copies if n_copies is None else n_copies
    coeffs = params.coefficients(draw_eps(rng, n, params.antithetic and n % 2 == 0))
    logits = [provider.classify(_warp(img, expm(algebra_element(theta * c)), params.padding)) for c in coeffs]
    return np.mean(logits, axis=0)


# --- objective ------------------------------------------------------------


@dataclass
class Objective:
    value: float
    data_loss: float
    reg: float
    grad_theta: np.ndarray
    grad_weight: np.ndarray
    grad_bias: np.ndarray
    grad_body: list[np.ndarray] = field(default_factory=list)

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_theta, self.grad_weight, self.grad_bias, *self.grad_body]


def regularizer(params: LieAugParams) -> tuple[float, np.ndarray]:
    """``-lam * ||theta_R||`` and its gradient; zero outside ``R``.

    At ``theta_R = 0`` the gradient is the uniform unit direction, so bounds
    can leave zero whenever ``lam > 0``.
    """
    grad = np.zeros(N_GENERATORS)
    reg = params.regularized()
    norm = float(np.linalg.norm(params.theta[reg]))
    value = -params.lam * norm
    if params.lam == 0.0 or not reg.any():
        return value, grad
    if norm > 0.0:
        grad[reg] = -params.lam * params.theta[reg] / norm
    else:
        grad[reg] = -params.lam / math.sqrt(int(reg.sum()))
    return value, grad


def _pixel_grid(w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))


def objective_and_gradient(
    provider: EmbeddingProvider,
    params: LieAugParams,
    images: Sequence[np.ndarray],
    labels: Sequence[int],
    eps: np.ndarray,
    body: bool = True,
) -> Objective:
    """Mean cross-entropy of averaged logits plus the regularizer, with exact gradients.

    ``eps`` has shape ``(len(images), n_copies, 6)`` and fixes every draw, so
    the objective is a deterministic function of theta, the head and the
    body. Body gradients are computed when ``body`` is set and the provider
    has parameters.
    """
    head = _require_head(provider)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 3 or eps.shape[0] != len(images) or eps.shape[2] != N_GENERATORS:
        raise ShapeError(f"eps must have shape ({len(images)}, n, {N_GENERATORS}), got {eps.shape}")
    theta = params.effective_theta()
    need_theta_grad = bool(params.mask.any())
    grad_body = [np.zeros_like(p) for p in provider.parameters()] if body else []
    n_images, n_copies = eps.shape[:2]
    grad_theta = np.zeros(N_GENERATORS)
    grad_weight = np.zeros_like(head.weight)
    grad_bias = np.zeros_like(head.bias)
    losses = []

    for img, label, draws in zip(images, labels, eps):
        h, w = img.shape[:2]
        to_pixels = denormalize_matrix(w, h)
        from_pixels = normalize_matrix(w, h)
        us, vs = _pixel_grid(w, h)
        coeffs = params.coefficients(draws)
        copies = []
        for c in coeffs:
            a = algebra_element(theta * c)
            xs, ys = sampling_grid(expm(a), w, h, w, h, inverse_map=True)
            values, d_dx, d_dy = bilinear_sample_grad(img, xs, ys, padding=params.padding)
            copies.append((a, values, d_dx, d_dy, provider.embed(values)))

        z = np.mean([head.logits(e) for *_, e in copies], axis=0)
        p = LinearHead.softmax(z)
        loss = -math.log(max(float(p[label]), 1e-300))
        losses.append(loss)
        g_z = p.copy()
        g_z[label] -= 1.0
        g_z /= n_images * n_copies

        per_copy = []
        for a, values, d_dx, d_dy, e in copies:
            grad_weight += np.outer(g_z, e)
            grad_bias += g_z
            if grad_body:
                g_img, g_params = provider.backward(values, head.weight.T @ g_z)
                for acc, g in zip(grad_body, g_params):
                    acc += g
            elif need_theta_grad:
                g_img = provider.vjp(values, head.weight.T @ g_z)
            if not need_theta_grad:
                continue
            gx = np.sum(g_img * d_dx, axis=2)
            gy = np.sum(g_img * d_dy, axis=2)
            g_pixel_map = np.array([
                [np.sum(gx * us), np.sum(gx * vs), np.sum(gx)],
                [np.sum(gy * us), np.sum(gy * vs), np.sum(gy)],
                [0.0, 0.0, 0.0],
            ])
            g_m = to_pixels.T @ g_pixel_map @ from_pixels.T
            g_a = expm_frechet(a.T, g_m)
            per_copy.append(np.tensordot(GENERATORS, g_a, axes=([1, 2], [0, 1])))
        if per_copy:
            contributions = coeffs * np.array(per_copy)
            grad_theta += np.array([math.fsum(contributions[:, i]) for i in range(N_GENERATORS)])

    data_loss = math.fsum(losses) / n_images
    reg_value, reg_grad = regularizer(params)
    grad_theta = np.where(params.mask, grad_theta + reg_grad, 0.0)
    return Objective(
        value=data_loss + reg_value,
        data_loss=data_loss,
        reg=reg_value,
        grad_theta=grad_theta,
        grad_weight=grad_weight,
        grad_bias=grad_bias,
        grad_body=grad_body,
    )


def draw_batch_eps(params: LieAugParams, rng: np.random.Generator, n_images: int, n_copies: int | None = None) -> np.ndarray:
    n = params.n_train_copies if n_copies is None else n_copies
    return np.stack([draw_eps(rng, n, params.antithetic) for _ in range(n_images)])


# --- gradient check -------------------------------------------------------


@dataclass
class GradientCheck:
    rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray


def gradient_check(
    provider: EmbeddingProvider,
    params: LieAugParams,
    images: Sequence[np.ndarray],
    labels: Sequence[int],
    eps: np.ndarray,
    h: float = 1e-7,
    body: bool = True,
) -> GradientCheck:
    """Compare the exact gradient with central differences over active theta, the head and the body.

    The relative error is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    """
    head = _require_head(provider)
    exact = objective_and_gradient(provider, params, images, labels, eps, body=body)
    active = np.flatnonzero(params.mask)
    analytic = np.concatenate([exact.grad_theta[active], exact.grad_weight.ravel(), exact.grad_bias,
                               *(g.ravel() for g in exact.grad_body)])
    body_arrays = provider.parameters() if body else []

    def value() -> float:
        return objective_and_gradient(provider, params, images, labels, eps, body=False).value

    numeric = []
    theta0 = params.theta.copy()
    for i in active:
        params.theta = theta0.copy()
        params.theta[i] += h
        up = value()
        params.theta = theta0.copy()
        params.theta[i] -= h
        down = value()
        numeric.append((up - down) / (2.0 * h))
    params.theta = theta0

    for arr in (head.weight, head.bias, *body_arrays):
        flat = arr.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            up = value()
            flat[j] = original - h
            down = value()
            flat[j] = original
            numeric.append((up - down) / (2.0 * h))

    numeric = np.asarray(numeric)
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
    rel = float(np.linalg.norm(analytic - numeric)) / scale
    logger.debug(f"gradient check: relative error {rel:.3e} over {analytic.size} coordinates")
    return GradientCheck(rel, analytic, numeric)


# --- training -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr_weights: float = 0.1
    lr_theta: float = 0.05
    momentum: float = 0.9
    lr_step: int = 0
    lr_gamma: float = 0.1
    lr_body: float = 0.01
    train_body: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr_weights < 0 or self.lr_theta < 0 or self.lr_body < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lr_step < 0 or not 0.0 < self.lr_gamma <= 1.0:
            raise ValueError("lr_step must be >= 0 and lr_gamma in (0, 1]")

    def lr_factor(self, epoch: int) -> float:
        if not self.lr_step:
            return 1.0
        return self.lr_gamma ** (epoch // self.lr_step)


@dataclass
class TrainResult:
    params: LieAugParams
    log: list[dict[str, Any]]
    events: list[dict[str, Any]]
    head: dict[str, Any]
    body: dict[str, Any] = field(default_factory=dict)


def warm_start(provider: EmbeddingProvider, images: Sequence[np.ndarray], labels: Sequence[int],
               n_classes: int, epochs: int = 200) -> LinearHead:
    """Attach a head to ``provider`` and fit it on clean embeddings."""
    head = provider.attach_head(n_classes)
    head.fit(embed_all(provider, images), labels, epochs=epochs)
    return head


def train(
    provider: EmbeddingProvider,
    params: LieAugParams,
    images: Sequence[np.ndarray],
    labels: Sequence[int],
    config: TrainConfig | None = None,
) -> TrainResult:
    """Momentum SGD on theta, the head and the provider body jointly.

    The provider's head and body parameters are updated in place; the
    returned params hold the learned theta. Theta is projected onto
    ``theta >= 0`` after every step. ``config.train_body=False`` keeps the
    body fixed.

    Raises:
        CapabilityError: If the provider has no head.
        TrainingDiverged: If the objective or a gradient is not finite.
    """
    config = config or TrainConfig()
    head = _require_head(provider)
    params = replace(params, theta=params.theta.copy())
    labels = np.asarray(labels, dtype=np.int64)
    n = len(images)
    v_theta = np.zeros(N_GENERATORS)
    v_weight = np.zeros_like(head.weight)
    v_bias = np.zeros_like(head.bias)
    body = provider.parameters() if config.train_body else []
    v_body = [np.zeros_like(p) for p in body]
    if body:
        logger.info(f"Training {sum(p.size for p in body)} body parameters of {provider.variant}")
    regularized = params.regularized()
    log: list[dict[str, Any]] = []
    events: list[dict[str, Any]] = []
    step = 0

    for epoch in range(config.epochs):
        lr_factor = config.lr_factor(epoch)
        order = derive_rng(config.seed, epoch).permutation(n)
        values, losses = [], []
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            eps = draw_batch_eps(params, derive_rng(config.seed, epoch, b, 1), len(idx))
            obj = objective_and_gradient(provider, params, [images[i] for i in idx], labels[idx], eps,
                                         body=bool(body))
            if not math.isfinite(obj.value) or not all(np.all(np.isfinite(g)) for g in obj.gradients()):
                snapshot = {"epoch": epoch, "step": step, "theta": params.theta.tolist(),
                            "objective": obj.value, "data_loss": obj.data_loss, "head": head.state()}
                logger.error(f"Training diverged at epoch {epoch} step {step}")
                raise TrainingDiverged(f"Non-finite objective or gradient at epoch {epoch} step {step}", snapshot)

            v_theta = config.momentum * v_theta - config.lr_theta * lr_factor * obj.grad_theta
            v_weight = config.momentum * v_weight - config.lr_weights * lr_factor * obj.grad_weight
            v_bias = config.momentum * v_bias - config.lr_weights * lr_factor * obj.grad_bias
            params.theta = np.where(params.mask, np.maximum(params.theta + v_theta, 0.0), 0.0)
            head.weight += v_weight
            head.bias += v_bias
            for p, v, g in zip(body, v_body, obj.grad_body):
                v *= config.momentum
                v -= config.lr_body * lr_factor * g
                p += v
            step += 1

            now = params.regularized()
            for i in np.flatnonzero(now != regularized):
                event = "reenabled" if now[i] else "shutdown"
                events.append({"epoch": epoch, "step": step, "generator": NAMES[i], "event": event,
                                "theta": float(params.theta[i])})
                logger.info(f"{event} regularization on {NAMES[i]} at step {step} (theta={params.theta[i]:.4f})")
            regularized = now
            values.append(obj.value)
            losses.append(obj.data_loss)

        row = {"epoch": epoch, "objective": math.fsum(values) / len(values),
               "data_loss": math.fsum(losses) / len(losses), "lr_factor": lr_factor,
               "n_shutdown": int((params.mask & ~regularized).sum())}
        row.update({f"theta_{name}": float(t) for name, t in zip(NAMES, params.theta)})
        log.append(row)
        logger.info(f"epoch {epoch}: objective {row['objective']:.4f}, theta {np.round(params.theta, 4).tolist()}")

    return TrainResult(params, log, events, head.state(), provider.body_state())


# --- evaluation -----------------------------------------------------------


@dataclass
class EvalResult:
    mean_acc: float
    sem: float
    accuracies: list[float]
    use_augerino: bool
    n_copies: int


def evaluate(
    provider: EmbeddingProvider,
    params: LieAugParams,
    images: Sequence[np.ndarray],
    labels: Sequence[int],
    use_augerino: bool = True,
    n_eval_copies: int | None = None,
    test_seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> EvalResult:
    """Accuracy over test seeds, each seed redrawing the evaluation copies."""
    _require_head(provider)
    labels = np.asarray(labels)
    n_copies = params.n_eval_copies if n_eval_copies is None else n_eval_copies
    accs = []
    for seed in test_seeds:
        correct = 0
        for i, img in enumerate(images):
            if use_augerino:
                logits = averaged_forward(provider, params, img, derive_rng(seed, i), n_copies)
            else:
                logits = provider.classify(img)
            correct += int(np.argmax(logits) == labels[i])
        accs.append(correct / len(images))
    arr = np.asarray(accs)
    sem = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return EvalResult(float(arr.mean()), sem, accs, use_augerino, n_copies if use_augerino else 1)


def image_space_bounds(params: LieAugParams) -> dict[str, Any]:
    """Theta expressed as image-space ranges.

    Zoom is the magnification seen in the output, the inverse of the
    matrix scale.
    """
    half = params.effective_theta() / 2.0
    zoom_low = 1.0 if params.asymmetric_scale else math.exp(-half[SCALE])
    return {
        "translate_x_pct": 50.0 * half[TX],
        "translate_y_pct": 50.0 * half[TY],
        "rotate_deg": math.degrees(half[ROT]),
        "zoom_range": [zoom_low, math.exp(half[SCALE])],
        "stretch_range": [math.exp(-half[STRETCH]), math.exp(half[STRETCH])],
        "shear": float(half[SHEAR]),
    }
