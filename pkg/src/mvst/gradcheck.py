"""Central finite-difference verification of every differentiable op.

The checker is the oracle side of the dual route: it evaluates the function
twice per coordinate under ``no_grad`` and never touches the analytic
backward code it is judging.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fusion, model, tensor
from .rng import stream
from .tensor import Tensor, backward, no_grad

DEFAULT_THRESHOLD = 1e-5


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: tuple[int, ...]

    def __str__(self) -> str:
        return f"max rel err {self.max_rel_error:.3e} at index {self.worst_index}"


def _numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float,
                  order: int) -> np.ndarray:
    """Coordinate-wise finite differences under no_grad.

    order=2 is the plain central difference (f(x+eps) - f(x-eps)) / (2 eps);
    order=4 Richardson-extrapolates two central differences, which the suite
    uses so the oracle's own truncation error sits well below the tolerance
    it certifies.
    """
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)

    def central(i: int, h: float) -> float:
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x).item()
        flat[i] = orig - h
        lo = f(x).item()
        flat[i] = orig
        return (hi - lo) / (2.0 * h)

    with no_grad():
        for i in range(flat.size):
            if order == 2:
                nflat[i] = central(i, eps)
            else:
                nflat[i] = (4.0 * central(i, eps / 2.0) - central(i, eps)) / 3.0
    return numeric


def _run_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float,
               order: int) -> GradCheckResult:
    x.grad = None
    backward(f(x))
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.grad = None
    numeric = _numeric_grad(f, x, eps, order)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckResult(float(rel.reshape(-1)[worst]),
                           tuple(int(j) for j in np.unravel_index(worst, x.shape)))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> GradCheckResult:
    """Compare analytic d f/d x against central differences, coordinate-wise.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8); the worst
    coordinate is reported alongside the error.
    """
    return _run_check(f, x, eps, order=2)


def _check_inputs(build_loss: Callable[..., Tensor], inputs: list[Tensor],
                  eps: float) -> float:
    """Worst gradient error over each input of a multi-input function."""
    worst = 0.0
    for idx in range(len(inputs)):
        def f(t, _idx=idx):
            args = list(inputs)
            args[_idx] = t
            return build_loss(*args)

        worst = max(worst, _run_check(f, inputs[idx], eps, order=4).max_rel_error)
    return worst


class _Probe:
    """Scalar reduction against a random matrix that stays fixed across the
    repeated evaluations grad_check performs."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._cache: dict[tuple[int, ...], Tensor] = {}

    def __call__(self, t: Tensor) -> Tensor:
        probe = self._cache.get(t.shape)
        if probe is None:
            probe = self._cache[t.shape] = Tensor(self._rng.normal(size=t.shape))
        col = tensor.reshape(tensor.hadamard(t, probe), (t.size, 1))
        return tensor.scale(tensor.mean_pool_rows(col), float(t.size))


# --------------------------------------------------------------------------
# Per-op suite
# --------------------------------------------------------------------------

@dataclass
class OpReport:
    op: str
    max_rel_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def _tiny_block_setup(seed: int):
    """A one-block model with parameters re-randomized to O(0.5) scale; the
    training init is too close to zero for well-conditioned relative errors."""
    rng = stream(seed, "gradcheck-block")
    cfg = model.ModelConfig(n=16, d_t=8, depth=1, heads=2, mlp_ratio=2, views=(0, 1, 2))
    params = model.init_model(cfg, seed=seed)
    for _, p in params.named_parameters():
        p.data = rng.normal(scale=0.5, size=p.shape)
    return rng, cfg, params


def _op_checks(seed: int) -> dict[str, Callable[[], float]]:
    rng = stream(seed, "gradcheck")
    probe = _Probe(stream(seed, "gradcheck-probe"))
    eps = 1e-3

    def t(*shape):
        return tensor.parameter(rng.normal(size=shape))

    def check_matmul():
        a, b = t(4, 5), t(5, 3)
        return _check_inputs(lambda x, y: probe(tensor.matmul(x, y)), [a, b], eps)

    def check_layer_norm():
        x, g, bsh = t(4, 6), t(6), t(6)
        return _check_inputs(
            lambda xx, gg, bb: probe(tensor.layer_norm(xx, gg, bb, eps=1e-5)),
            [x, g, bsh], eps)

    def check_softmax():
        x = t(4, 7)
        return _check_inputs(lambda xx: probe(tensor.softmax_rows(xx)), [x], eps)

    def check_gelu():
        x = t(5, 6)
        return _check_inputs(lambda xx: probe(tensor.gelu(xx)), [x], eps)

    def check_sigmoid():
        x = t(5, 6)
        return _check_inputs(lambda xx: probe(tensor.sigmoid(xx)), [x], eps)

    def check_hadamard():
        a, b = t(4, 5), t(4, 5)
        return _check_inputs(lambda x, y: probe(tensor.hadamard(x, y)), [a, b], eps)

    def check_mean_pool():
        x = t(6, 5)
        return _check_inputs(
            lambda xx: probe(tensor.reshape(tensor.mean_pool_rows(xx), (1, 5))),
            [x], eps)

    def check_cross_entropy():
        x = t(6, 4)
        labels = rng.integers(0, 4, size=6)
        weights = rng.uniform(0.5, 2.0, size=4)
        return _check_inputs(lambda xx: tensor.cross_entropy(xx, labels, weights), [x], eps)

    def check_msa():
        _, cfg, params = _tiny_block_setup(seed)
        blk = params.views[0].blocks[0]
        x = t(6, cfg.d_t)
        inputs = [x, blk.wq, blk.wk, blk.wv, blk.wo, blk.ln1_gain, blk.ln1_bias]

        def loss(xx, wq, wk, wv, wo, g1, b1):
            blk.wq, blk.wk, blk.wv, blk.wo = wq, wk, wv, wo
            blk.ln1_gain, blk.ln1_bias = g1, b1
            return probe(model.msa(xx, blk, cfg.heads))

        return _check_inputs(loss, inputs, eps)

    def check_encoder_block():
        _, cfg, params = _tiny_block_setup(seed)
        blk = params.views[0].blocks[0]
        x = t(6, cfg.d_t)
        inputs = [x, blk.wq, blk.wo, blk.mlp_w1, blk.mlp_b1, blk.mlp_w2, blk.ln2_gain]

        def loss(xx, wq, wo, w1, b1, w2, g2):
            blk.wq, blk.wo = wq, wo
            blk.mlp_w1, blk.mlp_b1, blk.mlp_w2 = w1, b1, w2
            blk.ln2_gain = g2
            return probe(model.encoder_block(xx, blk, cfg.heads, cfg.mlp_gelu))

        return _check_inputs(loss, inputs, eps)

    def check_gates():
        nt, d = 4, 8
        feats = [t(nt, d) for _ in range(2)]
        ws = [t(d, d) for _ in range(2)]

        def loss(f0, f1, w0, w1):
            gates = fusion.gate_coefficients([f0, f1], [w0, w1], mode="per_view")
            return probe(gates[0])

        return _check_inputs(loss, feats + ws, eps)

    def check_fuse():
        nt, d = 4, 8
        feats = [t(nt, d) for _ in range(3)]
        gates = [t(nt, d) for _ in range(3)]

        def loss(*args):
            return probe(fusion.fuse(list(args[:3]), list(args[3:])))

        return _check_inputs(loss, feats + gates, eps)

    def check_classify():
        nt, d = 5, 8
        head = fusion.init_classifier(d, seed=seed)
        x = t(nt, d)
        inputs = [x, head.w1, head.b1, head.w2, head.b2]

        def loss(xx, w1, b1, w2, b2):
            head.w1, head.b1, head.w2, head.b2 = w1, b1, w2, b2
            return probe(fusion.classify(xx, head))

        return _check_inputs(loss, inputs, eps)

    return {
        "matmul": check_matmul,
        "layer_norm": check_layer_norm,
        "softmax": check_softmax,
        "gelu": check_gelu,
        "sigmoid": check_sigmoid,
        "hadamard": check_hadamard,
        "mean_pool": check_mean_pool,
        "cross_entropy": check_cross_entropy,
        "msa": check_msa,
        "encoder_block": check_encoder_block,
        "gates": check_gates,
        "fuse": check_fuse,
        "classify": check_classify,
    }


def end_to_end_error(seed: int, n_params: int = 25, eps: float = 1e-3) -> float:
    """Loss gradient of a tiny multi-view model vs finite differences.

    Perturbs ``n_params`` randomly chosen parameter coordinates and returns
    the worst relative error.
    """
    rng = stream(seed, "gradcheck-e2e")
    cfg = model.ModelConfig(n=32, d_t=16, depth=1, heads=2, mlp_ratio=2, views=(0, 1, 2))
    params = model.init_model(cfg, seed=seed)
    # Re-randomize away from the tiny training init: gradients of O(0.01+)
    # magnitude keep the relative-error comparison well conditioned.
    for _, p in params.named_parameters():
        p.data = rng.normal(scale=0.25, size=p.shape)
    mel = rng.uniform(0.0, 1.0, size=(cfg.n, cfg.n))
    label = int(rng.integers(0, 4))

    def loss_tensor() -> Tensor:
        logits = model.forward_logits(mel, params, cfg)
        return tensor.cross_entropy(logits, [label])

    for _, p in params.named_parameters():
        p.grad = None
    backward(loss_tensor())

    named = params.named_parameters()
    worst = 0.0
    with no_grad():
        for _ in range(n_params):
            name, p = named[int(rng.integers(0, len(named)))]
            idx = int(rng.integers(0, p.size))
            flat = p.data.reshape(-1)

            def df(h: float) -> float:
                orig = flat[idx]
                flat[idx] = orig + h
                hi = loss_tensor().item()
                flat[idx] = orig - h
                lo = loss_tensor().item()
                flat[idx] = orig
                return (hi - lo) / (2.0 * h)

            # Richardson-extrapolated central difference: O(h^4) truncation
            # keeps small-gradient coordinates well resolved.
            numeric = (4.0 * df(eps / 2.0) - df(eps)) / 3.0
            analytic = p.grad.reshape(-1)[idx] if p.grad is not None else 0.0
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


def run_suite(seed: int = 0, n_seeds: int = 5,
              threshold: float = DEFAULT_THRESHOLD) -> list[OpReport]:
    """Every differentiable op checked once, worst error over n_seeds seeds."""
    reports = []
    op_names = list(_op_checks(seed).keys())
    for op in op_names:
        worst = 0.0
        for k in range(n_seeds):
            worst = max(worst, _op_checks(seed + k)[op]())
        reports.append(OpReport(op, worst, threshold))
    e2e = max(end_to_end_error(seed + k) for k in range(n_seeds))
    reports.append(OpReport("end_to_end", e2e, 1e-4))
    return reports
