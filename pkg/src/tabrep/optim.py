"""Named parameter registry, Adam, and a finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .tensor import Rng, Tensor, default_dtype


class OptimError(ValueError):
    pass


class MissingGradError(OptimError):
    pass


class ParamSet:
    """Ordered name -> Tensor map holding every trainable tensor exactly once."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise OptimError(f"parameter {name!r} registered twice")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def total_size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise OptimError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=default_dtype())
            if arr.shape != t.data.shape:
                raise OptimError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


# 0.02 starves the prompt attention: dot-product scores over raw embedding
# vectors get ~1e-4 spread at small width, leaving attention uniform and the
# query path untrainable. 0.1 sits safely past the observed cliff at ~0.05.
EMBED_INIT_STD = 0.1


def init_embedding(rng: Rng, shape) -> np.ndarray:
    return rng.normal(EMBED_INIT_STD, shape)


def init_linear(rng: Rng, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-bound, bound, shape)


def init_zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=default_dtype())


def init_ones(shape) -> np.ndarray:
    return np.ones(shape, dtype=default_dtype())


class Adam:
    """Bias-corrected Adam over a ParamSet.

    Gradients accumulate in each tensor's .grad between calls to step();
    the caller decides the micro-batch scaling.
    """

    def __init__(
        self,
        params: ParamSet,
        lr: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                raise MissingGradError(f"no gradient for {name!r}")
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], int]:
        return self.m, self.v, self.step_count

    def load_state(self, m: dict, v: dict, step_count: int) -> None:
        dt = default_dtype()
        self.m = {k: np.asarray(a, dtype=dt).copy() for k, a in m.items()}
        self.v = {k: np.asarray(a, dtype=dt).copy() for k, a in v.items()}
        self.step_count = int(step_count)


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: ParamSet,
    n_coords: int = 200,
    h: float = 1e-5,
    rng: Rng | None = None,
    floor: float = 1e-6,
) -> float:
    """Compare analytic gradients against central finite differences.

    Samples n_coords coordinates across all parameters (proportional to
    tensor size) and returns the worst relative error. Run in float64.
    `floor` bounds the denominator: coordinates with near-zero gradients are
    dominated by float cancellation in (f(x+h)-f(x-h)), roughly eps*|f|/h,
    and would otherwise report spurious relative errors.
    """
    rng = rng or Rng(0)
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    names = params.names()
    sizes = np.array([params[n].data.size for n in names], dtype=np.float64)
    probs = sizes / sizes.sum()
    worst = 0.0
    picks = rng._gen.choice(len(names), size=n_coords, p=probs)
    for k in picks:
        name = names[int(k)]
        p = params[name]
        flat = p.data.reshape(-1)
        i = int(rng.integers(0, flat.size))
        original = flat[i]
        flat[i] = original + h
        up = loss_fn().item()
        flat[i] = original - h
        down = loss_fn().item()
        flat[i] = original
        numeric = (up - down) / (2.0 * h)
        analytic = float(p.grad.reshape(-1)[i])
        denom = max(abs(numeric), abs(analytic), floor)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
