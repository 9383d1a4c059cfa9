"""Random graph construction for property tests.

Unlike the benchmark generator this builder aims for coverage: every op kind,
rank-3 transposes, broadcast and reshape chains, constant subtrees and the
patterns each pass rewrites.
"""

import math

import numpy as np

from passgym.ir import GraphBuilder
from passgym.nn import MlpParams, backward, forward, init_mlp

SHAPES = [(2, 3), (3, 2), (2, 2), (3, 3), (4,), (2, 3, 2)]


def random_graph(rng: np.random.Generator, n_ops: int = 12, name: str = "rand"):
    b = GraphBuilder(name)
    by_shape: dict[tuple, list[int]] = {}

    def add(v):
        by_shape.setdefault(b.shape(v), []).append(v)
        return v

    def pick(shape=None):
        if shape is None:
            shape = list(by_shape)[int(rng.integers(len(by_shape)))]
        pool = by_shape.get(shape)
        if not pool:
            return add(b.parameter(shape))
        return pool[int(rng.integers(len(pool)))]

    def const(shape, value=None):
        size = math.prod(shape)
        if value is None:
            values = rng.uniform(0.5, 2.0, size=size).round(2)
        else:
            values = np.full(size, float(value))
        return add(b.constant(values.reshape(shape) if shape else values, shape))

    for shape in SHAPES[: int(rng.integers(2, len(SHAPES) + 1))]:
        add(b.parameter(shape))
    last = None
    for _ in range(n_ops):
        choice = int(rng.integers(18))
        x = pick()
        shape = b.shape(x)
        if choice == 0:
            last = add(b.add(x, pick(shape)))
        elif choice == 1:
            last = add(b.subtract(x, pick(shape)))
        elif choice == 2:
            last = add(b.multiply(x, pick(shape)))
        elif choice == 3:
            last = add(b.divide(x, const(shape)))
        elif choice == 4:
            last = add(b.maximum(x, pick(shape)))
        elif choice == 5:
            last = add(b.negate(b.negate(x)) if rng.random() < 0.5 else b.negate(x))
        elif choice == 6:
            last = add(b.log(b.exp(b.tanh(x))))
        elif choice == 7:
            last = add(b.exp(b.log(b.exp(b.tanh(x)))))
        elif choice == 8:
            last = add(b.tanh(x))
        elif choice == 9 and len(shape) == 2:
            other = pick((shape[1], shape[0])) if rng.random() < 0.5 else pick((shape[1], 2))
            last = add(b.dot(x, other))
        elif choice == 10 and len(shape) >= 2:
            perm = tuple(int(p) for p in rng.permutation(len(shape)))
            t = b.transpose(x, perm)
            perm2 = tuple(int(p) for p in rng.permutation(len(shape)))
            last = add(b.transpose(t, perm2))
        elif choice == 11 and math.prod(shape) > 1:
            flat = b.reshape(x, (math.prod(shape),))
            last = add(b.reshape(flat, shape) if rng.random() < 0.5 else flat)
        elif choice == 12:
            target = (2,) + shape
            inner = b.broadcast(x, target, tuple(range(1, len(target))))
            if rng.random() < 0.5:
                outer = (3,) + target
                last = add(b.broadcast(inner, outer, tuple(range(1, len(outer)))))
            else:
                last = add(inner)
        elif choice == 13 and len(shape) >= 1:
            last = add(b.reduce_sum(x, (int(rng.integers(len(shape))),)))
        elif choice == 14:
            last = add(b.multiply(x, const(shape, 1.0)) if rng.random() < 0.5 else b.add(const(shape, 0.0), x))
        elif choice == 15:
            last = add(b.multiply(const(shape, 0.0), x))
        elif choice == 16:
            c = const(shape)
            last = add(b.add(x, b.multiply(c, const(shape))))
        else:
            last = add(b.subtract(b.tanh(x), b.tanh(x)) if rng.random() < 0.5 else b.divide(x, x))
    if last is None:
        last = add(b.tanh(pick()))
    return b.build(last)


def random_net(rng, max_dim=8, max_depth=3):
    depth = int(rng.integers(1, max_depth + 1))
    dims = [int(d) for d in rng.integers(1, max_dim + 1, size=depth + 1)]
    return init_mlp(dims[0], dims[1:-1], dims[-1], rng, output_gain=1.0)


def fd_check(params: MlpParams, x, c, h=1e-5):
    """Largest relative error between analytic and central-difference gradients of ``sum(c * f(x))``."""
    _, cache = forward(params, x)
    grads, gx = backward(params, cache, c)

    def loss(p, inp):
        return float(np.sum(c * forward(p, inp)[0]))

    worst = 0.0
    for arr, g in zip(params.arrays(), grads.arrays()):
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = loss(params, x)
            arr[idx] = keep - h
            down = loss(params, x)
            arr[idx] = keep
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(1e-6, abs(fd) + abs(g[idx])))
    for idx in np.ndindex(x.shape):
        keep = x[idx]
        x[idx] = keep + h
        up = loss(params, x)
        x[idx] = keep - h
        down = loss(params, x)
        x[idx] = keep
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(fd - gx[idx]) / max(1e-6, abs(fd) + abs(gx[idx])))
    return worst


def gae_oracle(rewards, values, dones, last_value, gamma, lam):
    """Direct double loop: ``A_t = sum_k (gamma*lam)^k delta_{t+k}``, cut at episode ends."""
    T = len(rewards)
    next_values = list(values[1:]) + [last_value]
    deltas = [rewards[t] + gamma * next_values[t] * (1 - dones[t]) - values[t] for t in range(T)]
    out = []
    for t in range(T):
        total, weight = 0.0, 1.0
        for k in range(t, T):
            total += weight * deltas[k]
            if dones[k]:
                break
            weight *= gamma * lam
        out.append(total)
    return out
