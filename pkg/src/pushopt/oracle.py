"""Local objectives and stochastic first-order oracles.

Three objective families:

* PLSineObjective   -- scalar f_i(x) = x^2 + 3 sin^2 x + a_i cos x with
                       sum(a) = 0, so the network-average objective is
                       F(x) = x^2 + 3 sin^2 x (minimum 0 at x = 0). Noise is
                       additive Gaussian on the gradient.
* QuadraticObjective -- per-node 0.5 x'A_i x - b_i'x with PSD A_i; closed
                       form optimum, used as a test oracle.
* RegLogisticObjective -- per-node logistic losses with the smooth
                       non-convex regularizer lam * x_k^2/(1+x_k^2); the
                       stochastic gradient samples one local datapoint.

The StochasticOracle wraps an objective with counter-based RNG streams so a
query at (node, t, which-slot) always returns the same value, and counts
every gradient query it serves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng


@dataclass(frozen=True)
class PLSineObjective:
    a: np.ndarray  # per-node cosine coefficients, sum == 0
    noise_sigma: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        object.__setattr__(self, "a", a)
        if abs(float(a.sum())) > 1e-12 * max(1.0, float(np.abs(a).max(initial=0.0))):
            raise ValueError("per-node coefficients must sum to zero")
        if self.noise_sigma < 0:
            raise ValueError("noise standard deviation must be >= 0")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def dim(self) -> int:
        return 1

    noise_kind = "additive"
    f_star = 0.0

    def local_value(self, i: int, x) -> float:
        v = float(np.asarray(x).reshape(()))
        return v * v + 3.0 * np.sin(v) ** 2 + self.a[i] * np.cos(v)

    def local_grad(self, i: int, x) -> np.ndarray:
        v = float(np.asarray(x).reshape(()))
        return np.array([2.0 * v + 6.0 * np.sin(v) * np.cos(v) - self.a[i] * np.sin(v)])

    def grad_all(self, Z: np.ndarray) -> np.ndarray:
        z = Z[:, 0]
        return (2.0 * z + 6.0 * np.sin(z) * np.cos(z) - self.a * np.sin(z))[:, None]

    def global_grad_batch(self, X: np.ndarray) -> np.ndarray:
        # cosine terms cancel because sum(a) = 0
        x = X[:, 0]
        return (2.0 * x + 6.0 * np.sin(x) * np.cos(x))[:, None]


@dataclass(frozen=True)
class QuadraticObjective:
    A: np.ndarray  # (n, d, d) symmetric PSD
    b: np.ndarray  # (n, d)
    noise_sigma: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if A.ndim != 3 or A.shape[1] != A.shape[2] or b.shape != A.shape[:2]:
            raise ValueError("expected A of shape (n, d, d) and b of shape (n, d)")
        if not np.allclose(A, np.swapaxes(A, 1, 2)):
            raise ValueError("A_i must be symmetric")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    noise_kind = "additive"

    @property
    def x_star(self) -> np.ndarray:
        return np.linalg.solve(self.A.mean(axis=0), self.b.mean(axis=0))

    @property
    def f_star(self) -> float:
        return global_value(self, self.x_star)

    def local_value(self, i: int, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(0.5 * x @ self.A[i] @ x - self.b[i] @ x)

    def local_grad(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.A[i] @ x - self.b[i]

    def grad_all(self, Z: np.ndarray) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.A, Z) - self.b

    def global_grad_batch(self, X: np.ndarray) -> np.ndarray:
        return X @ self.A.mean(axis=0).T - self.b.mean(axis=0)


@dataclass(frozen=True)
class RegLogisticObjective:
    """Per-node sums of logistic losses plus a smooth non-convex regularizer.

    Data is stored stacked: features (N, d), labels (N,) in {-1, +1}, and
    offsets (n+1,) marking each node's contiguous slice. The local gradient
    is the sum over the node's samples; the single-sample stochastic
    gradient is scaled by the node's sample count so it is unbiased for
    that sum.
    """

    features: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray
    lam: float

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        off = np.asarray(self.offsets, dtype=np.int64)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "offsets", off)
        if self.lam < 0:
            raise ValueError("regularization weight must be >= 0")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if np.any(np.diff(off) < 1):
            raise ValueError("every node needs at least one sample")
        if off[0] != 0 or off[-1] != f.shape[0]:
            raise ValueError("offsets must cover the stacked dataset exactly")

    @property
    def n(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    noise_kind = "sample"
    f_star = None

    def node_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def num_samples(self, i: int) -> int:
        return int(self.offsets[i + 1] - self.offsets[i])

    def _reg_value(self, x: np.ndarray) -> float:
        return float(self.lam * np.sum(x * x / (1.0 + x * x)))

    def _reg_grad(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.lam * x / (1.0 + x * x) ** 2

    def local_value(self, i: int, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        sl = self.node_slice(i)
        margins = self.labels[sl] * (self.features[sl] @ x)
        return float(np.sum(np.logaddexp(0.0, -margins))) + self._reg_value(x)

    def local_grad(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        sl = self.node_slice(i)
        y = self.labels[sl]
        m = self.features[sl]
        coef = -y / (1.0 + np.exp(y * (m @ x)))
        return coef @ m + self._reg_grad(x)

    def sample_grad(self, i: int, idx: int, x: np.ndarray) -> np.ndarray:
        """Gradient at one local datapoint, scaled to be unbiased for local_grad."""
        j = int(self.offsets[i]) + idx
        y = self.labels[j]
        m = self.features[j]
        coef = -y / (1.0 + np.exp(y * (m @ x)))
        return self.num_samples(i) * coef * m + self._reg_grad(x)

    def grad_all(self, Z: np.ndarray) -> np.ndarray:
        return np.stack([self.local_grad(i, Z[i]) for i in range(self.n)])

    def global_grad_batch(self, X: np.ndarray) -> np.ndarray:
        return np.stack([global_gradient(self, x) for x in X])


def local_gradient_exact(obj, i: int, x) -> np.ndarray:
    """Analytic gradient of f_i at x."""
    x = np.asarray(x, dtype=np.float64).reshape(obj.dim)
    return obj.local_grad(i, x)


def global_value(obj, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(obj.dim)
    return sum(obj.local_value(i, x) for i in range(obj.n)) / obj.n


def global_gradient(obj, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(obj.dim)
    g = np.zeros(obj.dim)
    for i in range(obj.n):
        g += obj.local_grad(i, x)
    return g / obj.n


def make_pl_sine(n: int, sigma: float, a_scheme: str = "linear",
                 scale: float = 1.0, seed: int = 0) -> PLSineObjective:
    """Build the sine-family objective with mean-centered coefficients.

    "linear" gives a centered arithmetic sequence scaled so max|a_i| equals
    `scale`; "gaussian" draws normals, centers them, then applies `scale`.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if a_scheme == "linear":
        raw = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
        a = raw / np.abs(raw).max() * scale
    elif a_scheme == "gaussian":
        gen = rng.spawn_generator(seed, 0x5C)
        raw = gen.standard_normal(n)
        raw -= raw.mean()
        a = raw * scale
    else:
        raise ValueError(f"unknown a_scheme {a_scheme!r}")
    return PLSineObjective(a=a, noise_sigma=sigma)


def make_quadratic(n: int, d: int, seed: int = 0, noise_sigma: float = 0.0) -> QuadraticObjective:
    """Random well-conditioned PSD quadratics, one per node."""
    gen = rng.spawn_generator(seed, 0x6D)
    A = np.empty((n, d, d))
    for i in range(n):
        m = gen.standard_normal((d, d))
        A[i] = m.T @ m / d + 0.5 * np.eye(d)
    b = gen.standard_normal((n, d))
    return QuadraticObjective(A=A, b=b, noise_sigma=noise_sigma)


def partition_dataset(features: np.ndarray, labels: np.ndarray, n: int):
    """Split samples into contiguous near-equal blocks in input order.

    Remainder samples go to the earliest nodes. Returns the stacked arrays
    plus the (n+1,) offsets vector.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    total = features.shape[0]
    if total < n:
        raise ValueError(f"{total} samples cannot cover {n} nodes")
    base, rem = divmod(total, n)
    sizes = np.full(n, base, dtype=np.int64)
    sizes[:rem] += 1
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return features, labels, offsets


def make_synthetic_logistic(n: int, d: int, samples_per_node: int, lam: float,
                            seed: int = 0) -> RegLogisticObjective:
    """Two-class Gaussian data, label-sorted before the contiguous split so
    nodes see heterogeneous label distributions."""
    gen = rng.spawn_generator(seed, 0x7E)
    total = n * samples_per_node
    half = total // 2
    mu = np.ones(d) / np.sqrt(d)
    pos = gen.standard_normal((half, d)) + mu
    neg = gen.standard_normal((total - half, d)) - mu
    features = np.vstack([pos, neg])
    labels = np.concatenate([np.ones(half), -np.ones(total - half)])
    features, labels, offsets = partition_dataset(features, labels, n)
    return RegLogisticObjective(features=features, labels=labels, offsets=offsets, lam=lam)


class StochasticOracle:
    """Replayable stochastic first-order oracle with a query counter.

    The `which` flag of a query names the evaluation slot of the shared
    per-round sample: "fresh" for the new point and "reuse" for the repeated
    evaluation at the previous point. Sample-based objectives use the same
    datapoint for both slots. Additive-noise objectives draw independent
    noise per slot unless shared_noise is set, in which case the same noise
    vector is reused (the de-correlated default keeps the per-query variance
    bound valid).
    """

    _SLOTS = {"fresh": 0, "reuse": 1}

    def __init__(self, objective, seed: int = 0, shared_noise: bool = False):
        self.objective = objective
        self.seed = int(seed)
        self.shared_noise = bool(shared_noise)
        self.sfo_count = 0

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def dim(self) -> int:
        return self.objective.dim

    def _slot(self, which: str) -> int:
        if which not in self._SLOTS:
            raise ValueError(f"which must be 'fresh' or 'reuse', got {which!r}")
        return 0 if self.shared_noise else self._SLOTS[which]

    def exact(self, i: int, x) -> np.ndarray:
        return local_gradient_exact(self.objective, i, x)

    def exact_all(self, Z: np.ndarray) -> np.ndarray:
        return self.objective.grad_all(Z)

    def _noise_matrix(self, t: int, slot: int) -> np.ndarray:
        nodes = np.arange(self.n, dtype=np.uint64)[:, None]
        coords = np.arange(self.dim, dtype=np.uint64)[None, :]
        keys = rng.key_array(self.seed, rng.STREAM_NOISE, nodes, t, slot, coords)
        return rng.gaussian_from_key(keys)

    def stochastic_gradient(self, i: int, t: int, x, which: str = "fresh") -> np.ndarray:
        """One noisy gradient query for node i's sample at round t."""
        if not 0 <= i < self.n:
            raise IndexError(f"node index {i} out of range for n={self.n}")
        x = np.asarray(x, dtype=np.float64).reshape(self.dim)
        slot = self._slot(which)
        self.sfo_count += 1
        obj = self.objective
        if obj.noise_kind == "additive":
            coords = np.arange(self.dim, dtype=np.uint64)
            keys = rng.key_array(self.seed, rng.STREAM_NOISE, i, t, slot, coords)
            return obj.local_grad(i, x) + obj.noise_sigma * rng.gaussian_from_key(keys)
        idx = rng.choice_from_key(
            rng.derive_key(self.seed, rng.STREAM_SAMPLE, i, t), obj.num_samples(i))
        return obj.sample_grad(i, idx, x)

    def stochastic_gradient_all(self, t: int, Z: np.ndarray, which: str = "fresh") -> np.ndarray:
        """Vectorized queries for all nodes at once; counts n queries."""
        slot = self._slot(which)
        self.sfo_count += self.n
        obj = self.objective
        if obj.noise_kind == "additive":
            return obj.grad_all(Z) + obj.noise_sigma * self._noise_matrix(t, slot)
        nodes = np.arange(self.n, dtype=np.uint64)
        keys = rng.key_array(self.seed, rng.STREAM_SAMPLE, nodes, t)
        out = np.empty((self.n, self.dim))
        for i in range(self.n):
            idx = rng.choice_from_key(int(keys[i]), obj.num_samples(i))
            out[i] = obj.sample_grad(i, idx, Z[i])
        return out

    def init_gradient_all(self, Z: np.ndarray, batch: int) -> np.ndarray:
        """Mean of `batch` stochastic gradients per node at the start point."""
        if batch < 1:
            raise ValueError(f"init batch must be >= 1, got {batch}")
        obj = self.objective
        self.sfo_count += self.n * batch
        acc = np.zeros((self.n, self.dim))
        if obj.noise_kind == "additive":
            base = obj.grad_all(Z)
            nodes = np.arange(self.n, dtype=np.uint64)[:, None]
            coords = np.arange(self.dim, dtype=np.uint64)[None, :]
            for r in range(batch):
                keys = rng.key_array(self.seed, rng.STREAM_INIT, nodes, r, coords)
                acc += base + obj.noise_sigma * rng.gaussian_from_key(keys)
            return acc / batch
        for r in range(batch):
            for i in range(self.n):
                key = rng.derive_key(self.seed, rng.STREAM_INIT_SAMPLE, i, r)
                idx = rng.choice_from_key(key, obj.num_samples(i))
                acc[i] += obj.sample_grad(i, idx, Z[i])
        return acc / batch


def stochastic_gradient(oracle: StochasticOracle, i: int, t: int, x,
                        which: str = "fresh") -> np.ndarray:
    return oracle.stochastic_gradient(i, t, x, which)
