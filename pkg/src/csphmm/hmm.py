"""Circular hidden Markov models of order 1 to 3 with Gaussian-mixture
emissions.

The transition structure of an order-m chain is an (m+1)-dimensional tensor:
entry [h1, ..., hm, w] is the probability of moving to state w given that the
last m states were (h1, ..., hm). The first m-1 steps of a sequence use
lower-order startup tensors kept in InitialLaws, so every frame of every
sequence is scored. All recursions run in log space.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NoValidPathError, NumericFailureError
from .features import FeatureSequence

MAX_ORDER = 3
ROW_SUM_TOL = 1e-9


def _log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(values)


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    """log(sum(exp(a))), stable, with all -inf slices mapping to -inf."""
    a = np.asarray(a, dtype=np.float64)
    peak = np.max(a, axis=axis, keepdims=True) if a.size else np.float64(-np.inf)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def as_matrix(obs) -> np.ndarray:
    """Accept a FeatureSequence or a raw (T, D) array."""
    if isinstance(obs, FeatureSequence):
        return obs.vectors
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError("observations must form a (frames, dim) matrix")
    return arr


def seeded_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class TopologyMask:
    """Boolean (from, to) adjacency over acoustic states."""

    allowed: np.ndarray

    def __post_init__(self):
        allowed = np.asarray(self.allowed, dtype=bool)
        object.__setattr__(self, "allowed", allowed)
        if allowed.ndim != 2 or allowed.shape[0] != allowed.shape[1]:
            raise InvalidInputError("topology mask must be square")
        if not np.all(allowed.any(axis=1)):
            raise InvalidInputError("every state needs at least one allowed successor")

    @property
    def n_states(self) -> int:
        return self.allowed.shape[0]

    @classmethod
    def circular(cls, n_states: int) -> "TopologyMask":
        """Ring topology: each state may hold or advance to the next state."""
        allowed = np.eye(n_states, dtype=bool)
        for i in range(n_states):
            allowed[i, (i + 1) % n_states] = True
        return cls(allowed)

    @classmethod
    def full(cls, n_states: int) -> "TopologyMask":
        return cls(np.ones((n_states, n_states), dtype=bool))


def _masked_rows(mask: TopologyMask, order: int, row_fn) -> np.ndarray:
    """Build an order-m tensor one successor row at a time.

    row_fn(last_state, allowed_indices) must return the probabilities for the
    allowed successors of that history.
    """
    n = mask.n_states
    values = np.zeros((n,) * (order + 1))
    for history in itertools.product(range(n), repeat=order):
        last = history[-1]
        idx = np.flatnonzero(mask.allowed[last])
        row = np.zeros(n)
        row[idx] = row_fn(last, idx)
        values[history] = row
    return values


@dataclass
class TransitionTensor:
    """Row-stochastic order-m transition tensor honoring a topology mask."""

    order: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not 1 <= self.order <= MAX_ORDER:
            raise InvalidInputError(f"order must be in 1..{MAX_ORDER}")
        if self.values.ndim != self.order + 1:
            raise InvalidInputError("tensor rank must equal order + 1")

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    def validate(self, mask: TopologyMask) -> None:
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise InvalidInputError("transition probabilities must lie in [0, 1]")
        sums = self.values.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise InvalidInputError("transition rows must sum to 1")
        blocked = ~mask.allowed
        # Mask applies to the final step of every history.
        view = self.values.reshape(-1, mask.n_states, mask.n_states)
        if np.any(view[:, blocked] != 0.0):
            raise InvalidInputError("masked transitions must be exactly zero")

    @classmethod
    def uniform(cls, mask: TopologyMask, order: int) -> "TransitionTensor":
        counts = mask.allowed.sum(axis=1, keepdims=True)
        base = mask.allowed / counts
        shape = (mask.n_states,) * (order + 1)
        return cls(order, np.broadcast_to(base, shape).copy())

    @classmethod
    def random(
        cls, mask: TopologyMask, order: int, rng: np.random.Generator, concentration: float = 1.0
    ) -> "TransitionTensor":
        values = _masked_rows(
            mask, order, lambda last, idx: rng.dirichlet(np.full(idx.size, concentration))
        )
        return cls(order, values)


@dataclass
class InitialLaws:
    """State distribution at t=1 plus the startup tensors used at t=2 and t=3."""

    psi1: np.ndarray
    startup2: np.ndarray | None = None
    startup3: np.ndarray | None = None

    def __post_init__(self):
        self.psi1 = np.asarray(self.psi1, dtype=np.float64)
        if self.startup2 is not None:
            self.startup2 = np.asarray(self.startup2, dtype=np.float64)
        if self.startup3 is not None:
            self.startup3 = np.asarray(self.startup3, dtype=np.float64)

    def validate(self, order: int, mask: TopologyMask) -> None:
        if abs(self.psi1.sum() - 1.0) > ROW_SUM_TOL:
            raise InvalidInputError("initial distribution must sum to 1")
        need = {1: (False, False), 2: (True, False), 3: (True, True)}[order]
        if need[0] != (self.startup2 is not None) or need[1] != (self.startup3 is not None):
            raise InvalidInputError(f"startup tensors inconsistent with order {order}")
        for tensor, rank in ((self.startup2, 2), (self.startup3, 3)):
            if tensor is None:
                continue
            TransitionTensor(rank - 1, tensor).validate(mask)

    def startups(self, order: int) -> list[np.ndarray]:
        return [t for t in (self.startup2, self.startup3)[: order - 1] if t is not None]

    @classmethod
    def uniform(cls, mask: TopologyMask, order: int) -> "InitialLaws":
        n = mask.n_states
        psi = np.full(n, 1.0 / n)
        s2 = TransitionTensor.uniform(mask, 1).values if order >= 2 else None
        s3 = TransitionTensor.uniform(mask, 2).values if order >= 3 else None
        return cls(psi, s2, s3)

    @classmethod
    def random(cls, mask: TopologyMask, order: int, rng: np.random.Generator) -> "InitialLaws":
        psi = rng.dirichlet(np.ones(mask.n_states))
        s2 = TransitionTensor.random(mask, 1, rng).values if order >= 2 else None
        s3 = TransitionTensor.random(mask, 2, rng).values if order >= 3 else None
        return cls(psi, s2, s3)


@dataclass
class EmissionModel:
    """Per-state diagonal-covariance Gaussian mixtures."""

    weights: np.ndarray   # (N, K)
    means: np.ndarray     # (N, K, D)
    variances: np.ndarray # (N, K, D)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)

    @property
    def n_states(self) -> int:
        return self.weights.shape[0]

    @property
    def n_mixtures(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    def validate(self, variance_floor: np.ndarray | float | None = None) -> None:
        if np.max(np.abs(self.weights.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise InvalidInputError("mixture weights must sum to 1 per state")
        if np.any(self.weights < 0.0):
            raise InvalidInputError("mixture weights must be non-negative")
        if not np.all(np.isfinite(self.means)):
            raise InvalidInputError("emission means must be finite")
        if np.any(self.variances <= 0.0):
            raise InvalidInputError("emission variances must be positive")
        if variance_floor is not None and np.any(self.variances < variance_floor - 1e-15):
            raise InvalidInputError("emission variances fell below the floor")

    def component_log_densities(self, obs: np.ndarray) -> np.ndarray:
        """Log N(o_t; mean, var) per frame, state, component: shape (T, N, K)."""
        diff = obs[:, None, None, :] - self.means[None]
        quad = np.sum(diff * diff / self.variances[None], axis=-1)
        log_det = np.sum(np.log(self.variances), axis=-1)
        return -0.5 * (quad + log_det[None] + self.dim * np.log(2.0 * np.pi))

    def log_densities(self, obs: np.ndarray) -> np.ndarray:
        """Mixture log-densities per frame and state: shape (T, N)."""
        comp = self.component_log_densities(obs)
        return logsumexp(comp + _log(self.weights)[None], axis=2)

    @classmethod
    def from_arrays(cls, weights, means, variances) -> "EmissionModel":
        return cls(np.asarray(weights), np.asarray(means), np.asarray(variances))

    @classmethod
    def single_gaussian(cls, means: np.ndarray, variances: np.ndarray) -> "EmissionModel":
        means = np.asarray(means, dtype=np.float64)
        n, d = means.shape
        return cls(np.ones((n, 1)), means[:, None, :], np.asarray(variances).reshape(n, 1, d))


@dataclass
class HmmModel:
    """A trained or initialized chain of a given order."""

    order: int
    topology: TopologyMask
    initials: InitialLaws
    transitions: TransitionTensor
    emissions: EmissionModel

    def __post_init__(self):
        if self.transitions.order != self.order:
            raise InvalidInputError("transition tensor order disagrees with model order")

    @property
    def n_states(self) -> int:
        return self.topology.n_states

    @property
    def feature_dim(self) -> int:
        return self.emissions.dim

    def validate(self, variance_floor=None) -> None:
        self.transitions.validate(self.topology)
        self.initials.validate(self.order, self.topology)
        self.emissions.validate(variance_floor)
        if self.emissions.n_states != self.n_states:
            raise InvalidInputError("emission state count disagrees with topology")

    def copy(self) -> "HmmModel":
        return HmmModel(
            self.order,
            self.topology,
            InitialLaws(
                self.initials.psi1.copy(),
                None if self.initials.startup2 is None else self.initials.startup2.copy(),
                None if self.initials.startup3 is None else self.initials.startup3.copy(),
            ),
            TransitionTensor(self.order, self.transitions.values.copy()),
            EmissionModel(
                self.emissions.weights.copy(),
                self.emissions.means.copy(),
                self.emissions.variances.copy(),
            ),
        )


@dataclass
class Alignment:
    """Best state path and its joint log-probability."""

    state_path: np.ndarray
    log_prob: float


@dataclass
class TrainConfig:
    max_iters: int = 20
    rel_tol: float = 1e-5
    variance_floor: float = 1e-3  # fraction of the global per-dimension data variance


# ---------------------------------------------------------------------------
# Scoring


def _check_path(model: HmmModel, path: np.ndarray) -> np.ndarray:
    path = np.asarray(path, dtype=np.int64)
    if path.ndim != 1 or path.size == 0:
        raise InvalidInputError("state path must be a non-empty 1-D sequence")
    if np.any(path < 0) or np.any(path >= model.n_states):
        raise InvalidInputError("state index out of range")
    return path


def sequence_log_prob(model: HmmModel, path) -> float:
    """Log-probability of a bare state sequence under initials + transitions.

    Topology-violating paths return -inf rather than raising.
    """
    path = _check_path(model, path)
    startups = model.initials.startups(model.order)
    total = _log(model.initials.psi1[path[0]])
    for t in range(1, path.size):
        if t < model.order:
            total += _log(startups[t - 1][tuple(path[: t + 1])])
        else:
            total += _log(model.transitions.values[tuple(path[t - model.order : t + 1])])
    return float(total)


def joint_log_prob(model: HmmModel, path, obs) -> float:
    """sequence_log_prob plus the emission term of every frame."""
    path = _check_path(model, path)
    obs = as_matrix(obs)
    if obs.shape[0] != path.size:
        raise InvalidInputError("path length must equal the observation count")
    if obs.shape[1] != model.feature_dim:
        raise InvalidInputError("observation dimension disagrees with the model")
    log_b = model.emissions.log_densities(obs)
    emission = float(np.sum(log_b[np.arange(path.size), path]))
    return sequence_log_prob(model, path) + emission


def _forward_alphas(model: HmmModel, log_b: np.ndarray) -> list[np.ndarray]:
    """Forward pass; alpha[t] is indexed by the last min(t+1, order) states."""
    T = log_b.shape[0]
    startups = [_log(s) for s in model.initials.startups(model.order)]
    log_a = _log(model.transitions.values)
    alphas = [_log(model.initials.psi1) + log_b[0]]
    for t in range(1, T):
        prev = alphas[-1]
        if t < model.order:
            alpha = prev[..., None] + startups[t - 1] + log_b[t]
        else:
            alpha = logsumexp(prev[..., None] + log_a, axis=0) + log_b[t]
        alphas.append(alpha)
    return alphas


def _backward_betas(model: HmmModel, log_b: np.ndarray) -> list[np.ndarray]:
    """Backward pass matching the shapes produced by _forward_alphas."""
    T = log_b.shape[0]
    startups = [_log(s) for s in model.initials.startups(model.order)]
    log_a = _log(model.transitions.values)
    betas: list[np.ndarray] = [None] * T
    betas[T - 1] = np.zeros((model.n_states,) * min(T, model.order))
    for t in range(T - 2, -1, -1):
        if t + 1 < model.order:
            tensor = startups[t]
            betas[t] = logsumexp(tensor + log_b[t + 1] + betas[t + 1], axis=-1)
        else:
            term = log_a + log_b[t + 1] + betas[t + 1][None, ...]
            betas[t] = logsumexp(term, axis=-1)
    return betas


def forward_log_likelihood(model: HmmModel, obs) -> float:
    """log P(O | model), marginalized over all state paths."""
    obs = as_matrix(obs)
    if obs.shape[0] == 0:
        raise InvalidInputError("empty observation sequence")
    if obs.shape[1] != model.feature_dim:
        raise InvalidInputError("observation dimension disagrees with the model")
    log_b = model.emissions.log_densities(obs)
    return float(logsumexp(_forward_alphas(model, log_b)[-1]))


def normalized_log_likelihood(model: HmmModel, obs) -> float:
    """Duration-normalized score: forward log-likelihood divided by T."""
    obs = as_matrix(obs)
    return forward_log_likelihood(model, obs) / obs.shape[0]


def viterbi_align(model: HmmModel, obs) -> Alignment:
    """Most likely state path; ties break toward the lower state index."""
    obs = as_matrix(obs)
    if obs.shape[0] == 0:
        raise InvalidInputError("empty observation sequence")
    if obs.shape[1] != model.feature_dim:
        raise InvalidInputError("observation dimension disagrees with the model")
    T = obs.shape[0]
    log_b = model.emissions.log_densities(obs)
    startups = [_log(s) for s in model.initials.startups(model.order)]
    log_a = _log(model.transitions.values)

    delta = _log(model.initials.psi1) + log_b[0]
    backptrs = []
    for t in range(1, T):
        if t < model.order:
            delta = delta[..., None] + startups[t - 1] + log_b[t]
        else:
            scores = delta[..., None] + log_a
            backptrs.append(np.argmax(scores, axis=0))
            delta = np.max(scores, axis=0) + log_b[t]

    best = float(np.max(delta))
    if not np.isfinite(best):
        raise NoValidPathError("no state path has positive probability")
    tail = np.unravel_index(int(np.argmax(delta)), delta.shape)
    path = list(tail)
    for bp in reversed(backptrs):
        head = int(bp[tuple(path[: model.order])])
        path.insert(0, head)
    return Alignment(np.asarray(path, dtype=np.int64), best)


# ---------------------------------------------------------------------------
# Construction and initialization


def _kmeans(data: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10):
    """Small Lloyd iteration; deterministic given the generator state."""
    n = data.shape[0]
    if n >= k:
        centers = data[rng.choice(n, size=k, replace=False)].copy()
    else:
        centers = data[rng.integers(0, n, size=k)] + rng.normal(0, 1e-3, (k, data.shape[1]))
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dist = np.sum((data[:, None, :] - centers[None]) ** 2, axis=2)
        assign = np.argmin(dist, axis=1)
        for j in range(k):
            members = data[assign == j]
            if members.shape[0] == 0:
                centers[j] = data[rng.integers(0, n)]
            else:
                centers[j] = members.mean(axis=0)
    return centers, assign


def data_variance_floor(data: list[np.ndarray], fraction: float) -> np.ndarray:
    """Per-dimension lower bound on mixture variances.

    Mostly a fraction of the global data variance, but never below a small
    scale-aware absolute term, so dimensions that happen to be (nearly)
    constant in the training sample cannot collapse to delta spikes.
    """
    stacked = np.vstack([as_matrix(seq) for seq in data])
    relative = fraction * stacked.var(axis=0)
    absolute = (0.01 * (np.abs(stacked.mean(axis=0)) + 0.1)) ** 2
    return np.maximum(relative, absolute)


def init_emissions(
    data: list[np.ndarray],
    n_states: int,
    n_mixtures: int,
    rng: np.random.Generator,
    variance_floor: np.ndarray,
) -> EmissionModel:
    """Flat-start emissions via one global k-means with n_states * n_mixtures
    clusters, dealt to states in sorted-center order. Distinct centers per
    state break the symmetry a uniform start would never escape.
    """
    matrices = [as_matrix(seq) for seq in data]
    dim = matrices[0].shape[1]
    pooled = np.vstack(matrices)
    total_clusters = n_states * n_mixtures
    centers, assign = _kmeans(pooled, total_clusters, rng)
    order = np.lexsort(centers.T[::-1])
    weights = np.zeros((n_states, n_mixtures))
    means = np.zeros((n_states, n_mixtures, dim))
    variances = np.zeros((n_states, n_mixtures, dim))
    for state in range(n_states):
        for j in range(n_mixtures):
            cluster = order[state * n_mixtures + j]
            members = pooled[assign == cluster]
            weights[state, j] = max(members.shape[0], 1)
            means[state, j] = centers[cluster]
            if members.shape[0] >= 2:
                variances[state, j] = np.maximum(members.var(axis=0), variance_floor)
            else:
                variances[state, j] = np.maximum(pooled.var(axis=0), variance_floor)
        weights[state] /= weights[state].sum()
    return EmissionModel(weights, means, variances)


def init_model(
    data: list,
    n_states: int,
    order: int = 1,
    n_mixtures: int = 4,
    topology: TopologyMask | None = None,
    seed=0,
    variance_floor_fraction: float = 1e-3,
) -> HmmModel:
    """Uniform transitions plus flat-start emissions estimated from data."""
    topology = topology or TopologyMask.circular(n_states)
    rng = seeded_rng(seed)
    floor = data_variance_floor(data, variance_floor_fraction)
    emissions = init_emissions(data, n_states, n_mixtures, rng, floor)
    model = HmmModel(
        order,
        topology,
        InitialLaws.uniform(topology, order),
        TransitionTensor.uniform(topology, order),
        emissions,
    )
    model.validate()
    return model


def random_model(
    n_states: int,
    order: int,
    feature_dim: int,
    n_mixtures: int = 1,
    topology: TopologyMask | None = None,
    seed=0,
    mean_scale: float = 2.0,
) -> HmmModel:
    """Randomly parameterized model, mainly for tests and synthetic corpora."""
    topology = topology or TopologyMask.circular(n_states)
    rng = seeded_rng(seed)
    weights = rng.dirichlet(np.ones(n_mixtures), size=n_states)
    means = rng.normal(0.0, mean_scale, (n_states, n_mixtures, feature_dim))
    variances = rng.uniform(0.5, 1.5, (n_states, n_mixtures, feature_dim))
    model = HmmModel(
        order,
        topology,
        InitialLaws.random(topology, order, rng),
        TransitionTensor.random(topology, order, rng),
        EmissionModel(weights, means, variances),
    )
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Order lifting and first-order expansion


def lift_order(model: HmmModel) -> HmmModel:
    """Initialize an order-(m+1) model from a trained order-m model.

    The new tensor ignores the extra (oldest) history state, so scores are
    unchanged until further training: a[(i, h...), w] = a_lower[(h...), w].
    """
    if model.order >= MAX_ORDER:
        raise InvalidInputError(f"cannot lift beyond order {MAX_ORDER}")
    n = model.n_states
    lifted_values = np.broadcast_to(
        model.transitions.values, (n,) * (model.order + 2)
    ).copy()
    if model.order == 1:
        initials = InitialLaws(
            model.initials.psi1.copy(), model.transitions.values.copy(), None
        )
    else:
        initials = InitialLaws(
            model.initials.psi1.copy(),
            model.initials.startup2.copy(),
            model.transitions.values.copy(),
        )
    lifted = HmmModel(
        model.order + 1,
        model.topology,
        initials,
        TransitionTensor(model.order + 1, lifted_values),
        EmissionModel(
            model.emissions.weights.copy(),
            model.emissions.means.copy(),
            model.emissions.variances.copy(),
        ),
    )
    lifted.validate()
    return lifted


@dataclass
class FirstOrderExpansion:
    """Order-1 chain over composite states (tuples of m base states).

    Composite state c = (s1, ..., sm) stands for the last m base states. Its
    initial weight folds the startup factors; step 0 of the forward recursion
    additionally folds the emissions of the first m frames, after which the
    recursion is the textbook first-order matrix form. Scoring therefore
    shares no code with the native variable-order recursion and serves as an
    independent cross-check of it.
    """

    base_order: int
    n_base: int
    tuples: np.ndarray      # (C, m) composite index -> base-state tuple
    log_initial: np.ndarray # (C,)
    log_trans: np.ndarray   # (C, C)
    emissions: EmissionModel

    @property
    def n_composite_states(self) -> int:
        return self.tuples.shape[0]

    def transition_matrix(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_trans)

    def initial_distribution(self) -> np.ndarray:
        return np.exp(self.log_initial)

    def forward_log_likelihood(self, obs) -> float:
        obs = as_matrix(obs)
        T = obs.shape[0]
        m = self.base_order
        if T < m:
            raise InvalidInputError(f"need at least {m} frames to score the expansion")
        small = self.emissions.log_densities(obs)  # (T, n_base)
        first = small[np.arange(m)[None, :], self.tuples].sum(axis=1)
        alpha = self.log_initial + first
        last = self.tuples[:, -1]
        for t in range(m, T):
            alpha = logsumexp(alpha[:, None] + self.log_trans, axis=0) + small[t, last]
        return float(logsumexp(alpha))


def expand_to_first_order(model: HmmModel) -> FirstOrderExpansion:
    """Rewrite an order-m chain (m >= 2) over N^m composite states."""
    if model.order < 2:
        raise InvalidInputError("order-1 models have nothing to expand")
    n = model.n_states
    m = model.order
    tuples = np.array(list(itertools.product(range(n), repeat=m)), dtype=np.int64)
    index = {tuple(row): c for c, row in enumerate(tuples)}

    log_psi = _log(model.initials.psi1)
    startups = [_log(s) for s in model.initials.startups(m)]
    log_initial = np.empty(len(tuples))
    for c, row in enumerate(tuples):
        total = log_psi[row[0]]
        for t in range(1, m):
            total += startups[t - 1][tuple(row[: t + 1])]
        log_initial[c] = total

    log_a = _log(model.transitions.values)
    log_trans = np.full((len(tuples), len(tuples)), -np.inf)
    for c, row in enumerate(tuples):
        history = tuple(row)
        for w in range(n):
            value = log_a[history + (w,)]
            if value == -np.inf:
                continue
            log_trans[c, index[history[1:] + (w,)]] = value
    return FirstOrderExpansion(m, n, tuples, log_initial, log_trans, model.emissions)


# ---------------------------------------------------------------------------
# Sampling


def sample_sequence(
    model: HmmModel, length: int, seed, frame_period: float = 0.01
) -> tuple[np.ndarray, FeatureSequence]:
    """Draw a state path and observations; deterministic for a fixed seed."""
    if length < 1:
        raise InvalidInputError("sequence length must be >= 1")
    rng = seeded_rng(seed)
    n = model.n_states
    startups = model.initials.startups(model.order)
    path = np.empty(length, dtype=np.int64)
    path[0] = rng.choice(n, p=model.initials.psi1)
    for t in range(1, length):
        if t < model.order:
            row = startups[t - 1][tuple(path[: t])]
        else:
            row = model.transitions.values[tuple(path[t - model.order : t])]
        path[t] = rng.choice(n, p=row)
    em = model.emissions
    obs = np.empty((length, em.dim))
    for t in range(length):
        comp = rng.choice(em.n_mixtures, p=em.weights[path[t]])
        obs[t] = rng.normal(em.means[path[t], comp], np.sqrt(em.variances[path[t], comp]))
    times = np.arange(length) * frame_period
    return path, FeatureSequence(obs, times)


# ---------------------------------------------------------------------------
# Baum-Welch training


class _Accumulators:
    def __init__(self, model: HmmModel):
        n, k, d = model.n_states, model.emissions.n_mixtures, model.feature_dim
        self.psi = np.zeros(n)
        self.startup2 = np.zeros((n, n)) if model.order >= 2 else None
        self.startup3 = np.zeros((n, n, n)) if model.order >= 3 else None
        self.trans = np.zeros((n,) * (model.order + 1))
        self.mix_weight = np.zeros((n, k))
        self.mix_mean = np.zeros((n, k, d))
        self.mix_sq = np.zeros((n, k, d))


def _accumulate_sequence(model: HmmModel, obs: np.ndarray, acc: _Accumulators) -> float:
    """One E-step over a single sequence; returns its log-likelihood."""
    comp = model.emissions.component_log_densities(obs)
    log_w = _log(model.emissions.weights)
    log_b = logsumexp(comp + log_w[None], axis=2)
    alphas = _forward_alphas(model, log_b)
    log_like = float(logsumexp(alphas[-1]))
    if not np.isfinite(log_like):
        return log_like
    betas = _backward_betas(model, log_b)
    T = obs.shape[0]
    n = model.n_states
    m = model.order
    startups = [_log(s) for s in model.initials.startups(m)]
    log_a = _log(model.transitions.values)

    acc.psi += np.exp(alphas[0] + betas[0] - log_like)

    startup_accs = [acc.startup2, acc.startup3][: m - 1]
    for t in range(min(T - 1, m - 1)):
        xi = alphas[t][..., None] + startups[t] + log_b[t + 1] + betas[t + 1] - log_like
        startup_accs[t] += np.exp(xi)

    occ = np.empty((T, n))
    for t in range(min(T, m - 1)):
        gamma = alphas[t] + betas[t] - log_like
        occ[t] = np.exp(gamma.reshape(-1, n)).sum(axis=0)
    if T >= m:
        # Steady-phase alphas share one shape; batch them over time.
        alpha_stack = np.stack(alphas[m - 1 :])
        beta_stack = np.stack(betas[m - 1 :])
        gamma_stack = np.exp(alpha_stack + beta_stack - log_like)
        occ[m - 1 :] = gamma_stack.reshape(gamma_stack.shape[0], -1, n).sum(axis=1)
        if T > m:
            logb_next = log_b[m:].reshape((T - m,) + (1,) * m + (n,))
            xi = (
                alpha_stack[:-1][..., None]
                + log_a[None]
                + logb_next
                + beta_stack[1:][:, None, ...]
                - log_like
            )
            acc.trans += np.exp(xi).sum(axis=0)

    comp_post = comp + log_w[None] - log_b[:, :, None]
    resp = occ[:, :, None] * np.exp(comp_post)
    acc.mix_weight += resp.sum(axis=0)
    acc.mix_mean += np.einsum("tnk,td->nkd", resp, obs)
    acc.mix_sq += np.einsum("tnk,td->nkd", resp, obs * obs)
    return log_like


def _normalize_rows(counts: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Renormalize histories with mass; zero-count histories keep old rows."""
    sums = counts.sum(axis=-1, keepdims=True)
    out = np.where(sums > 0.0, np.divide(counts, np.where(sums > 0.0, sums, 1.0)), previous)
    return out


def _update_emissions(
    model: HmmModel, acc: _Accumulators, variance_floor: np.ndarray
) -> EmissionModel:
    em = model.emissions
    weights = em.weights.copy()
    means = em.means.copy()
    variances = em.variances.copy()
    for state in range(em.n_states):
        total = acc.mix_weight[state].sum()
        if total <= 0.0:
            continue  # unobserved state keeps its initialization
        weights[state] = acc.mix_weight[state] / total
        for j in range(em.n_mixtures):
            mass = acc.mix_weight[state, j]
            if mass <= 0.0:
                continue
            mu = acc.mix_mean[state, j] / mass
            var = acc.mix_sq[state, j] / mass - mu * mu
            means[state, j] = mu
            variances[state, j] = np.maximum(var, variance_floor)
    return EmissionModel(weights, means, variances)


def train_baum_welch(
    model: HmmModel, data: list, config: TrainConfig = TrainConfig()
) -> tuple[HmmModel, list[float]]:
    """Expectation-maximization in log space.

    Returns the trained model and the per-iteration total log-likelihood
    trace (each entry evaluates the parameters *before* that iteration's
    update, so the trace is non-decreasing). Sequences shorter than
    order + 1 frames still contribute initial-law and emission statistics.
    """
    matrices = [as_matrix(seq) for seq in data]
    if not matrices:
        raise InvalidInputError("training needs at least one sequence")
    for mat in matrices:
        if mat.shape[0] < 1:
            raise InvalidInputError("training sequences must be non-empty")
        if mat.shape[1] != model.feature_dim:
            raise InvalidInputError("training data dimension disagrees with the model")

    floor = data_variance_floor(matrices, config.variance_floor)
    current = model.copy()
    trace: list[float] = []
    for iteration in range(config.max_iters):
        acc = _Accumulators(current)
        total = 0.0
        for mat in matrices:
            ll = _accumulate_sequence(current, mat, acc)
            if not np.isfinite(ll):
                raise NumericFailureError(
                    f"non-finite sequence likelihood at iteration {iteration}", iteration
                )
            total += ll
        trace.append(total)
        if len(trace) >= 2:
            previous = trace[-2]
            gain = trace[-1] - previous
            if gain < config.rel_tol * max(abs(previous), 1.0):
                break

        psi = acc.psi / acc.psi.sum()
        startup2 = (
            _normalize_rows(acc.startup2, current.initials.startup2)
            if current.order >= 2
            else None
        )
        startup3 = (
            _normalize_rows(acc.startup3, current.initials.startup3)
            if current.order >= 3
            else None
        )
        transitions = TransitionTensor(
            current.order, _normalize_rows(acc.trans, current.transitions.values)
        )
        emissions = _update_emissions(current, acc, floor)
        current = HmmModel(
            current.order, current.topology, InitialLaws(psi, startup2, startup3),
            transitions, emissions,
        )
    current.validate()
    return current, trace


def train_lift_pipeline(
    initial: HmmModel,
    data: list,
    max_order: int = 3,
    config: TrainConfig = TrainConfig(),
) -> tuple[HmmModel, dict[int, list[float]]]:
    """Train the given order-1 model, then lift and retrain up to max_order."""
    if initial.order != 1:
        raise InvalidInputError("the pipeline starts from an order-1 model")
    traces: dict[int, list[float]] = {}
    model, traces[1] = train_baum_welch(initial, data, config)
    for order in range(2, max_order + 1):
        model = lift_order(model)
        model, traces[order] = train_baum_welch(model, data, config)
    return model, traces


def train_order_pipeline(
    data: list,
    n_states: int,
    max_order: int = 3,
    n_mixtures: int = 4,
    topology: TopologyMask | None = None,
    config: TrainConfig = TrainConfig(),
    seed=0,
) -> tuple[HmmModel, dict[int, list[float]]]:
    """Train order 1, lift, retrain, up to max_order; the standard recipe."""
    model = init_model(
        data, n_states, order=1, n_mixtures=n_mixtures, topology=topology, seed=seed,
        variance_floor_fraction=config.variance_floor,
    )
    return train_lift_pipeline(model, data, max_order, config)
