"""Factorized hybrid belief over a continuous state and per-object classes.

The joint posterior over the stacked continuous state X (start pose, object
positions, trajectory) and the discrete class assignment C factorizes as

    b[C, X]  proportional to  b_g[X] * prod_n  btilde[c_n | X]

where b_g is the Gaussian posterior conditioned on geometric measurements
only, and btilde[c_n | X] = P0(c_n) * prod_t P_Z(z_s | x_t, x_obj_n, c_n)
collects the class prior and every semantic measurement of object n.  The
class-sum potential

    phi(X) = prod_n sum_c btilde[c | X]

turns the unnormalized continuous marginal into b_g[X] * phi(X), so the
joint hypothesis space never has to be enumerated: all class structure is
carried by per-object tables of size n_objects x n_classes.

Class ids are 1-based in Hypothesis; array code uses 0-based labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .gaussian import GaussianFactorGraph, StackedIndex
from .scenario import ObservationBatch, Scenario, ScenarioError

_PHI_CHUNK = 65536

# hypothesis indices are kept representable as signed 64-bit
CODEC_LIMIT = 2**63


class CodecRangeError(OverflowError):
    """Joint hypothesis index would not fit in a signed 64-bit integer."""


def n_hypotheses(n_objects: int, n_classes: int) -> int:
    count = n_classes**n_objects
    if count > CODEC_LIMIT:
        raise CodecRangeError(
            f"{n_classes}**{n_objects} hypotheses exceed the 2**63 index range"
        )
    return count


@dataclass(frozen=True)
class Hypothesis:
    """One joint class assignment; classes are 1-based, object order fixed.

    The linear index treats object 0 as the least significant digit:
    index = sum_n (classes[n] - 1) * n_classes**n.
    """

    classes: tuple
    n_classes: int

    def __post_init__(self):
        if any(not 1 <= c <= self.n_classes for c in self.classes):
            raise ValueError(f"classes must lie in 1..{self.n_classes}")
        n_hypotheses(len(self.classes), self.n_classes)

    @property
    def n_objects(self) -> int:
        return len(self.classes)

    @property
    def index(self) -> int:
        idx = 0
        for n in reversed(range(self.n_objects)):
            idx = idx * self.n_classes + (self.classes[n] - 1)
        return idx

    @classmethod
    def from_index(cls, index: int, n_objects: int, n_classes: int) -> "Hypothesis":
        total = n_hypotheses(n_objects, n_classes)
        if not 0 <= index < total:
            raise ValueError(f"index {index} outside 0..{total - 1}")
        classes = []
        for _ in range(n_objects):
            classes.append(index % n_classes + 1)
            index //= n_classes
        return cls(classes=tuple(classes), n_classes=n_classes)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self.classes, dtype=np.int64) - 1


def enumerate_labels(
    n_objects: int, n_classes: int, max_hypotheses: int | None = None
) -> np.ndarray:
    """(n_hypotheses, n_objects) 0-based label matrix, row h = decode(h)."""
    total = n_hypotheses(n_objects, n_classes)
    if max_hypotheses is not None and total > max_hypotheses:
        raise ValueError(
            f"{total} hypotheses exceed the enumeration guard {max_hypotheses}"
        )
    idx = np.arange(total, dtype=np.int64)
    out = np.empty((total, n_objects), dtype=np.int64)
    for n in range(n_objects):
        out[:, n] = (idx // n_classes**n) % n_classes
    return out


class HybridBelief:
    """Gaussian geometric posterior plus per-object semantic evidence.

    Immutable by convention: update() returns a new belief sharing nothing
    mutable with its parent.  Semantic measurements are stored flat (object
    id, time index, 2D value) and sorted by object then time so both kernel
    backends accumulate in the same order.

    prior_hook, when given, maps a batch of start poses (ns, 2) to per-sample
    log class priors (ns, n_objects, n_classes), letting the class prior
    condition on where the robot started.  The default uses the scenario's
    constant table.
    """

    def __init__(
        self,
        scenario: Scenario,
        geo: GaussianFactorGraph,
        sem_obj: np.ndarray,
        sem_t: np.ndarray,
        sem_z: np.ndarray,
        k: int,
        prior_hook=None,
    ):
        self.scenario = scenario
        self.geo = geo
        self.sem_obj = np.asarray(sem_obj, dtype=np.int64)
        self.sem_t = np.asarray(sem_t, dtype=np.int64)
        self.sem_z = np.asarray(sem_z, dtype=np.float64).reshape(-1, 2)
        self.k = k
        self.prior_hook = prior_hook
        order = np.lexsort((self.sem_t, self.sem_obj))
        self.sem_obj = self.sem_obj[order]
        self.sem_t = self.sem_t[order]
        self.sem_z = self.sem_z[order]
        idx = geo.index
        self._pose_col = np.array(
            [idx.pose_slice(int(t)).start for t in self.sem_t], dtype=np.int64
        )
        self._obj_col = np.array(
            [idx.object_slice(int(n)).start for n in self.sem_obj], dtype=np.int64
        )

    # ------------------------------------------------------------------

    @classmethod
    def from_scenario(cls, scenario: Scenario, prior_hook=None) -> "HybridBelief":
        index = StackedIndex(scenario.n_objects, 0)
        geo = GaussianFactorGraph(index)
        geo.add_prior(
            index.pose_cols(0), scenario.robot_prior_mean, scenario.robot_prior_cov
        )
        for n in range(scenario.n_objects):
            geo.add_prior(
                index.object_cols(n),
                scenario.object_prior_means[n],
                scenario.object_prior_covs[n],
            )
        empty = np.empty(0)
        return cls(scenario, geo, empty, empty, np.empty((0, 2)), 0, prior_hook)

    @property
    def index(self) -> StackedIndex:
        return self.geo.index

    @property
    def n_semantic_obs(self) -> int:
        return len(self.sem_obj)

    def update(self, action: np.ndarray, batch: ObservationBatch) -> "HybridBelief":
        """Condition on one motion step and its observation batch."""
        if batch.t != self.k + 1:
            raise ScenarioError(
                f"batch.t={batch.t}, expected {self.k + 1} for a belief at k={self.k}"
            )
        sc = self.scenario
        action = np.asarray(action, dtype=float).reshape(2)
        geo = self.geo.with_appended_step()
        idx = geo.index
        eye2 = np.eye(2)
        a_rel = np.hstack([-eye2, eye2])
        cols = np.concatenate([idx.pose_cols(self.k), idx.pose_cols(self.k + 1)])
        geo.add_linear_factor(cols, a_rel, 0.0, sc.sigma2_x * eye2, action)
        for j, n in enumerate(batch.object_ids):
            cols = np.concatenate([idx.pose_cols(self.k + 1), idx.object_cols(int(n))])
            geo.add_linear_factor(
                cols, a_rel, 0.0, sc.sigma2_obs * eye2, batch.geometric[j]
            )
        sem_obj = np.concatenate([self.sem_obj, batch.object_ids])
        sem_t = np.concatenate(
            [self.sem_t, np.full(len(batch.object_ids), batch.t, dtype=np.int64)]
        )
        sem_z = np.concatenate([self.sem_z, batch.semantic], axis=0)
        return HybridBelief(sc, geo, sem_obj, sem_t, sem_z, self.k + 1, self.prior_hook)

    # ------------------------------------------------------------------
    # class tables and derived quantities

    def class_log_tables(self, samples: np.ndarray) -> np.ndarray:
        """(ns, n_objects, n_classes) log btilde[c_n | X] per sample."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        sc = self.scenario
        if self.prior_hook is None:
            log_prior = sc.log_class_prior()
        else:
            log_prior = np.zeros((sc.n_objects, sc.n_classes))
        out = _kernels.class_log_tables(
            samples,
            self._pose_col,
            self._obj_col,
            self.sem_obj,
            self.sem_z,
            log_prior,
            sc.alphas,
            sc.sigma2_obs,
        )
        if self.prior_hook is not None:
            x0 = samples[:, self.index.pose_slice(0)]
            out = out + self.prior_hook(x0)
        return out

    def log_phi(self, samples: np.ndarray) -> np.ndarray:
        """log phi(X) = sum_n logsumexp_c of the class table, per sample."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        parts = []
        for lo in range(0, len(samples), _PHI_CHUNK):
            tables = self.class_log_tables(samples[lo : lo + _PHI_CHUNK])
            parts.append(logsumexp(tables, axis=2).sum(axis=1))
        return np.concatenate(parts)

    def log_unnormalized_marginal(self, samples: np.ndarray) -> np.ndarray:
        """log of b_g[X] * phi(X), the unnormalized continuous marginal."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        return self.geo.log_density(samples) + self.log_phi(samples)

    def class_posterior_given_state(self, samples: np.ndarray) -> np.ndarray:
        """Row-stochastic (ns, n_objects, n_classes) table of b[c_n | X]."""
        tables = self.class_log_tables(samples)
        tables = tables - tables.max(axis=2, keepdims=True)
        probs = np.exp(tables)
        return probs / probs.sum(axis=2, keepdims=True)

    def class_conditional_unnormalized(self, x: np.ndarray, n: int) -> np.ndarray:
        """(n_classes,) vector btilde[c | X] for object n at a single state.

        Computed in log space; the returned scale is the true product of the
        prior and every semantic likelihood, so entries underflow to 0 only
        for histories whose log products fall below float64 range.
        """
        tables = self.class_log_tables(np.asarray(x, dtype=float).reshape(1, -1))
        return np.exp(tables[0, n])

    def sample_hypothesis_given_state(
        self, samples: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Draw labels (ns, n_objects) from the per-object conditionals."""
        probs = self.class_posterior_given_state(samples)
        cdf = np.cumsum(probs, axis=2)
        u = rng.random(size=probs.shape[:2])
        labels = (u[:, :, None] > cdf).sum(axis=2)
        return np.minimum(labels, self.scenario.n_classes - 1).astype(np.int64)

    def log_unnormalized_joint(self, samples: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """log of b_g[X] * prod_n btilde[labels_n | X] (labels 0-based)."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
        tables = self.class_log_tables(samples)
        rows = np.arange(samples.shape[0])[:, None]
        objs = np.arange(self.scenario.n_objects)[None, :]
        picked = tables[rows, objs, labels].sum(axis=1)
        return self.geo.log_density(samples) + picked
