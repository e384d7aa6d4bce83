"""Logistic-bounded matrix factorization with graph and relation regularizers.

The training objective combines five terms:

    J =   sum over observed (i, j) of (f(U_i . V_j) - R_ij)^2
        + sum_k alpha_k * Tr(U^T L_uu^k U)
        + sum_k beta_k  * Tr(V^T L_ii^k V)
        + mu * sum_k w_k * sum over entries of the k-th user-item relation
              of (f(U_i . V_j) - Rk_ij)^2
        + lam * (sum_i c_i ||U_i||^2 + sum_j c_j ||V_j||^2
                 + ||alpha||^2 + ||beta||^2 + ||w||^2)

where f is the logistic function, L = D - S is the Laplacian of a
symmetric nonnegative similarity matrix, and the ridge weights c are the
per-user / per-item observed-rating counts (cold nodes fall back to 1).
All rating-fit sums run over explicitly observed entries only.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field, asdict, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

MODEL_FORMAT_VERSION = 1


class NumericalError(RuntimeError):
    """A non-finite value surfaced during objective or gradient evaluation."""


def logistic(x):
    """Stable logistic 1 / (1 + exp(-x)); saturates cleanly for |x| ~ 500."""
    return expit(np.asarray(x, dtype=np.float64))


def logistic_and_slope(x):
    """Return (f(x), f'(x)) with f'(x) = f(x) * (1 - f(x))."""
    p = logistic(x)
    return p, p * (1.0 - p)


@dataclass
class FactorModel:
    """Latent factors: U is (n, d) for users, V is (m, d) for items."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.U.ndim != 2 or self.V.ndim != 2:
            raise ValueError("U and V must be 2-d")
        if self.U.shape[1] != self.V.shape[1]:
            raise ValueError(
                f"factor dimension mismatch: U has {self.U.shape[1]}, "
                f"V has {self.V.shape[1]}"
            )

    @property
    def n(self):
        return self.U.shape[0]

    @property
    def m(self):
        return self.V.shape[0]

    @property
    def d(self):
        return self.U.shape[1]

    def predict(self, i, j):
        """Predicted rating f(U_i . V_j) for one (user, item) pair."""
        if not (0 <= i < self.n and 0 <= j < self.m):
            raise IndexError(f"pair ({i}, {j}) outside ({self.n}, {self.m})")
        return float(logistic(self.U[i] @ self.V[j]))

    def predict_pairs(self, rows, cols):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        z = np.einsum("ij,ij->i", self.U[rows], self.V[cols])
        return logistic(z)

    def predict_full(self):
        return logistic(self.U @ self.V.T)

    def copy(self):
        return FactorModel(self.U.copy(), self.V.copy())


@dataclass
class PathWeights:
    """Nonnegative per-path weights: alpha (user-user), beta (item-item), w (user-item)."""

    alpha: np.ndarray
    beta: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "beta", "w"):
            v = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if v.size and (not np.all(np.isfinite(v)) or v.min() < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
            setattr(self, name, v)

    @property
    def counts(self):
        return (self.alpha.size, self.beta.size, self.w.size)

    def copy(self):
        return PathWeights(self.alpha.copy(), self.beta.copy(), self.w.copy())


@dataclass
class Hyperparams:
    """Training hyperparameters; ``mu=None`` selects the density rule."""

    d: int = 10
    lam: float = 0.001
    mu: float = None
    learn_rate: float = 0.1
    inner_tol: float = 1e-4
    outer_tol: float = 1e-4
    max_inner: int = 100
    max_outer: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be a positive integer")
        if not (self.lam > 0):
            raise ValueError("lam must be positive")
        if self.mu is not None and not (0 <= self.mu):
            raise ValueError("mu must be nonnegative")
        if not (0 < self.learn_rate < 1):
            raise ValueError("learn_rate must lie in (0, 1)")
        for name in ("inner_tol", "outer_tol"):
            v = float(getattr(self, name))
            # inf is allowed and means "stop after the first accepted step"
            if not ((0 < v < 1) or np.isposinf(v)):
                raise ValueError(f"{name} must lie in (0, 1) or be inf")
        if self.max_inner < 1 or self.max_outer < 0:
            raise ValueError("max_inner >= 1 and max_outer >= 0 required")

    def with_overrides(self, **kwargs):
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def laplacian(similarity, tol=1e-9):
    """Graph Laplacian L = D - S with D(i,i) = row sum of S.

    Accepts a SimilarityMatrix or a raw sparse/dense symmetric matrix;
    asymmetry beyond ``tol`` (max absolute entry of S - S^T) is an error.
    """
    S = getattr(similarity, "matrix", similarity)
    S = sp.csr_array(S, dtype=np.float64)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {S.shape}")
    gap = S - S.T
    if gap.nnz and np.max(np.abs(gap.data)) > tol:
        raise ValueError(
            f"similarity matrix asymmetric beyond {tol} "
            f"(max |S - S^T| = {np.max(np.abs(gap.data)):.3e})"
        )
    deg = np.asarray(S.sum(axis=1)).ravel()
    return sp.csr_array(sp.diags_array(deg, format="csr") - S)


@dataclass
class LaplacianSet:
    """Precomputed Laplacians for the user-user and item-item path groups."""

    user: list = field(default_factory=list)
    item: list = field(default_factory=list)

    @classmethod
    def from_relation_set(cls, rels):
        return cls(
            [laplacian(s) for s in rels.user_user],
            [laplacian(s) for s in rels.item_item],
        )


def trace_quad(L, X):
    """Tr(X^T L X) for sparse L; equals half the similarity-weighted
    squared-difference sum when L is a Laplacian."""
    # overflow surfaces as a checked NumericalError downstream, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sum(X * (L @ X)))


def mu_from_density(ratings):
    """Density rule: mu = |observed| / (n * m).

    Reported full-scale reference points — roughly 0.7 for a large
    bibliographic network and 0.4 for a large event-RSVP network — come
    from private extractions of those datasets and are recorded here as
    context only; nothing at this repository's scale reproduces them.
    Pass ``mu`` explicitly in :class:`Hyperparams` to override the rule.
    """
    if ratings.n * ratings.m == 0:
        raise ValueError("empty matrix dimensions")
    return ratings.nnz / (ratings.n * ratings.m)


def effective_mu(hp, ratings):
    return mu_from_density(ratings) if hp.mu is None else hp.mu


def rating_counts(ratings):
    """Per-user and per-item observed counts; cold nodes fall back to 1."""
    n_user = np.bincount(ratings.rows, minlength=ratings.n).astype(np.float64)
    n_item = np.bincount(ratings.cols, minlength=ratings.m).astype(np.float64)
    n_user[n_user == 0] = 1.0
    n_item[n_item == 0] = 1.0
    return n_user, n_item


def _check_term(value, name):
    if not np.isfinite(value):
        raise NumericalError(f"objective term {name!r} is non-finite ({value!r})")
    return float(value)


def _relation_entries(rels):
    """COO triples of each user-item relation matrix (values clipped lazily
    nowhere: they are PathSim values, already in [0, 1])."""
    out = []
    for sim in rels.user_item:
        coo = sp.coo_array(sim.matrix)
        out.append((coo.row.astype(np.int64), coo.col.astype(np.int64),
                    coo.data.astype(np.float64)))
    return out


def relation_residual_ssq(model, rel_entries):
    """Per-path sum over its observed entries of (f(U_i . V_j) - Rk_ij)^2."""
    out = np.zeros(len(rel_entries))
    for k, (rr, cc, vv) in enumerate(rel_entries):
        p = model.predict_pairs(rr, cc)
        out[k] = np.sum((p - vv) ** 2)
    return out


def objective(model, weights, ratings, rels, hp, laps=None, mu=None):
    """The full training objective J (see module docstring)."""
    if laps is None:
        laps = LaplacianSet.from_relation_set(rels)
    if mu is None:
        mu = effective_mu(hp, ratings)
    if weights.counts != (len(laps.user), len(laps.item), len(rels.user_item)):
        raise ValueError(
            f"weight counts {weights.counts} do not match relation set "
            f"({len(laps.user)}, {len(laps.item)}, {len(rels.user_item)})"
        )
    p = model.predict_pairs(ratings.rows, ratings.cols)
    fit = _check_term(np.sum((p - ratings.vals) ** 2), "rating fit")

    reg_u = _check_term(
        sum(a * trace_quad(L, model.U) for a, L in zip(weights.alpha, laps.user)),
        "user graph regularizer",
    )
    reg_v = _check_term(
        sum(b * trace_quad(L, model.V) for b, L in zip(weights.beta, laps.item)),
        "item graph regularizer",
    )

    ssq = relation_residual_ssq(model, _relation_entries(rels))
    rel_fit = _check_term(mu * float(weights.w @ ssq), "relation fit")

    n_user, n_item = rating_counts(ratings)
    ridge = _check_term(
        hp.lam
        * (
            float(n_user @ np.sum(model.U**2, axis=1))
            + float(n_item @ np.sum(model.V**2, axis=1))
            + float(weights.alpha @ weights.alpha)
            + float(weights.beta @ weights.beta)
            + float(weights.w @ weights.w)
        ),
        "ridge",
    )
    return fit + reg_u + reg_v + rel_fit + ridge


def weight_objective(model, weights, rels, hp, laps=None, mu=0.0):
    """The weight-phase objective: only the terms that depend on the path
    weights (graph regularizers, relation fit, and the weight ridge)."""
    if laps is None:
        laps = LaplacianSet.from_relation_set(rels)
    tr_u = np.array([trace_quad(L, model.U) for L in laps.user])
    tr_v = np.array([trace_quad(L, model.V) for L in laps.item])
    ssq = relation_residual_ssq(model, _relation_entries(rels))
    value = (
        float(weights.alpha @ tr_u)
        + float(weights.beta @ tr_v)
        + mu * float(weights.w @ ssq)
        + hp.lam
        * (
            float(weights.alpha @ weights.alpha)
            + float(weights.beta @ weights.beta)
            + float(weights.w @ weights.w)
        )
    )
    return _check_term(value, "weight-phase objective")


def _atomic_write_bytes(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, model, weights, hp, graph_hash=""):
    """Write the factor model to an .npz with a JSON header; bit-exact round trip."""
    import io

    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "n": model.n,
        "m": model.m,
        "d": model.d,
        "n_user_paths": int(weights.alpha.size),
        "n_item_paths": int(weights.beta.size),
        "n_cross_paths": int(weights.w.size),
        "hyperparams": asdict(hp),
        "graph_hash": graph_hash,
    }
    buf = io.BytesIO()
    np.savez(
        buf,
        header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        U=model.U,
        V=model.V,
        alpha=weights.alpha,
        beta=weights.beta,
        w=weights.w,
    )
    _atomic_write_bytes(path, buf.getvalue())


def load_model(path):
    """Read a model file; returns (FactorModel, PathWeights, header dict)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(
                f"unsupported model format version {header.get('format_version')!r}"
            )
        model = FactorModel(data["U"], data["V"])
        weights = PathWeights(data["alpha"], data["beta"], data["w"])
    expect = (
        header["n_user_paths"],
        header["n_item_paths"],
        header["n_cross_paths"],
    )
    if (model.n, model.m, model.d) != (header["n"], header["m"], header["d"]):
        raise ValueError("model file header disagrees with stored factors")
    if weights.counts != expect:
        raise ValueError("model file header disagrees with stored weights")
    return model, weights, header
