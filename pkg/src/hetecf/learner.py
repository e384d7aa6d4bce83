"""Two-phase alternating gradient descent on the unified objective.

Each outer iteration first descends the latent factors (U, V) with the
path weights frozen, then descends the path weights (alpha, beta, w) with
the factors frozen, projecting the weights onto [0, inf) after every step.
A candidate step is accepted only if it does not increase the objective;
five consecutive rejected steps halve the step size, and more than ten
halvings abort training as divergent.  The accepted-step objective trace
is therefore non-increasing by construction.

The default optimizer is deterministic full-batch descent.  A stochastic
mode (``optimizer="sgd"``) sweeps the observed entries one at a time in a
seeded shuffled order, folding the ridge into the per-entry updates and
applying the graph regularizers once per epoch; epochs go through the
same accept/reject guard.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import (
    FactorModel,
    LaplacianSet,
    NumericalError,
    PathWeights,
    effective_mu,
    logistic_and_slope,
    objective,
    rating_counts,
    trace_quad,
)

log = logging.getLogger(__name__)

REJECTIONS_PER_HALVING = 5
MAX_HALVINGS = 10
_EPS = 1e-12


class DivergenceError(NumericalError):
    """Objective kept increasing through the full step-size halving budget."""

    def __init__(self, message, j_trace):
        super().__init__(message)
        self.j_trace = list(j_trace)


@dataclass
class TrainState:
    """Mutable snapshot of a training run."""

    model: FactorModel
    weights: PathWeights
    hp: object
    step_size: float
    rng: np.random.Generator
    j_value: float = np.nan
    j_trace: list = field(default_factory=list)  # per outer iteration
    step_trace: list = field(default_factory=list)  # per accepted step
    outer_iters: int = 0
    factor_steps: int = 0
    weight_steps: int = 0
    halvings: int = 0
    converged: bool = False
    log_rows: list = field(default_factory=list)


def init(hp, shapes):
    """Seeded random starting point.

    ``shapes`` is (n, m, n_user_paths, n_item_paths, n_cross_paths).
    Factors start in uniform [-0.01, 0.01], weights in uniform [0, 1).
    """
    n, m, n_uu, n_ii, n_ui = shapes
    if hp.d < 1:
        raise ValueError("d must be a positive integer")
    if n < 1 or m < 1:
        raise ValueError("need at least one user and one item")
    rng = np.random.default_rng(hp.seed)
    U = rng.uniform(-0.01, 0.01, size=(n, hp.d))
    V = rng.uniform(-0.01, 0.01, size=(m, hp.d))
    alpha = rng.uniform(0.0, 1.0, size=n_uu)
    beta = rng.uniform(0.0, 1.0, size=n_ii)
    w = rng.uniform(0.0, 1.0, size=n_ui)
    return TrainState(
        model=FactorModel(U, V),
        weights=PathWeights(alpha, beta, w),
        hp=hp,
        step_size=hp.learn_rate,
        rng=rng,
    )


@dataclass
class TrainingData:
    """Preassembled sparse pieces shared by every gradient/objective call."""

    ratings: object
    rels: object
    laps: LaplacianSet
    rel_entries: list
    mu: float
    n_user: np.ndarray
    n_item: np.ndarray
    hp: object


def build_problem(ratings, rels, hp):
    from .model import _relation_entries

    laps = LaplacianSet.from_relation_set(rels)
    n_user, n_item = rating_counts(ratings)
    return TrainingData(
        ratings=ratings,
        rels=rels,
        laps=laps,
        rel_entries=_relation_entries(rels),
        mu=effective_mu(hp, ratings),
        n_user=n_user,
        n_item=n_item,
        hp=hp,
    )


def _objective(state, data, model=None, weights=None):
    return objective(
        state.model if model is None else model,
        state.weights if weights is None else weights,
        data.ratings,
        data.rels,
        data.hp,
        laps=data.laps,
        mu=data.mu,
    )


def _fit_gradient(U, V, rows, cols, vals, scale):
    """Gradient of scale * sum (f(U_i . V_j) - vals)^2 over the given entries."""
    z = np.einsum("ij,ij->i", U[rows], V[cols])
    p, slope = logistic_and_slope(z)
    g = (2.0 * scale) * slope * (p - vals)
    G = sp.csr_array((g, (rows, cols)), shape=(U.shape[0], V.shape[0]))
    return G @ V, G.T @ U


def grad_factors(state, data):
    """Analytic gradient of the objective with respect to U and V."""
    U, V = state.model.U, state.model.V
    r = data.ratings
    lam = data.hp.lam

    dU = 2.0 * lam * data.n_user[:, None] * U
    dV = 2.0 * lam * data.n_item[:, None] * V

    gu, gv = _fit_gradient(U, V, r.rows, r.cols, r.vals, 1.0)
    dU += gu
    dV += gv

    for a, L in zip(state.weights.alpha, data.laps.user):
        if a != 0.0:
            dU += (2.0 * a) * (L @ U)
    for b, L in zip(state.weights.beta, data.laps.item):
        if b != 0.0:
            dV += (2.0 * b) * (L @ V)

    for wk, (rr, cc, vv) in zip(state.weights.w, data.rel_entries):
        if wk != 0.0:
            gu, gv = _fit_gradient(U, V, rr, cc, vv, data.mu * wk)
            dU += gu
            dV += gv

    if not (np.all(np.isfinite(dU)) and np.all(np.isfinite(dV))):
        raise NumericalError("non-finite factor gradient")
    return dU, dV


def grad_weights(state, data):
    """Analytic gradient of the weight-phase objective with respect to
    (alpha, beta, w); the trace and residual terms are constants here."""
    U, V = state.model.U, state.model.V
    lam = data.hp.lam
    tr_u = np.array([trace_quad(L, U) for L in data.laps.user])
    tr_v = np.array([trace_quad(L, V) for L in data.laps.item])
    from .model import relation_residual_ssq

    ssq = relation_residual_ssq(state.model, data.rel_entries)
    dA = tr_u + 2.0 * lam * state.weights.alpha
    dB = tr_v + 2.0 * lam * state.weights.beta
    dW = data.mu * ssq + 2.0 * lam * state.weights.w
    for g in (dA, dB, dW):
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite weight gradient")
    return dA, dB, dW


def _rel_change(new, old):
    denom = np.linalg.norm(old) + _EPS
    return np.linalg.norm(new - old) / denom


def _descend(state, data, propose, apply_candidate, count_attr):
    """Shared accept/reject inner loop.

    ``propose`` maps the current state to (candidate, rel_change) where
    rel_change is the max per-block relative parameter change of the step;
    ``apply_candidate`` installs an accepted candidate on the state.
    """
    hp = data.hp
    if not np.isfinite(state.j_value):  # phase entered without a prior objective
        state.j_value = _objective(state, data)
    j_cur = state.j_value
    attempts = 0
    consecutive_bad = 0
    while attempts < hp.max_inner:
        candidate, rel = propose(state)
        j_new = _objective(state, data, *candidate)
        attempts += 1
        if j_new <= j_cur:
            apply_candidate(state, candidate)
            j_cur = j_new
            state.j_value = j_new
            state.step_trace.append(j_new)
            setattr(state, count_attr, getattr(state, count_attr) + 1)
            consecutive_bad = 0
            if rel < hp.inner_tol:
                break
        else:
            consecutive_bad += 1
            if consecutive_bad >= REJECTIONS_PER_HALVING:
                state.step_size *= 0.5
                state.halvings += 1
                consecutive_bad = 0
                log.debug(
                    "objective rose %d consecutive steps; step size now %g",
                    REJECTIONS_PER_HALVING,
                    state.step_size,
                )
                if state.halvings > MAX_HALVINGS:
                    raise DivergenceError(
                        f"objective still increasing after {MAX_HALVINGS} "
                        f"step-size halvings (J = {j_cur:.6g})",
                        state.step_trace,
                    )
    return state


def _propose_factors_batch(data):
    def propose(state):
        dU, dV = grad_factors(state, data)
        U = state.model.U - state.step_size * dU
        V = state.model.V - state.step_size * dV
        rel = max(_rel_change(U, state.model.U), _rel_change(V, state.model.V))
        return (FactorModel(U, V), None), rel

    return propose


def _propose_factors_sgd(data):
    """One epoch: per-entry fit updates (ridge folded in), then the graph
    regularizers applied once full-batch."""

    def propose(state):
        eta = state.step_size
        lam = data.hp.lam
        U = state.model.U.copy()
        V = state.model.V.copy()
        sweeps = [(data.ratings.rows, data.ratings.cols, data.ratings.vals, 1.0, lam)]
        for wk, (rr, cc, vv) in zip(state.weights.w, data.rel_entries):
            sweeps.append((rr, cc, vv, data.mu * wk, 0.0))
        for rr, cc, vv, scale, ridge in sweeps:
            if scale == 0.0 or rr.size == 0:
                continue
            order = state.rng.permutation(rr.size)
            for k in order:
                i, j, target = rr[k], cc[k], vv[k]
                ui, vj = U[i], V[j]
                z = float(ui @ vj)
                p = 1.0 / (1.0 + np.exp(-z)) if z >= 0 else np.exp(z) / (1.0 + np.exp(z))
                g = 2.0 * scale * p * (1.0 - p) * (p - target)
                U[i] = ui - eta * (g * vj + 2.0 * ridge * ui)
                V[j] = vj - eta * (g * ui + 2.0 * ridge * vj)
        for a, L in zip(state.weights.alpha, data.laps.user):
            if a != 0.0:
                U -= eta * (2.0 * a) * (L @ U)
        for b, L in zip(state.weights.beta, data.laps.item):
            if b != 0.0:
                V -= eta * (2.0 * b) * (L @ V)
        rel = max(_rel_change(U, state.model.U), _rel_change(V, state.model.V))
        return (FactorModel(U, V), None), rel

    return propose


def update_factors(state, data, optimizer="batch"):
    """Inner loop of the factor phase; returns the mutated state."""
    propose = (
        _propose_factors_sgd(data) if optimizer == "sgd" else _propose_factors_batch(data)
    )

    def apply_candidate(st, cand):
        st.model = cand[0]

    return _descend(state, data, propose, apply_candidate, "factor_steps")


def update_weights(state, data):
    """Inner loop of the weight phase: projected descent on (alpha, beta, w)."""
    if sum(state.weights.counts) == 0:
        return state
    U, V = state.model.U, state.model.V
    lam = data.hp.lam
    # constants of the phase (factors are frozen)
    tr_u = np.array([trace_quad(L, U) for L in data.laps.user])
    tr_v = np.array([trace_quad(L, V) for L in data.laps.item])
    from .model import relation_residual_ssq

    ssq = relation_residual_ssq(state.model, data.rel_entries)

    def propose(state):
        wts = state.weights
        eta = state.step_size
        alpha = np.maximum(wts.alpha - eta * (tr_u + 2.0 * lam * wts.alpha), 0.0)
        beta = np.maximum(wts.beta - eta * (tr_v + 2.0 * lam * wts.beta), 0.0)
        w = np.maximum(wts.w - eta * (data.mu * ssq + 2.0 * lam * wts.w), 0.0)
        rel = max(
            _rel_change(alpha, wts.alpha),
            _rel_change(beta, wts.beta),
            _rel_change(w, wts.w),
        )
        return (None, PathWeights(alpha, beta, w)), rel

    def apply_candidate(st, cand):
        st.weights = cand[1]

    return _descend(state, data, propose, apply_candidate, "weight_steps")


def train(ratings, rels, hp, optimizer="batch"):
    """Alternating two-phase descent; returns the final TrainState.

    The returned state carries the model, weights, per-outer-iteration
    objective trace (``j_trace``, first entry is the initial objective),
    the accepted-step trace, and one log row per outer iteration with
    the per-block relative changes and current step size.
    """
    if optimizer not in ("batch", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    data = build_problem(ratings, rels, hp)
    n_uu, n_ii, n_ui = rels.counts
    state = init(hp, (ratings.n, ratings.m, n_uu, n_ii, n_ui))
    state.j_value = _objective(state, data)
    state.j_trace.append(state.j_value)
    for outer in range(1, hp.max_outer + 1):
        before = (
            state.model.U.copy(),
            state.model.V.copy(),
            state.weights.copy(),
        )
        update_factors(state, data, optimizer=optimizer)
        update_weights(state, data)
        state.outer_iters = outer
        state.j_trace.append(state.j_value)
        rels_change = {
            "U": _rel_change(state.model.U, before[0]),
            "V": _rel_change(state.model.V, before[1]),
            "alpha": _rel_change(state.weights.alpha, before[2].alpha),
            "beta": _rel_change(state.weights.beta, before[2].beta),
            "w": _rel_change(state.weights.w, before[2].w),
        }
        state.log_rows.append(
            {
                "iteration": outer,
                "objective": state.j_value,
                **{f"rel_change_{k}": v for k, v in rels_change.items()},
                "step_size": state.step_size,
            }
        )
        if max(rels_change.values()) < hp.outer_tol:
            state.converged = True
            break
    return state


def write_training_log(path, state):
    """CSV of the per-outer-iteration log rows."""
    import csv

    fields = [
        "iteration",
        "objective",
        "rel_change_U",
        "rel_change_V",
        "rel_change_alpha",
        "rel_change_beta",
        "rel_change_w",
        "step_size",
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in state.log_rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in fields})
