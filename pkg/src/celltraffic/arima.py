"""ARIMA(p, d, q) built on least squares.

Coefficients are estimated with the two-stage Hannan-Rissanen procedure:
a long autoregression on the differenced series supplies residual proxies,
then one OLS regression on ``p`` lags of the differenced series and ``q``
lagged proxies gives the AR and MA coefficients. A constant is estimated
only when ``d == 0``; with ``d >= 1`` the differenced series is modelled
without drift, so ARIMA(0,1,0) is exactly the persistence forecaster.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateFitError, SearchFailedError
from .metrics import rmse

MAX_D = 2
LONG_AR_MAX = 20


@dataclass(frozen=True, order=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        for name in ("p", "d", "q"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v}")
            object.__setattr__(self, name, int(v))
        if self.d > MAX_D:
            raise ValueError(f"d must be <= {MAX_D}, got {self.d}")

    @classmethod
    def coerce(cls, value) -> "ArimaOrder":
        if isinstance(value, ArimaOrder):
            return value
        if isinstance(value, dict):
            return cls(value["p"], value["d"], value["q"])
        return cls(*value)

    def __str__(self):
        return f"ARIMA({self.p},{self.d},{self.q})"


def default_grid(p_max=8, d_max=2, q_max=2):
    return [
        ArimaOrder(p, d, q)
        for p, d, q in itertools.product(range(p_max + 1), range(d_max + 1), range(q_max + 1))
    ]


def difference(series, d: int) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if d < 0:
        raise ValueError("d must be >= 0")
    if x.size <= d:
        raise ValueError(f"series of length {x.size} is too short to difference {d} times")
    for _ in range(d):
        x = np.diff(x)
    return x


def integrate(diffs, heads, d: int) -> np.ndarray:
    """Undo ``d`` differencings given the first ``d`` values of the level series.

    The result has ``len(diffs) + d`` values and starts with ``heads``.
    """
    w = np.asarray(diffs, dtype=np.float64).reshape(-1)
    heads = np.asarray(heads, dtype=np.float64).reshape(-1)
    if heads.size != d:
        raise ValueError(f"expected {d} head values, got {heads.size}")
    for k in reversed(range(d)):
        start = heads[0] if k == 0 else difference(heads, k)[0]
        w = np.concatenate(([start], start + np.cumsum(w)))
    return w


@dataclass
class ArFit:
    coeffs: np.ndarray
    intercept: float
    sigma2: float
    residuals: np.ndarray


def _lagged(y, lags, start):
    # column j holds y[t - j - 1] for t in [start, len(y))
    n = y.size
    return np.column_stack([y[start - j - 1 : n - j - 1] for j in range(lags)]) if lags else (
        np.empty((n - start, 0))
    )


def _ols(design, target, what):
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateFitError(
            f"{what}: singular design (rank {rank} < {design.shape[1]} columns); "
            "the series is constant or perfectly collinear"
        )
    resid = target - design @ coef
    return coef, resid


def fit_ar(series, p: int, intercept: bool = True) -> ArFit:
    """Least-squares AR(p): regress ``x_t`` on a constant and ``p`` lags."""
    y = np.asarray(series, dtype=np.float64).reshape(-1)
    if p < 0:
        raise ValueError("p must be >= 0")
    if y.size < max(10 * p, 1):
        raise ValueError(f"AR({p}) needs at least {max(10 * p, 1)} points, got {y.size}")
    cols = [_lagged(y, p, p)]
    if intercept:
        cols.insert(0, np.ones((y.size - p, 1)))
    design = np.hstack(cols)
    if design.shape[1] == 0:
        resid = y.copy()
        return ArFit(np.zeros(0), 0.0, float(np.mean(resid**2)), resid)
    coef, resid = _ols(design, y[p:], f"AR({p})")
    c = float(coef[0]) if intercept else 0.0
    phi = coef[1:] if intercept else coef
    return ArFit(np.asarray(phi, dtype=np.float64), c, float(np.mean(resid**2)), resid)


@dataclass
class ArimaModel:
    order: ArimaOrder
    ar_coeffs: np.ndarray
    ma_coeffs: np.ndarray
    intercept: float = 0.0
    sigma2: float = 0.0
    tail_state: dict = field(default_factory=dict)

    def __post_init__(self):
        self.order = ArimaOrder.coerce(self.order)
        self.ar_coeffs = np.asarray(self.ar_coeffs, dtype=np.float64).reshape(-1)
        self.ma_coeffs = np.asarray(self.ma_coeffs, dtype=np.float64).reshape(-1)
        if self.ar_coeffs.size != self.order.p or self.ma_coeffs.size != self.order.q:
            raise ValueError("coefficient vector lengths must match the order")

    @property
    def min_history(self) -> int:
        return max(self.order.p, self.order.q) + self.order.d

    def to_dict(self) -> dict:
        return {
            "order": {"p": self.order.p, "d": self.order.d, "q": self.order.q},
            "ar_coeffs": self.ar_coeffs.tolist(),
            "ma_coeffs": self.ma_coeffs.tolist(),
            "intercept": float(self.intercept),
            "sigma2": float(self.sigma2),
            "tail_state": {k: list(map(float, v)) for k, v in self.tail_state.items()},
        }

    @classmethod
    def from_dict(cls, doc) -> "ArimaModel":
        return cls(
            ArimaOrder.coerce(doc["order"]),
            doc["ar_coeffs"],
            doc["ma_coeffs"],
            doc["intercept"],
            doc["sigma2"],
            {k: list(v) for k, v in doc.get("tail_state", {}).items()},
        )


def innovations(model: ArimaModel, w) -> np.ndarray:
    """One-step residuals of the differenced series ``w`` under ``model``.

    The recursion starts at ``t = p`` with zero pre-sample shocks; entries
    before that are zero.
    """
    w = np.asarray(w, dtype=np.float64)
    p = model.order.p
    e = np.zeros_like(w)
    if w.size <= p:
        return e
    u = w[p:] - model.intercept
    if p:
        u = u - _lagged(w, p, p) @ model.ar_coeffs
    if model.order.q:
        u = lfilter([1.0], np.concatenate(([1.0], model.ma_coeffs)), u)
    e[p:] = u
    return e


def _check_invertible(beta):
    if beta.size == 0:
        return
    roots = np.roots(np.concatenate((beta[::-1], [1.0])))
    if roots.size and np.min(np.abs(roots)) <= 1.0 + 1e-8:
        raise DegenerateFitError(f"MA part is not invertible (coefficients {beta.tolist()})")


def fit_arima(series, order) -> ArimaModel:
    """Hannan-Rissanen fit of ARIMA(p, d, q)."""
    order = ArimaOrder.coerce(order)
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    p, d, q = order.p, order.d, order.q
    need = 10 * (p + q) + d
    if x.size < max(need, d + 1):
        raise ValueError(f"{order} needs at least {max(need, d + 1)} points, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    w = difference(x, d)
    use_const = d == 0
    if q == 0:
        ar = fit_ar(w, p, intercept=use_const)
        phi, theta, c, sigma2 = ar.coeffs, np.zeros(0), ar.intercept, ar.sigma2
    else:
        k = max(1, min(LONG_AR_MAX, w.size // 10))
        long_ar = fit_ar(w, k, intercept=True)
        eps = np.zeros_like(w)
        eps[k:] = long_ar.residuals
        t0 = max(p, k + q)
        if w.size - t0 <= p + q + use_const:
            raise ValueError(f"{order}: too few points left for the second stage")
        cols = [_lagged(w, p, t0), _lagged(eps, q, t0)]
        if use_const:
            cols.insert(0, np.ones((w.size - t0, 1)))
        coef, resid = _ols(np.hstack(cols), w[t0:], str(order))
        off = 1 if use_const else 0
        c = float(coef[0]) if use_const else 0.0
        phi, theta = coef[off : off + p], coef[off + p :]
        sigma2 = float(np.mean(resid**2))
        _check_invertible(theta)
    model = ArimaModel(order, phi, theta, c, sigma2)
    model.tail_state = _tail_state(model, x)
    return model


def _tail_state(model, history):
    w = difference(history, model.order.d)
    e = innovations(model, w)
    p, q, d = model.order.p, model.order.q, model.order.d
    return {
        "diffs": w[w.size - p :].tolist() if p else [],
        "residuals": e[e.size - q :].tolist() if q else [],
        "levels": np.asarray(history[len(history) - d :], dtype=np.float64).tolist() if d else [],
    }


def _iterate(model, w_tail, e_tail, heads, n):
    p, q = model.order.p, model.order.q
    wl = list(w_tail)
    el = list(e_tail)
    alpha, beta = model.ar_coeffs, model.ma_coeffs
    out = np.empty(n)
    for i in range(n):
        v = model.intercept
        for j in range(p):
            v += alpha[j] * wl[-1 - j]
        for j in range(q):
            v += beta[j] * el[-1 - j]
        out[i] = v
        wl.append(v)
        el.append(0.0)
    return integrate(out, heads, model.order.d)[model.order.d :]


def forecast(model: ArimaModel, history=None, n: int = 1) -> np.ndarray:
    """Iterated ``n``-step forecast continuing ``history``.

    Future shocks are zero and predicted differences feed back as lags.
    With ``history=None`` the model's stored training tail is continued.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    p, d, q = model.order.p, model.order.d, model.order.q
    if history is None:
        st = model.tail_state
        if len(st.get("diffs", ())) < p or len(st.get("residuals", ())) < q or len(
            st.get("levels", ())
        ) < d:
            raise ValueError("model carries no tail state; pass history explicitly")
        return _iterate(model, st["diffs"], st["residuals"], st["levels"], n)
    h = np.asarray(history, dtype=np.float64).reshape(-1)
    if h.size < max(model.min_history, 1):
        raise ValueError(
            f"{model.order} needs at least {max(model.min_history, 1)} history points, got {h.size}"
        )
    w = difference(h, d)
    e = innovations(model, w)
    return _iterate(
        model, w[w.size - p :] if p else [], e[e.size - q :] if q else [], h[h.size - d :], n
    )


def one_step_forecasts(model: ArimaModel, series, start: int) -> np.ndarray:
    """Rolling one-step predictions of ``series[start:]``, each using the true past."""
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    d, p = model.order.d, model.order.p
    if start < model.min_history or start >= x.size:
        raise ValueError(f"start must lie in [{model.min_history}, {x.size})")
    e = innovations(model, difference(x, d))
    # level error equals the differenced-series error
    return x[start:] - e[start - d :]


def persistence_forecast(history, n: int = 1) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64).reshape(-1)
    if h.size == 0:
        raise ValueError("persistence needs a non-empty history")
    return np.full(n, h[-1])


def _evaluate(order, train, validate):
    try:
        model = fit_arima(train, order)
        series = np.concatenate([train, validate])
        pred = one_step_forecasts(model, series, train.size)
        score = rmse(pred, validate)
        if not math.isfinite(score):
            return math.inf, "non-finite validation error"
        return score, None
    except (ValueError, np.linalg.LinAlgError) as exc:
        return math.inf, str(exc)


def grid_search(train, validate, grid=None, n_jobs: int = 1):
    """Pick the order with the lowest one-step validation RMSE.

    Returns ``(best_order, table)`` with ``table`` a list of
    ``(order, rmse)`` sorted by order; failed fits score ``inf``. Ties go to
    the smaller ``p + d + q``, then to the lexicographically smaller order.
    """
    train = np.asarray(train, dtype=np.float64).reshape(-1)
    validate = np.asarray(validate, dtype=np.float64).reshape(-1)
    orders = sorted({ArimaOrder.coerce(o) for o in (grid if grid is not None else default_grid())})
    if not orders:
        raise ValueError("grid is empty")
    if validate.size == 0:
        raise ValueError("validation span is empty")
    if n_jobs == 1:
        results = [_evaluate(o, train, validate) for o in orders]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            results = list(pool.map(lambda o: _evaluate(o, train, validate), orders))
    table = [(o, s) for o, (s, _) in zip(orders, results)]
    finite = [(s, o.p + o.d + o.q, (o.p, o.d, o.q), o) for o, s in table if math.isfinite(s)]
    if not finite:
        raise SearchFailedError({str(o): cause for o, (_, cause) in zip(orders, results)})
    best = min(finite, key=lambda r: r[:3])[3]
    return best, table


def write_grid_csv(table, sink):
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["p", "d", "q", "rmse"])
    for o, s in table:
        writer.writerow([o.p, o.d, o.q, repr(float(s)) if math.isfinite(s) else "inf"])


class ArimaForecaster(BaseEstimator):
    """Fixed-order ARIMA with a ``fit(y)`` / ``predict(n)`` interface."""

    def __init__(self, order=(1, 0, 0)):
        self.order = order

    def fit(self, y, X=None):
        self.model_ = fit_arima(y, self.order)
        return self

    def predict(self, n=1, history=None):
        check_is_fitted(self, "model_")
        return forecast(self.model_, history, n)


class ArimaGridSearch(BaseEstimator):
    """Grid-searched ARIMA: the tail of ``y`` validates, then the winner is refit on all of ``y``."""

    def __init__(self, grid=None, validation_fraction=0.2, n_jobs=1):
        self.grid = grid
        self.validation_fraction = validation_fraction
        self.n_jobs = n_jobs

    def fit(self, y, X=None):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        cut = int(round(y.size * (1 - self.validation_fraction)))
        self.best_order_, self.table_ = grid_search(y[:cut], y[cut:], self.grid, self.n_jobs)
        self.model_ = fit_arima(y, self.best_order_)
        return self

    def predict(self, n=1, history=None):
        check_is_fitted(self, "model_")
        return forecast(self.model_, history, n)


class PersistenceForecaster(BaseEstimator):
    """Repeat the last observation; the classic "AR(1)" baseline."""

    def fit(self, y, X=None):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size == 0:
            raise ValueError("persistence needs a non-empty history")
        self.last_ = float(y[-1])
        return self

    def predict(self, n=1, history=None):
        if history is not None:
            return persistence_forecast(history, n)
        check_is_fitted(self, "last_")
        return np.full(n, self.last_)


def forecast_origins(model: ArimaModel, series, origins, n: int) -> np.ndarray:
    """``n``-step forecasts from several origins of one series.

    Row ``i`` forecasts ``series[origins[i] : origins[i] + n]`` from
    ``series[:origins[i]]``; shocks are filtered once over the whole series,
    which is causal so no origin sees its own future.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    p, d, q = model.order.p, model.order.d, model.order.q
    w = difference(x, d)
    e = innovations(model, w)
    out = np.empty((len(origins), n))
    for i, o in enumerate(origins):
        if o < max(model.min_history, 1) or o > x.size:
            raise ValueError(f"origin {o} outside [{max(model.min_history, 1)}, {x.size}]")
        k = o - d
        out[i] = _iterate(model, w[k - p : k] if p else [], e[k - q : k] if q else [], x[o - d : o], n)
    return out
