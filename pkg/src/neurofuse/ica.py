"""FastICA decomposition, artifact scoring of components and back-projection."""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dsp
from ._validation import check_picks, check_recording
from .datamodel import EegRecording, EventMarkers, MarkerKind
from .errors import DataError, NonConvergenceWarning, RankDeficient, UnknownComponent

__all__ = [
    "IcaModel",
    "Verdict",
    "ComponentScore",
    "whiten",
    "fastica",
    "fit_ica",
    "score_components",
    "remove_components",
    "ICACleaner",
]

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class IcaModel:
    """Whitening plus rotation for a fixed set of channels.

    ``sources = unmixing @ whitening @ (x[picks] - mean)`` and the
    reconstruction is ``mean + mixing @ sources``.
    """

    whitening: np.ndarray  # k x c
    dewhitening: np.ndarray  # c x k
    unmixing: np.ndarray  # k x k, orthonormal rows in whitened space
    mean: np.ndarray  # c
    n_iter: np.ndarray  # per component
    converged: np.ndarray
    picks: tuple = ()
    channel_labels: tuple = ()

    @property
    def n_components(self) -> int:
        return self.unmixing.shape[0]

    @property
    def mixing(self) -> np.ndarray:
        """Channels x components; the inverse of the unmixing on the retained subspace."""
        return self.dewhitening @ self.unmixing.T

    @property
    def filters(self) -> np.ndarray:
        """Components x channels spatial filters."""
        return self.unmixing @ self.whitening

    def sources(self, data) -> np.ndarray:
        x = self._channels(data)
        return self.filters @ (x - self.mean[:, None])

    def _channels(self, data) -> np.ndarray:
        if isinstance(data, EegRecording):
            data = data.data[list(self.picks)] if self.picks else data.data
        x = np.asarray(data, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.mean.size:
            raise DataError(f"expected {self.mean.size} channels, got shape {x.shape}")
        return x

    def to_json(self) -> str:
        def mat(a):
            a = np.asarray(a, dtype=float)
            return {"shape": list(a.shape), "data": a.ravel().tolist()}

        doc = {
            "schema_version": 1,
            "n_components": self.n_components,
            "whitening": mat(self.whitening),
            "dewhitening": mat(self.dewhitening),
            "unmixing": mat(self.unmixing),
            "mixing": mat(self.mixing),
            "mean": mat(self.mean),
            "n_iter": [int(i) for i in self.n_iter],
            "converged": [bool(c) for c in self.converged],
            "picks": [int(p) for p in self.picks],
            "channel_labels": list(self.channel_labels),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IcaModel":
        try:
            doc = json.loads(text)

            def mat(d):
                return np.asarray(d["data"], dtype=float).reshape(d["shape"])

            return cls(
                whitening=mat(doc["whitening"]),
                dewhitening=mat(doc["dewhitening"]),
                unmixing=mat(doc["unmixing"]),
                mean=mat(doc["mean"]),
                n_iter=np.asarray(doc["n_iter"], dtype=np.int64),
                converged=np.asarray(doc["converged"], dtype=bool),
                picks=tuple(doc.get("picks", ())),
                channel_labels=tuple(doc.get("channel_labels", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed ICA model document: {exc}") from None


class Verdict(enum.Enum):
    KEEP = "Keep"
    REJECT = "Reject"


@dataclass(frozen=True)
class ComponentScore:
    index: int
    bcg_score: float
    gradient_score: float
    verdict: Verdict


def _as_matrix(rec, picks=None, exclude=()):
    if isinstance(rec, EegRecording):
        idx = check_picks(rec, picks, exclude)
        idx = [i for i in idx if i not in rec.bad_channels]
        return rec.data[idx], tuple(idx), tuple(rec.channel_labels[i] for i in idx)
    x = np.asarray(rec, dtype=float)
    if x.ndim != 2:
        raise DataError("expected a channels x samples array")
    return x, (), ()


def whiten(rec, n_components: int | None = None, picks=None, exclude=()):
    """Project onto the leading eigenvectors of the channel covariance, scaled to unit variance.

    Returns ``(z, model)`` where ``z`` is components x samples and
    ``model.unmixing`` is the identity.
    """
    x, idx, labels = _as_matrix(rec, picks, exclude)
    c, n = x.shape
    if n < 2:
        raise DataError("need at least two samples to estimate a covariance")
    k = c if n_components is None else int(n_components)
    if k < 1:
        raise RankDeficient("n_components must be at least 1")
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    cov = xc @ xc.T / n
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    rank = int(np.sum(vals > RANK_TOL * max(vals[0], 0.0))) if vals[0] > 0 else 0
    if k > rank:
        raise RankDeficient(f"{k} components requested but covariance rank is {rank}")
    vals, vecs = vals[:k], vecs[:, :k]
    # fix eigenvector signs so the decomposition is reproducible
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(k)])
    vecs = vecs * signs
    W = vecs.T / np.sqrt(vals)[:, None]
    D = vecs * np.sqrt(vals)[None, :]
    model = IcaModel(W, D, np.eye(k), mean, np.zeros(k, np.int64), np.ones(k, bool), idx, labels)
    return W @ xc, model


def _orthonormal_init(k: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def fastica(
    whitened,
    model: IcaModel | None = None,
    max_iter: int = 200,
    tol: float = 1e-4,
    random_state=0,
) -> IcaModel:
    """Deflationary FastICA with the tanh contrast on whitened data.

    Each unit is iterated until ``|<w_new, w_old>| > 1 - tol``; units that hit
    ``max_iter`` are flagged in ``converged`` and a
    :class:`NonConvergenceWarning` is issued. Components are returned in
    decreasing order of back-projected variance.
    """
    z = np.asarray(whitened, dtype=float)
    k, n = z.shape
    if model is None:
        model = IcaModel(np.eye(k), np.eye(k), np.eye(k), np.zeros(k),
                         np.zeros(k, np.int64), np.ones(k, bool))
    if model.whitening.shape[0] != k:
        raise DataError("whitened data does not match the model's component count")
    init = _orthonormal_init(k, random_state)
    W = np.zeros((k, k))
    iters = np.zeros(k, np.int64)
    ok = np.zeros(k, bool)
    for p in range(k):
        w = init[p] - W[:p].T @ (W[:p] @ init[p])
        w /= np.linalg.norm(w)
        for it in range(1, max_iter + 1):
            wx = w @ z
            g = np.tanh(wx)
            w_new = (z @ g) / n - np.mean(1.0 - g * g) * w
            w_new -= W[:p].T @ (W[:p] @ w_new)
            norm = np.linalg.norm(w_new)
            if norm == 0:
                break
            w_new /= norm
            done = abs(float(w_new @ w)) > 1.0 - tol
            w = w_new
            if done:
                ok[p] = True
                break
        iters[p] = it
        W[p] = w
    if not ok.all():
        warnings.warn(
            f"{int((~ok).sum())} of {k} components did not converge in {max_iter} iterations",
            NonConvergenceWarning, stacklevel=2,
        )
    # order by back-projected variance (sources have unit variance)
    mixing = model.dewhitening @ W.T
    order = np.argsort(-(mixing * mixing).sum(axis=0), kind="stable")
    W = W[order]
    # sign convention: largest mixing weight of each component positive
    mix = model.dewhitening @ W.T
    signs = np.sign(mix[np.argmax(np.abs(mix), axis=0), np.arange(k)])
    signs[signs == 0] = 1.0
    W = W * signs[:, None]
    return IcaModel(model.whitening, model.dewhitening, W, model.mean, iters[order], ok[order],
                    model.picks, model.channel_labels)


def default_n_components(rec: EegRecording, exclude=("ECG",)) -> int:
    n_good = len([i for i in check_picks(rec, None, exclude) if i not in rec.bad_channels])
    return max(1, min(n_good - 1, 30))


def fit_ica(rec, n_components: int | None = None, exclude=("ECG",), max_iter: int = 200,
            tol: float = 1e-4, random_state=0) -> IcaModel:
    """Whiten then run :func:`fastica`; bad channels and ``exclude`` are left out."""
    if n_components is None and isinstance(rec, EegRecording):
        n_components = default_n_components(rec, exclude)
    z, model = whiten(rec, n_components, exclude=exclude)
    return fastica(z, model, max_iter=max_iter, tol=tol, random_state=random_state)


def _gaussian_train(n: int, events, rate: float, sigma_s: float) -> np.ndarray:
    train = np.zeros(n)
    ev = np.asarray(events, dtype=np.int64)
    ev = ev[(ev >= 0) & (ev < n)]
    np.add.at(train, ev, 1.0)
    sigma = sigma_s * rate
    half = int(math.ceil(4 * sigma))
    kernel = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    return np.convolve(train, kernel, mode="same")


def _max_lagged_corr(a: np.ndarray, b: np.ndarray, lags) -> float:
    """Max |Pearson r| between ``a[t]`` and ``b[t - lag]`` over ``lags``."""
    best = 0.0
    n = a.size
    for lag in lags:
        if lag >= 0:
            x, y = a[lag:], b[: n - lag]
        else:
            x, y = a[: n + lag], b[-lag:]
        x = x - x.mean()
        y = y - y.mean()
        den = math.sqrt(float(x @ x) * float(y @ y))
        if den > 0:
            best = max(best, abs(float(x @ y)) / den)
    return min(best, 1.0)


def bcg_score(component, r_peaks, rate_hz: float, smooth_s: float = 0.1,
              max_lag_s: float = 0.6) -> float:
    """Max normalized cross-correlation of the envelope with an R-locked pulse train."""
    s = np.asarray(component, dtype=float)
    if s.var() <= 0 or len(r_peaks) == 0:
        return 0.0
    env = dsp.analytic_envelope(s - s.mean())
    train = _gaussian_train(s.size, r_peaks, rate_hz, smooth_s)
    if train.var() <= 0:
        return 0.0
    step = max(1, int(round(0.01 * rate_hz)))
    lags = range(-int(round(0.1 * rate_hz)), int(round(max_lag_s * rate_hz)) + 1, step)
    return _max_lagged_corr(env, train, lags)


def gradient_score(component, rate_hz: float, slice_hz: float, segment_s: float = 4.0) -> float:
    """Fraction of power in the bins nearest each slice-frequency harmonic (+-1 bin)."""
    s = np.asarray(component, dtype=float)
    if s.var() <= 0 or not slice_hz > 0:
        return 0.0
    nper = min(s.size, int(round(segment_s * rate_hz)))
    f, p = signal.welch(s, fs=rate_hz, window="hann", nperseg=nper, detrend="constant")
    total = p[1:].sum()
    if total <= 0:
        return 0.0
    df = f[1] - f[0]
    sel = np.zeros(f.size, bool)
    for h in np.arange(slice_hz, f[-1] + df / 2, slice_hz):
        i = int(round(h / df))
        sel[max(1, i - 1) : i + 2] = True
    return float(min(1.0, p[sel].sum() / total))


def score_components(
    model: IcaModel,
    rec,
    r_peaks,
    slice_hz: float,
    rate_hz: float | None = None,
    threshold: float = 0.7,
) -> list[ComponentScore]:
    """Cardiac and gradient likelihood of every component; Reject iff either exceeds ``threshold``.

    ``rec`` is either the recording the model was fitted on (sources are
    computed through the model) or an array of component time courses.
    """
    if isinstance(rec, EegRecording):
        rate_hz = rec.sampling_rate
        src = model.sources(rec)
    else:
        if rate_hz is None:
            raise DataError("rate_hz is required for array input")
        src = np.atleast_2d(np.asarray(rec, dtype=float))
    peaks = r_peaks.samples(MarkerKind.R_PEAK) if isinstance(r_peaks, EventMarkers) else np.asarray(r_peaks)
    if isinstance(r_peaks, EventMarkers) and peaks.size == 0:
        peaks = r_peaks.samples()
    out = []
    for i, s in enumerate(src):
        b = bcg_score(s, peaks, rate_hz)
        g = gradient_score(s, rate_hz, slice_hz)
        verdict = Verdict.REJECT if max(b, g) > threshold else Verdict.KEEP
        out.append(ComponentScore(i, b, g, verdict))
    return out


def remove_components(rec, model: IcaModel, rejected=()):
    """Back-project with the ``rejected`` components zeroed.

    Channels outside the model (ECG, bad channels) pass through unchanged.
    """
    rejected = sorted({int(r) for r in rejected})
    bad = [r for r in rejected if not 0 <= r < model.n_components]
    if bad:
        raise UnknownComponent(f"components {bad} not in [0, {model.n_components})")
    keep = np.ones(model.n_components, bool)
    keep[rejected] = False
    x = model._channels(rec)
    src = model.sources(x)
    recon = model.mean[:, None] + model.mixing[:, keep] @ src[keep]
    if isinstance(rec, EegRecording):
        data = np.array(rec.data)
        idx = list(model.picks) if model.picks else list(range(rec.n_channels))
        data[idx] = recon
        return rec.with_data(data)
    return recon


class ICACleaner(TransformerMixin, BaseEstimator):
    """Fit ICA on a recording, flag cardiac/gradient components and remove them.

    ``reject`` overrides the automatic verdicts with an explicit list.
    """

    def __init__(self, n_components=None, threshold=0.7, reject=None, max_iter=200, tol=1e-4,
                 random_state=0, ecg_channel="ECG", slice_hz=None):
        self.n_components = n_components
        self.threshold = threshold
        self.reject = reject
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.ecg_channel = ecg_channel
        self.slice_hz = slice_hz

    def fit(self, rec, r_peaks=None):
        from .artifacts import detect_r_peaks

        check_recording(rec)
        self.model_ = fit_ica(rec, self.n_components, exclude=(self.ecg_channel,),
                              max_iter=self.max_iter, tol=self.tol, random_state=self.random_state)
        if r_peaks is None:
            r_peaks = detect_r_peaks(rec.channel(self.ecg_channel), rec.sampling_rate)
        self.scores_ = score_components(self.model_, rec, r_peaks, self.slice_hz or 0.0,
                                        threshold=self.threshold)
        if self.reject is not None:
            self.rejected_ = sorted(int(r) for r in self.reject)
        else:
            self.rejected_ = [s.index for s in self.scores_ if s.verdict is Verdict.REJECT]
        return self

    def transform(self, rec):
        check_is_fitted(self, "model_")
        return remove_components(rec, self.model_, self.rejected_)
