"""Image-quality metrics over rectangular regions of interest.

ROI statistics (SNR, CNR, CV, Fisher criterion) use population moments
(divisor N).  The paired z-test uses the sample standard deviation of the
differences.  Decibel values are ``20 * log10`` of amplitude ratios.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .errors import DegeneracyError, ShapeError, ValidationError

P_VALUE_FLOOR = 1e-300


@dataclass(frozen=True)
class Roi:
    name: str
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for k in ("x", "y", "w", "h"):
            v = getattr(self, k)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ValidationError(f"roi {self.name!r}: {k} must be an integer, got {v!r}")
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise ValidationError(f"roi {self.name!r}: invalid geometry {self}")

    def fits(self, shape) -> bool:
        h, w = shape
        return self.x + self.w <= w and self.y + self.h <= h

    def extract(self, img) -> np.ndarray:
        img = np.asarray(img, dtype=float)
        if not self.fits(img.shape):
            raise ValidationError(f"roi {self.name!r} exceeds image of shape {img.shape}")
        return img[self.y : self.y + self.h, self.x : self.x + self.w].ravel()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _values(img, roi: Roi, need_spread=True) -> np.ndarray:
    vals = roi.extract(img)
    if need_spread and vals.size < 2:
        raise DegeneracyError(f"roi {roi.name!r} needs at least 2 pixels")
    return vals


def correlation_coefficient(a, b) -> float:
    """Pearson correlation over all pixels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if denom == 0:
        raise DegeneracyError("correlation undefined for a constant image")
    return float(np.clip(np.sum(da * db) / denom, -1.0, 1.0))


def snr_db(img, roi: Roi) -> float:
    vals = _values(img, roi)
    mean, std = float(vals.mean()), float(vals.std())
    if std == 0 or mean <= 0:
        raise DegeneracyError(f"SNR undefined in roi {roi.name!r}: mean={mean}, std={std}")
    return 20.0 * math.log10(mean / std)


def cnr_db(img, roi_p: Roi, roi_b: Roi) -> float:
    p = _values(img, roi_p, need_spread=False)
    bg = _values(img, roi_b)
    contrast = abs(float(bg.mean()) - float(p.mean()))
    std_b = float(bg.std())
    if std_b == 0:
        raise DegeneracyError(f"CNR undefined: zero spread in roi {roi_b.name!r}")
    if contrast == 0:
        raise DegeneracyError("CNR undefined: regions have equal means")
    return 20.0 * math.log10(contrast / std_b)


def cv(img, roi: Roi) -> float:
    vals = _values(img, roi, need_spread=False)
    mean = float(vals.mean())
    if mean <= 0:
        raise DegeneracyError(f"CV undefined in roi {roi.name!r}: mean={mean}")
    return float(vals.std()) / mean


def fisher_criterion(img, roi_p: Roi, roi_b: Roi) -> float:
    p = _values(img, roi_p)
    bg = _values(img, roi_b)
    spread = float(bg.var()) + float(p.var())
    if spread == 0:
        raise DegeneracyError("Fisher criterion undefined: both regions are constant")
    return (float(bg.mean()) - float(p.mean())) ** 2 / spread


def probability_of_error(samples_p, samples_b, prior_p: float | None = None) -> float:
    """Bayes error of a two-class Gaussian classifier fit by maximum likelihood.

    ``prior_p`` defaults to the sample proportion of class p.  The overlap
    integral is evaluated adaptively over ``mean +- 10 sd`` of both classes.
    """
    xp = np.asarray(samples_p, dtype=float).ravel()
    xb = np.asarray(samples_b, dtype=float).ravel()
    if xp.size < 2 or xb.size < 2:
        raise DegeneracyError("each class needs at least 2 samples")
    if prior_p is None:
        prior_p = xp.size / (xp.size + xb.size)
    if not 0 < prior_p < 1:
        raise DegeneracyError(f"prior must lie in (0, 1), got {prior_p}")
    mp, sp = float(xp.mean()), float(xp.std())
    mb, sb = float(xb.mean()), float(xb.std())
    if sp == 0 or sb == 0:
        raise DegeneracyError("a class has zero variance")
    return _gaussian_overlap(mp, sp, mb, sb, prior_p)


def _gaussian_overlap(mp, sp, mb, sb, prior_p) -> float:
    prior_b = 1.0 - prior_p
    dist_p = stats.norm(mp, sp)
    dist_b = stats.norm(mb, sb)

    def integrand(x):
        return min(prior_p * dist_p.pdf(x), prior_b * dist_b.pdf(x))

    lo = min(mp - 10 * sp, mb - 10 * sb)
    hi = max(mp + 10 * sp, mb + 10 * sb)
    # break points at the means and the density crossings keep quad accurate
    points = sorted(p for p in (mp, mb, *_crossings(mp, sp, mb, sb, prior_p)) if lo < p < hi)
    total, _ = integrate.quad(integrand, lo, hi, points=points or None, epsabs=1e-9, limit=200)
    return float(min(max(total, 0.0), 0.5))


def _crossings(mp, sp, mb, sb, prior_p):
    # solve log(prior_p N(x; mp, sp)) == log(prior_b N(x; mb, sb))
    prior_b = 1.0 - prior_p
    a = 1.0 / (2 * sb**2) - 1.0 / (2 * sp**2)
    b = mp / sp**2 - mb / sb**2
    c = mb**2 / (2 * sb**2) - mp**2 / (2 * sp**2) + math.log(prior_p * sb / (prior_b * sp))
    if abs(a) < 1e-15:
        return [-c / b] if b != 0 else []
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    r = math.sqrt(disc)
    return [(-b - r) / (2 * a), (-b + r) / (2 * a)]


def paired_p_value(before, after) -> float:
    """Two-tailed paired z-test of ``after - before`` against zero mean."""
    before = np.asarray(before, dtype=float).ravel()
    after = np.asarray(after, dtype=float).ravel()
    if before.shape != after.shape:
        raise ShapeError(f"paired samples differ in length: {before.size} vs {after.size}")
    n = before.size
    if n < 2:
        raise DegeneracyError("paired test needs at least 2 cases")
    d = after - before
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0:
        return 1.0 if mean == 0 else P_VALUE_FLOOR
    z = mean * math.sqrt(n) / sd
    # survival function keeps precision far into the tail
    return float(max(2.0 * stats.norm.sf(abs(z)), P_VALUE_FLOOR))


def image_metrics(
    img,
    rois: dict[str, Roi],
    truth=None,
    class_rois: dict[str, Roi] | None = None,
    undefined: dict | None = None,
):
    """Every metric whose inputs are available, keyed by short name.

    ``rois`` may hold ``signal``, ``background`` and ``homogeneous``;
    ``class_rois`` may hold ``foreground`` and ``background`` for the
    separability metrics (falling back to ``signal``/``background``).
    A metric that is undefined on this image raises ``DegeneracyError``,
    unless ``undefined`` is a dict: then the metric is left out and the
    reason is stored there under its name.
    """
    sig, bg = rois.get("signal"), rois.get("background")
    homog = rois.get("homogeneous", sig)
    if class_rois:
        fg, cbg = class_rois.get("foreground"), class_rois.get("background")
    else:
        fg, cbg = sig, bg

    jobs = []
    if truth is not None:
        jobs.append(("r", lambda: correlation_coefficient(img, truth)))
    if sig is not None:
        jobs.append(("snr_db", lambda: snr_db(img, sig)))
    if sig is not None and bg is not None:
        jobs.append(("cnr_db", lambda: cnr_db(img, sig, bg)))
    if homog is not None:
        jobs.append(("cv", lambda: cv(img, homog)))
    if fg is not None and cbg is not None:
        jobs.append(("fisher", lambda: fisher_criterion(img, fg, cbg)))
        jobs.append(("p_error", lambda: probability_of_error(fg.extract(img), cbg.extract(img))))

    out = {}
    for name, fn in jobs:
        try:
            out[name] = fn()
        except DegeneracyError as exc:
            if undefined is None:
                raise
            undefined[name] = str(exc)
    return out


@dataclass
class MetricsReport:
    """Per-image metric values plus optional paired p-values.

    ``images`` maps ``method -> case -> metric -> value``;
    ``p_values`` maps ``method -> metric -> p``.
    """

    images: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, method: str, case: str, values: dict):
        self.images.setdefault(method, {})[case] = dict(values)

    def compute_p_values(self, reference: str = "none"):
        ref = self.images.get(reference)
        if ref is None:
            return
        for method, cases in self.images.items():
            if method == reference:
                continue
            names = sorted(set(cases) & set(ref))
            if len(names) < 2:
                continue
            metrics = sorted(set.intersection(*(set(cases[c]) & set(ref[c]) for c in names)))
            self.p_values[method] = {
                k: paired_p_value([ref[c][k] for c in names], [cases[c][k] for c in names])
                for k in metrics
            }

    def to_dict(self) -> dict:
        doc = {"images": self.images}
        if self.p_values:
            doc["p_values"] = self.p_values
        if self.meta:
            doc["meta"] = self.meta
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
