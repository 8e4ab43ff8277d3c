"""
Liveliness-driven switching of representative nodes between dynamic and
quasistatic.

Each representative node owns a region of elements. Per step, the element
stretch rates are reduced to one scalar per region (mean of the entrywise
absolute values, volume weighted by default), averaged over a sliding window
and compared against a threshold in 1/s.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .kinematics import stretch_rate, velocity_gradients
from .assembly import deformation_gradients

__all__ = [
    'RegionMap',
    'AdaptivityState',
    'regions_by_nearest',
    'element_stretch_rates',
    'liveliness_metric',
    'region_metrics',
    'update_partition',
    'active_durations',
]


@dataclass(frozen=True, eq=False)
class RegionMap:
    """
    Attributes
    ----------
    representative : ndarray of int, shape (r,)
        Node id owning each region.
    element_to_region : ndarray of int, shape (m,)
        Region index (into ``representative``) of every element.
    region_volumes : ndarray, shape (r,)
    """
    representative: np.ndarray
    element_to_region: np.ndarray
    region_volumes: np.ndarray

    @classmethod
    def from_labels(cls, mesh, representative, element_to_region):
        rep = np.asarray(representative, dtype=np.int64)
        lab = np.asarray(element_to_region, dtype=np.int64)
        if lab.shape != (mesh.n_elements,):
            raise ValueError('need one region label per element')
        if lab.size and (lab.min() < 0 or lab.max() >= rep.size):
            raise ValueError('region label out of range')
        vol = np.bincount(lab, weights=mesh.rest_volume, minlength=rep.size)
        return cls(rep, lab, vol)

    @property
    def n_regions(self):
        return self.representative.size


def regions_by_nearest(mesh, representative):
    """Assign every element to the representative node closest to its rest centroid."""
    rep = np.asarray(representative, dtype=np.int64)
    c = mesh.centroids()
    d = np.linalg.norm(c[:, None, :] - mesh.rest_positions[rep][None], axis=-1)
    return RegionMap.from_labels(mesh, rep, np.argmin(d, axis=1))


def element_stretch_rates(mesh, x, v, elements=None):
    F = deformation_gradients(mesh, x)
    Fdot = velocity_gradients(mesh, v)
    if elements is not None:
        F, Fdot = F[elements], Fdot[elements]
    return stretch_rate(F, Fdot)


def liveliness_metric(sdot, volumes=None):
    """
    Mean of ``|Sdot|`` over all 9 entries of every element in a region.

    With ``volumes`` each element's mean is weighted by its volume; without,
    all entries count equally. An empty region scores 0.
    """
    sdot = np.asarray(sdot, dtype=float).reshape(-1, 9)
    if not sdot.shape[0]:
        return 0.0
    per_elem = np.abs(sdot).mean(axis=1)
    if volumes is None:
        return float(per_elem.mean())
    w = np.asarray(volumes, dtype=float)
    return float(np.dot(w, per_elem) / w.sum())


def region_metrics(regions: RegionMap, sdot, volumes, active=None, weighted=True):
    """One liveliness value per region; cut elements are ignored."""
    sdot = np.asarray(sdot).reshape(-1, 9)
    keep = np.ones(sdot.shape[0], dtype=bool) if active is None else np.asarray(active, dtype=bool)
    per_elem = np.abs(sdot).mean(axis=1)
    lab = regions.element_to_region[keep]
    w = np.asarray(volumes, dtype=float)[keep] if weighted else np.ones(lab.size)
    num = np.bincount(lab, weights=w * per_elem[keep], minlength=regions.n_regions)
    den = np.bincount(lab, weights=w, minlength=regions.n_regions)
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


@dataclass
class AdaptivityState:
    n_regions: int
    threshold: float
    window: int = 10
    weighted: bool = True
    history: list = field(default=None)
    active_flags: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError('window must be at least one step')
        if self.history is None:
            self.history = [deque(maxlen=self.window) for _ in range(self.n_regions)]
        if self.active_flags is None:
            self.active_flags = np.zeros(self.n_regions, dtype=bool)

    def windowed(self):
        return np.array([np.mean(h) if h else 0.0 for h in self.history])


def update_partition(state: AdaptivityState, metrics, forced_off=None):
    """
    Push this step's metrics and recompute activation flags.

    Returns ``(newly_active, newly_inactive)`` region indices. Regions in
    ``forced_off`` (e.g. fully cut) stay quasistatic.
    """
    metrics = np.asarray(metrics, dtype=float)
    if metrics.shape != (state.n_regions,):
        raise ValueError(f'expected {state.n_regions} metrics, got {metrics.shape}')
    for h, m in zip(state.history, metrics):
        h.append(float(m))
    flags = state.windowed() > state.threshold
    if forced_off is not None:
        flags[np.asarray(forced_off, dtype=int)] = False
    on = np.flatnonzero(flags & ~state.active_flags)
    off = np.flatnonzero(~flags & state.active_flags)
    state.active_flags = flags
    return on, off


def active_durations(trace, threshold, window=10):
    """
    Replay a metric trace of shape ``(steps, regions)``.

    Returns ``(durations, flags)``: active step count per region and the
    ``(steps, regions)`` activation history.
    """
    trace = np.asarray(trace, dtype=float)
    state = AdaptivityState(trace.shape[1], threshold, window)
    flags = np.zeros(trace.shape, dtype=bool)
    for k, row in enumerate(trace):
        update_partition(state, row)
        flags[k] = state.active_flags
    return flags.sum(axis=0), flags
