"""
Scene files.

A scene is a YAML document. Field names carry their units (``_m``, ``_s``,
``_pa``, ``_n``...). Node sets are given by *selectors*:

* a list of node ids, ``[0, 4, 7]``
* ``{ids: [...]}``
* ``{box: {min_m: [x, y, z], max_m: [x, y, z]}}`` -- nodes inside a rest-space box
* ``{near_m: [x, y, z]}`` -- the node closest to a rest-space point
* a list of such mappings, combined by union

Element sets accept ``all``, ``{ids: [...]}`` or ``{box: ...}`` (tested on
rest centroids).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..contact import ContactConfig
from ..integrators import SolverConfig
from ..materials import (MaterialConfigError, MaterialParams, anisotropic_stvk_addon,
                         linear_corotational_free_material, snh_material)
from ..mesh import MeshParseError, DegenerateElementError, read_mesh_files
from ..meshgen import box_mesh

__all__ = ['SceneError', 'Scene', 'load_scene', 'scene_from_dict', 'builtin_scene_path',
           'BUILTIN_SCENES', 'INTEGRATORS']

INTEGRATORS = ('vanilla', 'conjac', 'conjac+adaptive')
BUILTIN_SCENES = Path(__file__).resolve().parent.parent / 'scenes'


class SceneError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f'{path}: {message}' if path else message)


def builtin_scene_path(name):
    p = BUILTIN_SCENES / (name if name.endswith('.yaml') else name + '.yaml')
    return p if p.exists() else None


@dataclass
class ForceWindow:
    nodes: np.ndarray
    force: np.ndarray
    start: float
    end: float


@dataclass
class Keyframe:
    time: float
    translation: np.ndarray
    axis: np.ndarray
    angle: float
    center: np.ndarray


@dataclass
class ScriptedGroup:
    nodes: np.ndarray
    keyframes: list
    release: Optional[float] = None

    def positions(self, rest, t):
        """Rest positions of the group moved by the keyframe motion at time ``t``."""
        k = self.keyframes
        times = [kf.time for kf in k]
        if t <= times[0]:
            a = b = k[0]
            s = 0.0
        elif t >= times[-1]:
            a = b = k[-1]
            s = 0.0
        else:
            i = int(np.searchsorted(times, t, side='right')) - 1
            a, b = k[i], k[i + 1]
            s = (t - a.time) / (b.time - a.time)
        angle = (1 - s) * a.angle + s * b.angle
        trans = (1 - s) * a.translation + s * b.translation
        axis, center = b.axis, b.center
        p = rest[self.nodes] - center
        c, sn = np.cos(angle), np.sin(angle)
        rotated = (p * c + np.cross(axis, p) * sn + np.outer(p @ axis, axis) * (1 - c))
        return rotated + center + trans


@dataclass
class Cut:
    time: float
    elements: np.ndarray


@dataclass
class AdaptivityConfig:
    representative: np.ndarray
    threshold: float = 0.02
    window: int = 10
    weighted: bool = True
    labels: Optional[np.ndarray] = None


@dataclass
class Scene:
    name: str
    mesh: object
    materials: list
    fixed: np.ndarray
    dynamic: np.ndarray
    gravity: np.ndarray
    solver: SolverConfig
    integrator: str = 'conjac'
    steps: int = 100
    scripted: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    cuts: list = field(default_factory=list)
    adaptivity: Optional[AdaptivityConfig] = None
    contact: Optional[ContactConfig] = None
    quasistatic_init: bool = False
    initial_velocity: np.ndarray = None
    source: Optional[Path] = None

    @property
    def release_time(self):
        """Time after which no pull or kinematic release is pending."""
        times = [f.end for f in self.forces] + [g.release for g in self.scripted if g.release is not None]
        return max(times) if times else 0.0


def _vec3(value, path, unit=False):
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise SceneError(path, 'expected a 3-vector') from None
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise SceneError(path, 'expected a 3-vector')
    if unit:
        n = np.linalg.norm(a)
        if n == 0:
            raise SceneError(path, 'direction must be nonzero')
        a = a / n
    return a


def _number(d, key, path, default=None, positive=False, integer=False):
    if key not in d:
        if default is None:
            raise SceneError(f'{path}.{key}', 'required field missing')
        return default
    v = d[key]
    if isinstance(v, str):
        # YAML 1.1 reads 1.0e4 (unsigned exponent) as a string
        try:
            v = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SceneError(f'{path}.{key}', f'expected a number, got {v!r}')
    if integer and int(v) != v:
        raise SceneError(f'{path}.{key}', 'expected an integer')
    if positive and not v > 0:
        raise SceneError(f'{path}.{key}', 'must be > 0')
    return int(v) if integer else float(v)


def _mapping(d, path):
    if not isinstance(d, dict):
        raise SceneError(path, 'expected a mapping')
    return d


def _in_box(points, spec, path):
    spec = _mapping(spec, path)
    lo = _vec3(spec.get('min_m'), f'{path}.min_m')
    hi = _vec3(spec.get('max_m'), f'{path}.max_m')
    return np.flatnonzero(np.all((points >= lo) & (points <= hi), axis=1))


def select_nodes(spec, mesh, path):
    x = mesh.rest_positions
    if spec is None:
        return np.zeros(0, dtype=np.int64)
    if isinstance(spec, list):
        if all(isinstance(s, int) and not isinstance(s, bool) for s in spec):
            ids = np.asarray(spec, dtype=np.int64)
            if ids.size and (ids.min() < 0 or ids.max() >= mesh.n_nodes):
                raise SceneError(path, f'node id out of range [0, {mesh.n_nodes})')
            return np.unique(ids)
        parts = [select_nodes(s, mesh, f'{path}[{i}]') for i, s in enumerate(spec)]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    spec = _mapping(spec, path)
    if 'ids' in spec:
        return select_nodes(list(spec['ids']), mesh, f'{path}.ids')
    if 'box' in spec:
        ids = _in_box(x, spec['box'], f'{path}.box')
        if not ids.size:
            raise SceneError(f'{path}.box', 'selects no nodes')
        return ids
    if 'near_m' in spec:
        p = _vec3(spec['near_m'], f'{path}.near_m')
        return np.array([int(np.argmin(np.linalg.norm(x - p, axis=1)))])
    raise SceneError(path, 'unknown node selector (use ids, box or near_m)')


def select_elements(spec, mesh, path):
    if spec is None or spec == 'all':
        return np.arange(mesh.n_elements)
    if isinstance(spec, list):
        return np.unique(np.concatenate([select_elements(s, mesh, f'{path}[{i}]') for i, s in enumerate(spec)]))
    spec = _mapping(spec, path)
    if 'ids' in spec:
        ids = np.asarray(spec['ids'], dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= mesh.n_elements):
            raise SceneError(f'{path}.ids', f'element id out of range [0, {mesh.n_elements})')
        return ids
    if 'box' in spec:
        return _in_box(mesh.centroids(), spec['box'], f'{path}.box')
    raise SceneError(path, "unknown element selector (use 'all', ids or box)")


def _load_mesh(spec, base, path):
    spec = _mapping(spec, path)
    try:
        if 'box' in spec:
            b = _mapping(spec['box'], f'{path}.box')
            size = _vec3(b.get('size_m'), f'{path}.box.size_m')
            cells = b.get('cells')
            if not (isinstance(cells, list) and len(cells) == 3 and all(isinstance(c, int) and c > 0 for c in cells)):
                raise SceneError(f'{path}.box.cells', 'expected three positive integers')
            origin = _vec3(b.get('origin_m', [0, 0, 0]), f'{path}.box.origin_m')
            return box_mesh(size, cells, origin)
        if 'node_file' in spec and 'ele_file' in spec:
            return read_mesh_files(base / spec['node_file'], base / spec['ele_file'])
    except (MeshParseError, DegenerateElementError, OSError) as exc:
        raise SceneError(path, str(exc)) from exc
    raise SceneError(path, 'give either box or node_file + ele_file')


def _material(spec, path):
    model = spec.get('model', 'snh')
    try:
        direction = spec.get('fiber_direction')
        if direction is not None:
            direction = tuple(_vec3(direction, f'{path}.fiber_direction', unit=True))
        params = MaterialParams(
            _number(spec, 'youngs_modulus_pa', path),
            _number(spec, 'poisson_ratio', path),
            direction,
            _number(spec, 'fiber_stiffness_pa', path, default=0.0),
        )
        if model == 'snh':
            return snh_material(params)
        if model == 'linear':
            return linear_corotational_free_material(params)
        if model == 'snh+astvk':
            return anisotropic_stvk_addon(snh_material(params), params)
    except MaterialConfigError as exc:
        raise SceneError(path, str(exc)) from exc
    raise SceneError(f'{path}.model', f'unknown material {model!r} (snh, linear, snh+astvk)')


def _schedule_sorted(times, path):
    if any(b < a for a, b in zip(times, times[1:])):
        raise SceneError(path, 'schedule must be sorted by time')


def scene_from_dict(doc, base=Path('.'), seed=0, source=None) -> Scene:
    doc = _mapping(doc, '')
    base = Path(base)
    mesh = _load_mesh(doc.get('mesh'), base, 'mesh')

    mat_specs = doc.get('materials')
    if not isinstance(mat_specs, list) or not mat_specs:
        raise SceneError('materials', 'expected a non-empty list')
    per_element = [None] * mesh.n_elements
    density = np.full(mesh.n_elements, 1000.0)
    for i, spec in enumerate(mat_specs):
        path = f'materials[{i}]'
        spec = _mapping(spec, path)
        model = _material(spec, path)
        ids = select_elements(spec.get('elements', 'all'), mesh, f'{path}.elements')
        density[ids] = _number(spec, 'density_kg_m3', path, default=1000.0, positive=True)
        for e in ids:
            per_element[e] = model
    missing = [e for e, m in enumerate(per_element) if m is None]
    if missing:
        raise SceneError('materials', f'element {missing[0]} has no material')
    mesh = mesh.with_density(density)

    fixed = select_nodes(doc.get('fixed_nodes'), mesh, 'fixed_nodes')
    scripted = []
    for i, spec in enumerate(doc.get('scripted', []) or []):
        path = f'scripted[{i}]'
        spec = _mapping(spec, path)
        nodes = select_nodes(spec.get('nodes'), mesh, f'{path}.nodes')
        kfs = []
        for j, kf in enumerate(spec.get('keyframes') or []):
            kp = f'{path}.keyframes[{j}]'
            kf = _mapping(kf, kp)
            kfs.append(Keyframe(
                _number(kf, 'time_s', kp),
                _vec3(kf.get('translation_m', [0, 0, 0]), f'{kp}.translation_m'),
                _vec3(kf.get('rotation_axis', [1, 0, 0]), f'{kp}.rotation_axis', unit=True),
                np.deg2rad(_number(kf, 'rotation_deg', kp, default=0.0)),
                _vec3(kf.get('center_m', [0, 0, 0]), f'{kp}.center_m'),
            ))
        if not kfs:
            raise SceneError(f'{path}.keyframes', 'at least one keyframe required')
        _schedule_sorted([k.time for k in kfs], f'{path}.keyframes')
        release = spec.get('release_s')
        if release is not None:
            release = _number(spec, 'release_s', path)
        scripted.append(ScriptedGroup(nodes, kfs, release))
    all_fixed = np.unique(np.concatenate([fixed] + [g.nodes for g in scripted]))

    dyn_spec = doc.get('dynamic_nodes')
    if isinstance(dyn_spec, dict) and 'random' in dyn_spec:
        k = _number(dyn_spec, 'random', 'dynamic_nodes', integer=True)
        pool = np.setdiff1d(np.arange(mesh.n_nodes), all_fixed)
        rng = np.random.default_rng(seed)
        dynamic = np.sort(rng.choice(pool, size=min(k, pool.size), replace=False))
    else:
        dynamic = select_nodes(dyn_spec, mesh, 'dynamic_nodes')
    # a scripted node may also be dynamic if it is released: it is held
    # kinematically until then
    held = [fixed] + [g.nodes for g in scripted if g.release is None]
    clash = np.intersect1d(dynamic, np.concatenate(held))
    if clash.size:
        raise SceneError('dynamic_nodes', f'node {clash[0]} is also fixed or scripted without release')

    forces = []
    for i, spec in enumerate(doc.get('forces', []) or []):
        path = f'forces[{i}]'
        spec = _mapping(spec, path)
        start = _number(spec, 'start_s', path, default=0.0)
        end = _number(spec, 'end_s', path)
        if end < start:
            raise SceneError(path, 'end_s precedes start_s')
        forces.append(ForceWindow(select_nodes(spec.get('nodes'), mesh, f'{path}.nodes'),
                                  _vec3(spec.get('force_n'), f'{path}.force_n'), start, end))

    cuts = []
    for i, spec in enumerate(doc.get('cuts', []) or []):
        path = f'cuts[{i}]'
        spec = _mapping(spec, path)
        t = _number(spec, 'time_s', path)
        if 'plane' in spec:
            pl = _mapping(spec['plane'], f'{path}.plane')
            p = _vec3(pl.get('point_m'), f'{path}.plane.point_m')
            n = _vec3(pl.get('normal'), f'{path}.plane.normal', unit=True)
            d = (mesh.rest_positions[mesh.tets] - p) @ n
            elements = np.flatnonzero((d.min(axis=1) < 0) & (d.max(axis=1) > 0))
        elif 'nodes' in spec:
            nodes = select_nodes(spec['nodes'], mesh, f'{path}.nodes')
            elements = np.flatnonzero(np.isin(mesh.tets, nodes).any(axis=1))
        else:
            raise SceneError(path, 'give plane or nodes')
        cuts.append(Cut(t, elements))
    _schedule_sorted([c.time for c in cuts], 'cuts')

    s = _mapping(doc.get('solver', {}) or {}, 'solver')
    try:
        solver = SolverConfig(
            h=_number(s, 'h_s', 'solver', default=5e-3, positive=True),
            beta=_number(s, 'beta', 'solver', default=0.5),
            gamma=_number(s, 'gamma', 'solver', default=1.0 / 3.0),
            solver_tol=_number(s, 'solver_tol', 'solver', default=1e-10, positive=True),
            max_newton_iters=_number(s, 'max_newton_iters', 'solver', default=50, integer=True),
            newton_tol=_number(s, 'newton_tol', 'solver', default=1e-8, positive=True),
        )
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError('solver', str(exc)) from exc

    integrator = doc.get('integrator', 'conjac')
    if integrator not in INTEGRATORS:
        raise SceneError('integrator', f'expected one of {", ".join(INTEGRATORS)}')

    adaptivity = None
    if doc.get('adaptivity') is not None:
        a = _mapping(doc['adaptivity'], 'adaptivity')
        spec = a.get('representative')
        if not isinstance(spec, list) or not spec:
            raise SceneError('adaptivity.representative', 'expected a non-empty list')
        # listed order is kept so that region labels can refer to it
        reps = np.concatenate([select_nodes([r] if isinstance(r, int) else r, mesh,
                                            f'adaptivity.representative[{i}]')
                               for i, r in enumerate(spec)])
        if np.unique(reps).size != reps.size:
            raise SceneError('adaptivity.representative', 'duplicate representative node')
        if np.intersect1d(reps, all_fixed).size:
            raise SceneError('adaptivity.representative', 'representative nodes cannot be fixed')
        labels = None
        if 'region_labels_file' in a:
            try:
                labels = np.loadtxt(base / a['region_labels_file'], dtype=np.int64, ndmin=1)
            except (OSError, ValueError) as exc:
                raise SceneError('adaptivity.region_labels_file', str(exc)) from exc
            if labels.shape != (mesh.n_elements,):
                raise SceneError('adaptivity.region_labels_file', 'need one label per element')
        adaptivity = AdaptivityConfig(
            reps,
            _number(a, 'threshold_per_s', 'adaptivity', default=0.02),
            _number(a, 'window_steps', 'adaptivity', default=10, integer=True, positive=True),
            bool(a.get('weighted', True)),
            labels,
        )
    if integrator == 'conjac+adaptive' and adaptivity is None:
        raise SceneError('adaptivity', "required for integrator 'conjac+adaptive'")

    contact = None
    if doc.get('contact') is not None:
        c = _mapping(doc['contact'], 'contact')
        normal = _vec3(c.get('normal', [0, 0, 1]), 'contact.normal', unit=True)
        height = _number(c, 'floor_height_m', 'contact', default=0.0)
        try:
            contact = ContactConfig(
                point=tuple(height * normal),
                normal=tuple(normal),
                stiffness=_number(c, 'stiffness_n_per_m', 'contact'),
                alpha=_number(c, 'alpha', 'contact', default=0.1),
                mu=_number(c, 'mu', 'contact', default=0.3),
                enabled=bool(c.get('enabled', True)),
            )
        except ValueError as exc:
            raise SceneError('contact', str(exc)) from exc

    v0 = doc.get('initial_velocity_m_s')
    v0 = np.zeros(3) if v0 is None else _vec3(v0, 'initial_velocity_m_s')

    return Scene(
        name=str(doc.get('name', 'scene')),
        mesh=mesh,
        materials=per_element,
        fixed=all_fixed,
        dynamic=dynamic,
        gravity=_vec3(doc.get('gravity_m_s2', [0, 0, 0]), 'gravity_m_s2'),
        solver=solver,
        integrator=integrator,
        steps=_number(doc, 'steps', '', default=100, integer=True, positive=True),
        scripted=scripted,
        forces=forces,
        cuts=cuts,
        adaptivity=adaptivity,
        contact=contact,
        quasistatic_init=bool(s.get('quasistatic_init', False)),
        initial_velocity=v0,
        source=source,
    )


def load_scene(path, seed=0) -> Scene:
    path = Path(path)
    if not path.exists():
        builtin = builtin_scene_path(str(path))
        if builtin is None:
            raise SceneError('', f'scene file {str(path)!r} not found')
        path = builtin
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SceneError('', f'invalid YAML: {exc}') from exc
    return scene_from_dict(doc, path.parent, seed, path)
