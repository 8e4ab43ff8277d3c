"""
Simulation driver: builds the engine from a scene, steps it, and writes
frames and diagnostics.
"""

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from ..adaptivity import AdaptivityState, RegionMap, regions_by_nearest
from ..condensation import NodePartition
from ..integrators import (AdaptiveConJacIntegrator, Body, ConJacIntegrator, SimState,
                           VanillaIntegrator, kinetic_energy, quasistatic_init)
from ..linalg import ConditioningError, DivergenceError, StabilityError
from ..mesh import write_ele_file, write_node_file

__all__ = ['Simulation', 'StepFailure', 'spread_nodes', 'run_scene', 'bench_scene', 'compare_scene']

log = logging.getLogger(__name__)

DIAG_FIELDS = ['step', 't_s', 'residual_n', 'kinetic_energy_j', 'n_dynamic', 'rhs_solves', 'n_contacts']
TIMING_FIELDS = ['step', 'assemble_s', 'factorize_s', 'solve_s', 'update_s']

StepFailure = (DivergenceError, StabilityError, ConditioningError)


class Simulation:
    """
    One scene being simulated.

    Parameters
    ----------
    scene : Scene
    integrator : str, optional
        Overrides the scene's integrator (``vanilla``, ``conjac``,
        ``conjac+adaptive``).
    dynamic : array of int, optional
        Overrides the scene's dynamic node set.
    """

    def __init__(self, scene, integrator=None, dynamic=None, solver=None):
        self.scene = scene
        self.kind = integrator or scene.integrator
        self.config = solver or scene.solver
        mesh = scene.mesh
        self.body = Body.build(mesh, scene.materials, scene.contact)
        self.gravity_force = (self.body.mass.reshape(-1, 3) * scene.gravity).ravel()
        dyn = scene.dynamic if dynamic is None else np.asarray(dynamic, dtype=np.int64)

        self.released = set()
        self.regions = None
        rep = None
        if scene.adaptivity is not None:
            rep = scene.adaptivity.representative
            if scene.adaptivity.labels is not None:
                self.regions = RegionMap.from_labels(mesh, rep, scene.adaptivity.labels)
            else:
                self.regions = regions_by_nearest(mesh, rep)
        if self.kind == 'conjac+adaptive':
            # representatives start quasistatic and are switched on by their metric
            dyn = np.setdiff1d(dyn, rep)
        # dynamic nodes that are scripted join the dynamic set when released
        self.base_dynamic = dyn
        self.partition = NodePartition.build(mesh.n_nodes, scene.fixed, np.setdiff1d(dyn, scene.fixed), rep)

        if self.kind == 'vanilla':
            self.integrator = VanillaIntegrator(self.body, self.partition, self.config)
        elif self.kind == 'conjac':
            self.integrator = ConJacIntegrator(self.body, self.partition, self.config)
        elif self.kind == 'conjac+adaptive':
            a = scene.adaptivity
            state = AdaptivityState(self.regions.n_regions, a.threshold, a.window, a.weighted)
            self.integrator = AdaptiveConJacIntegrator(self.body, self.partition, self.config,
                                                       self.regions, state, always_dynamic=dyn)
        else:
            raise ValueError(f'unknown integrator {self.kind!r}')

        x0 = mesh.rest_positions.ravel().copy()
        v0 = np.zeros_like(x0)
        free = self.partition.free
        v0.reshape(-1, 3)[free] = scene.initial_velocity
        self.state = SimState(x0, v0)
        if scene.quasistatic_init and self.kind != 'vanilla':
            res = quasistatic_init(self.body, self.partition, self.config, self.external(0.0), x0)
            self.state = SimState(res.x, v0)
        self._next_cut = 0

    @property
    def mass(self):
        return self.body.mass

    def external(self, t):
        f = self.gravity_force.copy()
        fv = f.reshape(-1, 3)
        for w in self.scene.forces:
            if w.start <= t < w.end:
                fv[w.nodes] += w.force
        return f

    def targets(self, t):
        """Positions of the fixed nodes at time ``t`` (scripted motion applied)."""
        if not self.scene.scripted:
            return None
        x = self.state.x.reshape(-1, 3).copy()
        rest = self.scene.mesh.rest_positions
        for g in self.scene.scripted:
            if id(g) not in self.released:
                x[g.nodes] = g.positions(rest, t)
        return x.ravel()

    def _set_fixed(self, fixed):
        part = self.integrator.partition
        dyn = np.setdiff1d(np.union1d(part.dynamic, self.base_dynamic), fixed)
        rep = np.setdiff1d(part.representative, fixed)
        self.partition = NodePartition.build(part.n_nodes, fixed, dyn, np.union1d(rep, dyn))
        self.integrator.set_partition(self.partition)

    def _apply_events(self, t):
        eps = 1e-9 * self.config.h
        fixed = set(self.integrator.partition.fixed.tolist())
        changed = False
        for g in self.scene.scripted:
            if g.release is not None and id(g) not in self.released and t + eps >= g.release:
                self.released.add(id(g))
                fixed -= set(g.nodes.tolist())
                changed = True
        while self._next_cut < len(self.scene.cuts) and t + eps >= self.scene.cuts[self._next_cut].time:
            cut = self.scene.cuts[self._next_cut]
            self.body.assembler.remove_elements(cut.elements)
            orphans = self.body.assembler.orphaned
            log.info('t=%.4f s: cut %d elements, %d orphaned nodes', t, cut.elements.size, orphans.size)
            fixed |= set(orphans.tolist())
            self._next_cut += 1
            changed = True
        if changed:
            self._set_fixed(np.array(sorted(fixed), dtype=np.int64))

    def step(self):
        t = self.state.t
        self._apply_events(t)
        self.state = self.integrator.step(self.state, self.external(t), self.targets(t + self.config.h))
        return self.integrator.last

    def record(self, info):
        s = self.state
        row = dict(step=s.step_index, t_s=s.t, residual_n=info.residual,
                   kinetic_energy_j=kinetic_energy(self.mass, s.v),
                   n_dynamic=info.n_dynamic, rhs_solves=info.rhs_count, n_contacts=info.n_contacts)
        if self.regions is not None:
            m = info.metrics if info.metrics is not None else np.zeros(self.regions.n_regions)
            for i, val in enumerate(m):
                row[f'metric_{i}'] = float(val)
        return row

    def run(self, steps, out_dir=None, export_every=1, callback=None):
        """
        Advance ``steps`` steps; returns the diagnostics rows.

        Raises one of :data:`StepFailure` on divergence after flushing
        everything written so far.
        """
        writer = _Output(out_dir, self) if out_dir is not None else None
        rows = []
        try:
            for k in range(steps):
                t0 = time.perf_counter()
                info = self.step()
                row = self.record(info)
                rows.append(row)
                if writer is not None:
                    writer.diag(row, info)
                    if export_every and self.state.step_index % export_every == 0:
                        writer.frame(self.state)
                if callback is not None and callback(self, row) is False:
                    break
                log.debug('step %d done in %.3f s', row['step'], time.perf_counter() - t0)
        finally:
            if writer is not None:
                writer.close()
        return rows


class _Output:
    def __init__(self, out_dir, sim):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.dir / 'mesh.ele', 'w') as fh:
            write_ele_file(fh, sim.scene.mesh.tets)
        fields = list(DIAG_FIELDS)
        if sim.regions is not None:
            fields += [f'metric_{i}' for i in range(sim.regions.n_regions)]
        self._diag_fh = open(self.dir / 'diag.csv', 'w', newline='')
        self._diag = csv.DictWriter(self._diag_fh, fieldnames=fields)
        self._diag.writeheader()
        self._time_fh = open(self.dir / 'timings.csv', 'w', newline='')
        self._time = csv.DictWriter(self._time_fh, fieldnames=TIMING_FIELDS)
        self._time.writeheader()

    def diag(self, row, info):
        self._diag.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        self._time.writerow(dict(step=row['step'], **{f'{k}_s': v for k, v in info.timings.items()}))

    def frame(self, state):
        with open(self.dir / f'frame_{state.step_index:06d}.node', 'w') as fh:
            write_node_file(fh, state.x)

    def close(self):
        self._diag_fh.close()
        self._time_fh.close()


def spread_nodes(mesh, candidates, k, anchor=None):
    """Deterministic farthest-point sample of ``k`` nodes from ``candidates``."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if k <= 0 or not candidates.size:
        return np.zeros(0, dtype=np.int64)
    x = mesh.rest_positions[candidates]
    if anchor is None:
        anchor = mesh.rest_positions.mean(axis=0)
    first = int(np.argmax(np.linalg.norm(x - anchor, axis=1)))
    chosen = [first]
    d = np.linalg.norm(x - x[first], axis=1)
    while len(chosen) < min(k, candidates.size):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(x - x[nxt], axis=1))
    return np.sort(candidates[chosen])


def run_scene(scene, out_dir, steps=None, export_every=1):
    sim = Simulation(scene)
    rows = sim.run(steps or scene.steps, out_dir, export_every)
    return sim, rows


def bench_scene(scene, nd_list, reps=10, out_dir=None):
    """
    Per-step wall time and right-hand-side solve count of the condensed
    integrator for several dynamic node counts.
    """
    mesh = scene.mesh
    fixed_anchor = mesh.rest_positions[scene.fixed].mean(axis=0) if scene.fixed.size else None
    pool = np.setdiff1d(np.arange(mesh.n_nodes), scene.fixed)
    table = []
    for nd in nd_list:
        dyn = spread_nodes(mesh, pool, nd, fixed_anchor)
        sim = Simulation(scene, integrator='conjac', dynamic=dyn)
        times, counts = [], []
        for _ in range(reps):
            t0 = time.perf_counter()
            info = sim.step()
            times.append(time.perf_counter() - t0)
            counts.append(info.rhs_count)
        table.append(dict(n_dynamic=int(dyn.size), mean_step_s=float(np.mean(times)),
                          rhs_solves_per_step=float(np.mean(counts)),
                          min_rhs=int(min(counts)), max_rhs=int(max(counts))))
    nds = np.array([r['n_dynamic'] for r in table], dtype=float)
    cnt = np.array([r['rhs_solves_per_step'] for r in table])
    tms = np.array([r['mean_step_s'] for r in table])
    if nds.size >= 2 and np.ptp(nds) > 0:
        solve_slope = float(np.polyfit(nds, cnt, 1)[0])
        time_slope = float(np.polyfit(nds, tms, 1)[0])
    else:
        solve_slope = time_slope = float('nan')
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / 'bench.csv', 'w', newline='') as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0]))
            w.writeheader()
            w.writerows(table)
    return dict(rows=table, solve_slope=solve_slope, time_slope_s=time_slope)


def compare_scene(scene, out_dir=None, steps=None, until_rest=None, rest_window=50,
                  max_steps=20000, solver=None):
    """
    Run the scene with the full-space and the condensed integrator at the
    same step size and damping, and report kinetic energy, residuals and
    the difference of final positions.

    With ``until_rest`` (m/s) both runs continue past ``steps`` until the
    largest nodal speed has stayed below it for ``rest_window`` consecutive
    steps, or ``max_steps`` is reached. A single small sample is not
    enough: with few dynamic nodes every velocity passes through zero
    together at the turning points of an oscillation.
    """
    runs = {}
    for kind in ('vanilla', 'conjac'):
        sim = Simulation(scene, integrator=kind, solver=solver)
        rows = []
        n = steps or scene.steps
        k = calm = 0
        while True:
            info = sim.step()
            rows.append(sim.record(info))
            k += 1
            speed = float(np.abs(sim.state.v).max())
            calm = calm + 1 if until_rest is not None and speed < until_rest else 0
            if until_rest is None and k >= n:
                break
            if until_rest is not None and ((k >= n and calm >= rest_window) or k >= max_steps):
                break
        runs[kind] = (sim, rows)

    release = scene.release_time
    size = scene.mesh.extent()
    report = {}
    for kind, (sim, rows) in runs.items():
        ke = np.array([r['kinetic_energy_j'] for r in rows])
        t = np.array([r['t_s'] for r in rows])
        after = ke[t > release + 1e-12]
        report[kind] = dict(
            steps=len(rows),
            peak_kinetic_energy_j=float(ke.max()) if ke.size else 0.0,
            post_release_peak_kinetic_energy_j=float(after.max()) if after.size else 0.0,
            final_max_speed_m_s=float(np.abs(sim.state.v).max()),
            at_rest=bool(until_rest is not None and float(np.abs(sim.state.v).max()) < until_rest),
            final_residual_n=rows[-1]['residual_n'] if rows else 0.0,
            finite=bool(np.all(np.isfinite(sim.state.x))),
        )
    xv = runs['vanilla'][0].state.x
    xc = runs['conjac'][0].state.x
    report['final_position_difference_rel'] = float(np.abs(xv - xc).max() / size)
    report['release_time_s'] = release

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rv, rc = runs['vanilla'][1], runs['conjac'][1]
        with open(out / 'compare.csv', 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['step', 't_s', 'ke_vanilla_j', 'ke_conjac_j', 'residual_vanilla_n', 'residual_conjac_n'])
            for i in range(max(len(rv), len(rc))):
                a = rv[i] if i < len(rv) else {}
                b = rc[i] if i < len(rc) else {}
                w.writerow([i + 1, (a or b).get('t_s'), a.get('kinetic_energy_j', ''), b.get('kinetic_energy_j', ''),
                            a.get('residual_n', ''), b.get('residual_n', '')])
        with open(out / 'compare.json', 'w') as fh:
            json.dump(report, fh, indent=2)
    report['runs'] = runs
    return report
