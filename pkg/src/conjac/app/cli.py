"""
Command line interface.

    conjac run <scene> --out DIR [--steps N] [--export-every K] [--seed S]
    conjac bench <scene> --nd 0,2,4,8 --reps R [--out DIR]
    conjac compare <scene> --out DIR [--steps N] [--until-rest V]

``<scene>`` is a path to a scene file or the name of a shipped scene
(``conjac list`` prints them).
"""

import argparse
import json
import logging
import sys

from .runner import StepFailure, Simulation, bench_scene, compare_scene
from .scene import BUILTIN_SCENES, SceneError, load_scene

EXIT_OK = 0
EXIT_SCENE = 2
EXIT_DIVERGED = 3

log = logging.getLogger('conjac')


def _nd_list(text):
    try:
        values = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated integers, got {text!r}')
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError('need at least one non-negative count')
    return values


def build_parser():
    p = argparse.ArgumentParser(prog='conjac', description=__doc__.split('\n\n')[0].strip())
    p.add_argument('-v', '--verbose', action='count', default=0, help='more log output')
    sub = p.add_subparsers(dest='command', required=True)

    r = sub.add_parser('run', help='simulate a scene and export frames')
    r.add_argument('scene')
    r.add_argument('--out', required=True)
    r.add_argument('--steps', type=int, default=None)
    r.add_argument('--export-every', type=int, default=1, help='frame interval (0 disables frames)')
    r.add_argument('--seed', type=int, default=0)

    b = sub.add_parser('bench', help='per-step cost against the number of dynamic nodes')
    b.add_argument('scene')
    b.add_argument('--nd', type=_nd_list, default=[0, 2, 4, 8])
    b.add_argument('--reps', type=int, default=10)
    b.add_argument('--out', default=None)
    b.add_argument('--seed', type=int, default=0)

    c = sub.add_parser('compare', help='run the full-space and condensed integrators side by side')
    c.add_argument('scene')
    c.add_argument('--out', required=True)
    c.add_argument('--steps', type=int, default=None)
    c.add_argument('--until-rest', type=float, default=None, metavar='SPEED',
                   help='keep stepping until the largest speed is below SPEED (m/s)')
    c.add_argument('--seed', type=int, default=0)

    sub.add_parser('list', help='list shipped scenes')
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format='%(levelname)s %(name)s: %(message)s')
    if args.command == 'list':
        for path in sorted(BUILTIN_SCENES.glob('*.yaml')):
            print(path.stem)
        return EXIT_OK

    try:
        scene = load_scene(args.scene, seed=args.seed)
    except SceneError as exc:
        print(f'scene error: {exc}', file=sys.stderr)
        return EXIT_SCENE

    try:
        if args.command == 'run':
            sim = Simulation(scene)
            rows = sim.run(args.steps or scene.steps, args.out, args.export_every)
            last = rows[-1] if rows else {}
            print(f'{len(rows)} steps, t = {last.get("t_s", 0.0):.4f} s, '
                  f'n_d = {last.get("n_dynamic", 0)}, output in {args.out}')
        elif args.command == 'bench':
            res = bench_scene(scene, args.nd, args.reps, args.out)
            print(f'{"n_d":>5} {"step [s]":>12} {"rhs/step":>9}')
            for row in res['rows']:
                print(f'{row["n_dynamic"]:>5} {row["mean_step_s"]:>12.5f} {row["rhs_solves_per_step"]:>9.2f}')
            print(f'solve count slope: {res["solve_slope"]:.3f} per dynamic node')
            print(f'time slope: {res["time_slope_s"]:.3e} s per dynamic node')
        elif args.command == 'compare':
            rep = compare_scene(scene, args.out, args.steps, args.until_rest)
            rep.pop('runs')
            print(json.dumps(rep, indent=2))
    except StepFailure as exc:
        print(f'simulation diverged: {exc}', file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
