"""
Command-line interface for NL-RLDA
Subcommands: train, predict, sweep, profile, montecarlo, consistency, asymptotic

Exit codes: 0 success, 2 input error, 3 degenerate classifier, 4 numerical failure
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from asymptotics import AsymptoticSettings
from classifier import (
    GammaGrid,
    load_model,
    predict_scores,
    save_model,
    train,
    train_fixed,
)
from core_stats import LabeledDataset, read_feature_matrix, write_csv
from errors import ConfigError, RLDAError
from harness import (
    ExperimentSpec,
    run_asymptotic,
    run_consistency_check,
    run_gamma_profile,
    run_montecarlo,
    spec_hash,
)
from risk import RiskSettings, write_risk_curve
from settings import configure_logging, load_runtime_settings, read_config_file
from synth import CovModel, ScenarioConfig, class_counts, sample_gaussian, trial_rng

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = {'profile': 500, 'montecarlo': 100, 'consistency': 100, 'asymptotic': 100}


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in str(text).split(',') if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from e
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='flat key = value file with defaults for any flag')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--workers', type=int, default=None, help='thread pool size for trials and grids')
    parser.add_argument('--out', help='output CSV path')
    parser.add_argument('--gamma-grid', default='default',
                        help="'default', comma list of values, or lo:hi:k in log10")
    parser.add_argument('--theorem2-variant', choices=['appendix', 'theorem'], default='appendix')
    parser.add_argument('--formulas', choices=['standard', 'derived'], default='standard',
                        help='closed-form risk and G-tilde terms, or the re-derived variants')
    parser.add_argument('--c-convention', choices=['ntilde', 'n'], default='ntilde')
    parser.add_argument('--b-normalization', choices=['ntilde', 'p'], default='ntilde',
                        help='prefactor of the b(z) sum; p also returns w = 1 - c - c z b')
    parser.add_argument('--seed', type=int, default=0)


def _add_scenario(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--p', type=_int_list, default=[100], help='dimension (comma list allowed)')
    parser.add_argument('--n', type=_int_list, default=[50], help='training size (comma list allowed)')
    parser.add_argument('--n0', type=int, default=None, help='class-0 training count (overrides --n/--pi0)')
    parser.add_argument('--n1', type=int, default=None, help='class-1 training count (overrides --n/--pi0)')
    parser.add_argument('--pi0', type=float, default=0.5)
    parser.add_argument('--nu2', type=float, default=0.5, help='squared Mahalanobis distance')
    parser.add_argument('--cov-model', type=int, choices=[1, 2, 3], default=1)
    parser.add_argument('--trials', type=int, default=None)
    parser.add_argument('--test-size', type=int, default=1000)
    parser.add_argument('--methods', default='nl', help='comma list of nl, linear_a, linear_b, linear_target, bayes')


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog='nl-rlda', description='Nonlinear regularized LDA')
    sub = parser.add_subparsers(dest='command', required=True)
    commands = {}

    p = sub.add_parser('train', help='fit a classifier from a labeled CSV')
    _add_common(p)
    p.add_argument('--data', required=True)
    p.add_argument('--model', required=True, help='model file to write')
    p.add_argument('--gamma', type=float, default=None, help='fixed gamma, skips the grid search')
    p.add_argument('--methods', default='nl', help='precision kind for a fixed gamma')
    commands['train'] = p

    p = sub.add_parser('predict', help='score a CSV with a saved model')
    _add_common(p)
    p.add_argument('--data', required=True)
    p.add_argument('--model', required=True)
    commands['predict'] = p

    p = sub.add_parser('sweep', help='risk estimate over the gamma grid')
    _add_common(p)
    _add_scenario(p)
    p.add_argument('--data', default=None, help='labeled CSV; a synthetic draw is used when omitted')
    commands['sweep'] = p

    for name, help_text in (('profile', 'test error against gamma for each method'),
                            ('montecarlo', 'trained error against n'),
                            ('consistency', 'risk estimate against the true error'),
                            ('asymptotic', 'deterministic-equivalent curve')):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_scenario(p)
        if name == 'montecarlo':
            p.add_argument('--data', default=None, help='labeled CSV for the real-data protocol')
        if name == 'asymptotic':
            p.add_argument('--montecarlo', action='store_true',
                           help='also average G, D and the test error over sampled trials')
        commands[name] = p
    return parser, commands


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse argv; values from --config become defaults that explicit flags override"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        allowed = [k for k in vars(args) if k not in ('command', 'config')]
        values = read_config_file(args.config, allowed)
        commands[args.command].set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def _risk_settings(args) -> RiskSettings:
    return RiskSettings(e_numerator=args.theorem2_variant, formulas=args.formulas)


def _asymptotic_settings(args) -> AsymptoticSettings:
    return AsymptoticSettings(c_convention=args.c_convention, formulas=args.formulas,
                              b_normalization=args.b_normalization)


def _methods(args) -> Tuple[str, ...]:
    return tuple(m.strip() for m in str(args.methods).split(',') if m.strip())


def _scenario(args, p: Optional[int] = None, n: Optional[int] = None) -> ScenarioConfig:
    p = p if p is not None else args.p[0]
    n = n if n is not None else args.n[0]
    pi0 = args.pi0
    if args.n0 is not None or args.n1 is not None:
        if args.n0 is None or args.n1 is None:
            raise ConfigError("--n0 and --n1 must be given together")
        n = args.n0 + args.n1
        pi0 = args.n0 / n
    trials = args.trials if args.trials is not None else DEFAULT_TRIALS.get(args.command, 100)
    return ScenarioConfig(CovModel(args.cov_model, p), n=n, nu_sq=args.nu2, pi0=pi0,
                          trials=trials, seed=args.seed, test_size=args.test_size)


def _sizes(args) -> Tuple[Tuple[int, int], ...]:
    if args.command == 'consistency':
        ps, ns = args.p, args.n
        if len(ps) == 1:
            ps = ps * len(ns)
        if len(ns) == 1:
            ns = ns * len(ps)
        if len(ps) != len(ns):
            raise ConfigError("--p and --n lists must have the same length")
        return tuple(zip(ps, ns))
    return tuple((args.p[0], n) for n in args.n)


def _spec(args, workers: int) -> ExperimentSpec:
    grid = GammaGrid.parse(args.gamma_grid)
    data = getattr(args, 'data', None)
    common = dict(methods=_methods(args), grid=grid, risk=_risk_settings(args),
                  asymptotic=_asymptotic_settings(args), workers=workers)
    if data:
        return ExperimentSpec(data_path=data, sizes=tuple((0, n) for n in args.n),
                              dataset_trials=args.trials or DEFAULT_TRIALS['montecarlo'],
                              dataset_seed=args.seed, **common)
    return ExperimentSpec(scenario=_scenario(args), sizes=_sizes(args), **common)


def cmd_train(args, workers: int) -> int:
    data = LabeledDataset.from_csv(args.data)
    if args.gamma is not None:
        model = train_fixed(data, args.gamma, _methods(args)[0], settings=_risk_settings(args))
    else:
        model = train(data, GammaGrid.parse(args.gamma_grid), _risk_settings(args), workers)
    save_model(model, args.model)
    if args.out and model.risk_curve:
        write_risk_curve(model.risk_curve, args.out)

    if model.degenerate:
        print(f"✗ Every grid point was degenerate; saved the prior-only classifier to {args.model}")
        return 3
    print(f"✓ Model saved to {args.model} (gamma* = {model.gamma_star:g})")
    return 0


def cmd_predict(args, workers: int) -> int:
    model = load_model(args.model)
    X, _ = read_feature_matrix(args.data)
    scores, labels = predict_scores(model, X)
    frame = pd.DataFrame({'row': np.arange(X.shape[1]), 'score': scores, 'label': labels})
    if args.out:
        write_csv(frame, args.out)
        print(f"✓ Wrote {len(frame)} predictions to {args.out}")
    else:
        print(frame.to_csv(index=False, float_format='%.17g'), end='')
    return 0


def cmd_sweep(args, workers: int) -> int:
    grid = GammaGrid.parse(args.gamma_grid)
    settings = _risk_settings(args)
    if args.data:
        data = LabeledDataset.from_csv(args.data)
        spec = ExperimentSpec(data_path=args.data, grid=grid, risk=settings, dataset_seed=args.seed)
    else:
        scenario = _scenario(args)
        n0, n1 = class_counts(scenario.n, scenario.pi0)
        data = sample_gaussian(scenario.population(), n0, n1, trial_rng(scenario.seed, 0))
        spec = ExperimentSpec(scenario=scenario, grid=grid, risk=settings)
    model = train(data, grid, settings, workers)
    out = args.out or 'risk_curve.csv'
    header = f"spec_hash={spec_hash(spec)} seed={args.seed} grid={args.gamma_grid}"
    write_risk_curve(model.risk_curve, out, header)
    if model.degenerate:
        print(f"✗ All {len(model.risk_curve)} grid points degenerate; curve written to {out}")
        return 3
    print(f"✓ {len(model.risk_curve)} grid points written to {out} (gamma* = {model.gamma_star:g})")
    return 0


def _flag(value) -> bool:
    return str(value).strip().lower() in ('1', 'true', 'yes', 'on')


def _cmd_report(runner, default_out: str, with_montecarlo: bool = False):
    def command(args, workers: int) -> int:
        spec = _spec(args, workers)
        if with_montecarlo:
            report = runner(spec, montecarlo=_flag(args.montecarlo))
        else:
            report = runner(spec)
        paths = report.write_csv(args.out or default_out)
        print(f"✓ Wrote {', '.join(paths)}")
        return 0
    return command


COMMANDS = {
    'train': cmd_train,
    'predict': cmd_predict,
    'sweep': cmd_sweep,
    'profile': _cmd_report(run_gamma_profile, 'profile.csv'),
    'montecarlo': _cmd_report(run_montecarlo, 'montecarlo.csv'),
    'consistency': _cmd_report(run_consistency_check, 'consistency.csv'),
    'asymptotic': _cmd_report(run_asymptotic, 'asymptotic.csv', with_montecarlo=True),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        runtime = load_runtime_settings()
        args = parse_args(argv)
        configure_logging(args.log_level or runtime.log_level)
        workers = args.workers if args.workers is not None else runtime.workers
        return COMMANDS[args.command](args, max(1, workers))
    except RLDAError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"✗ {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
