'''
One runner per experiment. A runner takes an ExperimentConfig and a thread cap and
returns (rows, summary, criteria); run_experiment wraps that in a ResultRecord.
'''
import logging
from dataclasses import replace

import numpy as np
import pendulum

from app import __version__
from app.characteristics import (check_lemma_chars, etarho_profile, integrate_backward, landmark_times,
                                 propagator_bounds)
from app.deloc import (
    coordinate_basis, deloc_statistic, eigen_decompose, ensemble_comparison, random_basis,
    spectral_bound_check, spectral_radius_check,
)
from app.ensemble import PROBE, EnsembleSpec, map_trials, sample_iid, second_moment, stream
from app.exceptions import ConfigurationError
from app.flow import default_dt, drift_consistency, martingale_sup_check, observed_order, qv_bound_check, simulate_flow
from app.hermitization import hermitize, resolvent, ward_defect
from app.locallaw import DomainParams, EtaRule, coordinate_probe, grid_scan, random_probe, schwarz_checks
from app.mde import (
    SpectralPoint, m_prime_bound, m_prime_fd, rho_envelope, solve_eta_for_product, solve_mde,
)
from app.models import ResultRecord

RESIDUAL_MAX = 1e-12
M_PRIME_RTOL = 1e-4
CONSERVATION_RTOL = 1e-8
PROPAGATOR_PAIRS = 100
SCHWARZ_POWERS = ((1, 1), (1, 2), (2, 2))
PASS_FRACTION = 0.95
X1_BOUND_FRACTION = 0.9


def spec_of(cfg, N=None):
    return EnsembleSpec(N=cfg.N if N is None else N, field=cfg.field, distribution=cfg.distribution, seed=cfg.seed)


def product_target(cfg, N):
    return cfg.c * np.log(N) / N


def run_mde_scan(cfg, threads):
    zs = cfg.z if cfg.z is not None else tuple(np.linspace(0.0, 1.5, cfg.grid_points))
    etas = cfg.eta if cfg.eta is not None else tuple(np.logspace(-8, np.log10(0.5), cfg.grid_points))
    F = cfg.envelope_factor

    def row(point):
        sol = solve_mde(point)
        lo, hi = rho_envelope(point, F)
        fd = m_prime_fd(point)
        ratio = point.eta / sol.rho
        bound = m_prime_bound(sol)
        return {
            'z_abs': abs(point.z),
            'eta': point.eta,
            'a': sol.a,
            'u': sol.u,
            'rho': sol.rho,
            'm_prime_trace': sol.m_prime_trace,
            'm_prime_fd': fd,
            'residual': sol.residual,
            'branch_ok': sol.a > 0 and 0 < sol.u < 1,
            'envelope_ok': lo <= sol.rho <= hi,
            'envelope_ratio': max(sol.rho * F / hi, hi / (F * sol.rho)),
            # relative where |<M'>| >= 1, absolute near its sign change
            'm_prime_rel_err': abs(sol.m_prime_trace - fd) / max(abs(sol.m_prime_trace), 1.0),
            'm_prime_bound_ok': ratio > 1e-2 or abs(sol.m_prime_trace) <= (1 + 10 * ratio) * bound,
        }

    points = [SpectralPoint(complex(z), float(eta)) for z in zs for eta in etas]
    rows = map_trials(row, points, threads)
    summary = {
        'points': len(rows),
        'max_residual': max(r['residual'] for r in rows),
        'worst_envelope_ratio': max(r['envelope_ratio'] for r in rows),
        'max_m_prime_rel_err': max(r['m_prime_rel_err'] for r in rows),
    }
    criteria = {
        'residual': summary['max_residual'] <= RESIDUAL_MAX,
        'branch': all(r['branch_ok'] for r in rows),
        'rho_envelope': all(r['envelope_ok'] for r in rows),
        'm_prime_fd': summary['max_m_prime_rel_err'] <= M_PRIME_RTOL,
        'm_prime_bound': all(r['m_prime_bound_ok'] for r in rows),
    }
    return rows, summary, criteria


def run_char_audit(cfg, threads):
    N, xi = cfg.N, cfg.xi
    bump = 1 + N ** (-10 * xi)
    ends = cfg.z if cfg.z is not None else (0.9, 1.0, bump)
    T = N ** (-xi)
    A = product_target(cfg, N)
    rng = stream(cfg.seed, PROBE)

    rows, audits = [], []
    for z_T in ends:
        eta_T = solve_eta_for_product(z_T, A, a_star=cfg.a_star)
        char = integrate_backward(SpectralPoint(complex(z_T), eta_T), T, steps=cfg.steps)
        char = char.with_landmarks(landmark_times(char, xi, N))
        report = check_lemma_chars(char, xi, N, cfg.envelope_factor)
        pairs = np.sort(rng.uniform(0.0, T, size=(PROPAGATOR_PAIRS, 2)), axis=1)
        checks = [propagator_bounds(char, s, t, cfg.envelope_factor) for s, t in pairs]
        report.update({
            'z_T': z_T,
            'eta_T': eta_T,
            'conservation_defect': char.conservation_defect(),
            'etarho_profile': etarho_profile(char),
            'propagator_ok': all(c['ok'] for c in checks),
            'refined_propagator_ok': all(c['refined_ok'] for c in checks) if char.t_star > 0 else None,
        })
        audits.append(report)
        for r in char.rows():
            rows.append({'t': r['t'], 'z_T': z_T, **{k: v for k, v in r.items() if k != 't'}})
    summary = {'N': N, 'xi': xi, 'T': T, 'A': A, 'audits': audits}
    criteria = {
        'lemma_items': all(a['passed'] for a in audits),
        'conservation': all(a['conservation_defect'] <= CONSERVATION_RTOL for a in audits),
        'propagator': all(a['propagator_ok'] for a in audits),
    }
    return rows, summary, criteria


def _etas(cfg):
    if cfg.eta_rule == 'fixed':
        return EtaRule('fixed', etas=tuple(cfg.eta))
    return EtaRule('product', c=cfg.c, a_star=cfg.a_star)


def run_locallaw_scan(cfg, threads):
    spec = spec_of(cfg)
    N = cfg.N
    params = DomainParams(C=cfg.C, xi=cfg.xi, N=N)
    zs = cfg.z if cfg.z is not None else (0.0, 0.5, 0.9)
    rule = _etas(cfg)

    def trial(k):
        X = sample_iid(spec, keys=(k,))
        return X, grid_scan(X, params, zs, rule)

    results = map_trials(trial, range(cfg.trials), threads)
    rows = []
    for k, (_, samples) in enumerate(results):
        for s in samples:
            d = s.toDict()
            rows.append({'z_abs': abs(s.point.z), 'eta': s.point.eta, 'trial': k,
                         **{key: v for key, v in d.items() if key != 'eta'}})
    logN = np.log(N)
    z1_ok = [abs(complex(r['Z1_re'], r['Z1_im'])) <= 10 * logN for r in rows]
    z2_ok = [abs(complex(r['Z2_re'], r['Z2_im'])) <= 10 * np.sqrt(logN) for r in rows]

    # deterministic identities on the first trial
    X0, samples0 = results[0]
    u = coordinate_probe(N)
    v = random_probe(N, stream(cfg.seed, PROBE))
    ward, schwarz = [], []
    for s in samples0:
        R = resolvent(hermitize(X0, s.point.z), s.point.eta)
        ward.append(ward_defect(R))
        schwarz.extend(schwarz_checks(R, 'I', u, v, p, q) for p, q in SCHWARZ_POWERS)
    summary = {
        'Z1_fraction': float(np.mean(z1_ok)),
        'Z2_fraction': float(np.mean(z2_ok)),
        'Z1_p95_over_logN': float(np.percentile([abs(complex(r['Z1_re'], r['Z1_im'])) for r in rows], 95) / logN),
        'in_domain_fraction': float(np.mean([bool(r['in_domain']) for r in rows])),
        'max_ward_defect': max(ward),
        'schwarz_worst_ratio': max(s['worst_ratio'] for s in schwarz),
        'schwarz_gated': sum(not s['averaged_event'] for s in schwarz),
    }
    criteria = {
        'Z1': summary['Z1_fraction'] >= PASS_FRACTION,
        'Z2': summary['Z2_fraction'] >= PASS_FRACTION,
        'ward': summary['max_ward_defect'] <= 1e-10,
        'schwarz': all(s['passed'] for s in schwarz),
    }
    return rows, summary, criteria


def _flow_setup(cfg):
    z_T = cfg.z[0] if cfg.z else 0.0
    eta_T = solve_eta_for_product(z_T, product_target(cfg, cfg.N), a_star=cfg.a_star)
    char = integrate_backward(SpectralPoint(complex(z_T), eta_T), cfg.T, steps=cfg.steps)
    dt = cfg.dt if cfg.dt is not None else default_dt(char)
    return char, dt


def _trajectories(cfg, char, dt, threads, noise=None):
    spec = spec_of(cfg)
    noise = cfg.noise if noise is None else noise

    def one(k):
        return simulate_flow(sample_iid(spec, keys=(k,)), char, dt, noise=noise)

    return map_trials(one, range(cfg.trials), threads)


def _flow_rows(trajs):
    rows = []
    for k, traj in enumerate(trajs):
        for r in traj.rows():
            rows.append({'t': r['t'], 'trial': k, **{key: v for key, v in r.items() if key != 't'}})
    return rows


def run_flow_drift(cfg, threads):
    char, dt = _flow_setup(cfg)
    trajs = _trajectories(cfg, char, dt, threads)
    report = drift_consistency(trajs, cfg.include_beta_term, min_count=1 if not cfg.noise else 100)
    N = cfg.N
    bound = 10 * np.log(N) / (N * char.eta)
    within = [bool(np.all(np.abs(t.X1ave) <= np.interp(t.times, char.t, bound))) for t in trajs]
    moments = np.array([t.second_moments for t in trajs]).mean(axis=0)
    summary = {'dt': dt, 'steps': len(trajs[0]) - 1, 'drift': report,
               'X1_bound_fraction': float(np.mean(within)),
               'second_moment_range': [float(moments.min()), float(moments.max())]}
    criteria = {'drift': report['passed'],
                'X1_bound': summary['X1_bound_fraction'] >= X1_BOUND_FRACTION,
                'second_moment': bool(np.all(np.abs(moments - 1.0) <= 0.1))}
    if not cfg.noise:
        fine = simulate_flow(sample_iid(spec_of(cfg), keys=(0,)), char, dt / 2, noise=False)
        order = observed_order(trajs[0], fine, cfg.include_beta_term)
        summary['observed_order'] = order
        criteria['order'] = order >= 0.9
    return _flow_rows(trajs), summary, criteria


def run_flow_qv(cfg, threads):
    char, dt = _flow_setup(cfg)
    trajs = _trajectories(cfg, char, dt, threads, noise=True)
    checks = [qv_bound_check(t) for t in trajs]
    sups = [martingale_sup_check(t) for t in trajs]
    windows = [w['ok'] for c in checks for w in c['windows']]
    summary = {
        'dt': dt,
        'gated_steps': sum(c['gated_steps'] for c in checks),
        'worst_integrand_ratio': max(c['worst_integrand_ratio'] for c in checks),
        'window_pass_fraction': float(np.mean(windows)) if windows else 1.0,
        'sup_worst_ratio': max(s['worst_ratio'] for s in sups),
        'sup_passed': all(s['passed'] for s in sups),
    }
    criteria = {
        'integrand': all(c['integrand_ok'] for c in checks),
        'windows': summary['window_pass_fraction'] >= PASS_FRACTION,
    }
    return _flow_rows(trajs), summary, criteria


def run_deloc(cfg, threads):
    sizes = cfg.sizes if cfg.sizes else (cfg.N,)

    def trial(job):
        N, k = job
        X = sample_iid(spec_of(cfg, N), keys=(k,))
        pairs = eigen_decompose(X)
        meta = {'trial': k}
        reports = [deloc_statistic(pairs, coordinate_basis(), N, meta),
                   deloc_statistic(pairs, random_basis(N, cfg.seed, keys=(N, k)), N, meta)]
        return N, k, reports, spectral_radius_check(pairs, N, cfg.envelope_factor)

    results = map_trials(trial, [(N, k) for N in sizes for k in range(cfg.trials)], threads)
    rows = []
    for N, k, reports, radius in results:
        for rep in reports:
            rows.append({'N': N, 'trial': k, 'basis': rep.basis.split(' ')[0], 'statistic': rep.statistic,
                         'excluded': rep.excluded, 'radius': radius['radius']})
    medians = {N: float(np.median([r['statistic'] for r in rows if r['N'] == N and r['basis'] == 'coordinate']))
               for N in sizes}
    growth = medians[max(sizes)] / medians[min(sizes)] - 1.0
    summary = {'medians': medians, 'median_growth': growth,
               'max_statistic': max(r['statistic'] for r in rows),
               'radius_ok': all(res[3]['passed'] for res in results)}
    criteria = {'statistic_cap': summary['max_statistic'] <= cfg.statistic_cap}
    if len(sizes) > 1:
        criteria['median_growth'] = growth <= 0.2
    return rows, summary, criteria


def run_impbound(cfg, threads):
    spec = spec_of(cfg)
    N = cfg.N

    def trial(k):
        X = sample_iid(spec, keys=(k,))
        rng = stream(cfg.seed, PROBE, k)
        x_random = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        x_random /= np.linalg.norm(x_random)
        x_coord = np.zeros(N, dtype=complex)
        x_coord[0] = 1.0
        out = []
        for pair in eigen_decompose(X):
            if pair.defective or abs(pair.sigma) > cfg.sigma_max:
                continue
            for name, x1 in (('coordinate', x_coord), ('random', x_random)):
                rep = spectral_bound_check(X, pair, x1, C=cfg.C, c=cfg.c, a_star=cfg.a_star)
                out.append({'eta': rep['eta'], 'trial': k, 'sigma_re': pair.sigma.real, 'sigma_im': pair.sigma.imag,
                            'probe': name, 'right_lhs': rep['right']['lhs'], 'right_rhs': rep['right']['rhs'],
                            'left_lhs': rep['left']['lhs'], 'left_rhs': rep['left']['rhs'],
                            'passed': rep['passed']})
        return out

    rows = [r for chunk in map_trials(trial, range(cfg.trials), threads) for r in chunk]
    violations = sum(not r['passed'] for r in rows)
    summary = {'checks': len(rows), 'violations': violations,
               'min_slack': min((min(r['right_rhs'] - r['right_lhs'], r['left_rhs'] - r['left_lhs'])
                                 for r in rows), default=None)}
    return rows, summary, {'spectral_bound': violations == 0}


def run_ensemble_compare(cfg, threads):
    specA = spec_of(cfg)
    specB = replace(specA, distribution=cfg.compare_distribution, scale=cfg.compare_scale)
    z = cfg.z[0] if cfg.z else 0.0
    report = ensemble_comparison(specA, specB, cfg.trials, z=z, c=cfg.c, a_star=cfg.a_star,
                                 ks_cap=cfg.ks_cap, threads=threads, divisible_T=cfg.compare_T)
    samples = report.pop('samples')
    rows = [{'trial': k, 'Z1_A': samples['Z1_A'][k], 'Z1_B': samples['Z1_B'][k],
             'Z2_A': samples['Z2_A'][k], 'Z2_B': samples['Z2_B'][k]} for k in range(cfg.trials)]
    return rows, report, {'ks': report['passed']}


RUNNERS = {
    'mde-scan': run_mde_scan,
    'char-audit': run_char_audit,
    'locallaw-scan': run_locallaw_scan,
    'flow-drift': run_flow_drift,
    'flow-qv': run_flow_qv,
    'deloc': run_deloc,
    'impbound': run_impbound,
    'ensemble-compare': run_ensemble_compare,
}


def run_experiment(cfg, threads=1):
    runner = RUNNERS.get(cfg.experiment)
    if runner is None:
        raise ConfigurationError(f"unknown experiment {cfg.experiment!r}", payload={'field': 'experiment'})
    started = pendulum.now('UTC')
    logging.info("running %s: N=%d seed=%d trials=%d threads=%d", cfg.experiment, cfg.N, cfg.seed, cfg.trials, threads)
    rows, summary, criteria = runner(cfg, threads)
    finished = pendulum.now('UTC')
    columns = list(rows[0].keys()) if rows else []
    record = ResultRecord(config=cfg, rows=rows, summary=summary, criteria={k: bool(v) for k, v in criteria.items()},
                          timestamp=finished.to_iso8601_string(),
                          wall_clock=(finished - started).total_seconds(),
                          version=__version__, columns=columns)
    failed = [k for k, v in record.criteria.items() if not v]
    if failed:
        logging.warning("%s failed criteria: %s", cfg.experiment, ', '.join(failed))
    return record
