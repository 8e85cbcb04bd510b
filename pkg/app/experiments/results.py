'''
Result files: one JSON document mirroring ResultRecord and one flat CSV table, both
UTF-8 with LF line endings. Floats are written with 17 significant digits.
'''
import csv
import json
import logging
import os
from statistics import median

from app.exceptions import ArgumentError, ConfigurationError
from app.models import jsonable


def format_value(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (int, str)):
        return str(value)
    return '%.17g' % float(value)


def flatten(row):
    '''complex cells split into <name>_re, <name>_im; lists become [re, im] pairs in JSON'''
    out = {}
    for k, v in row.items():
        if hasattr(v, 'item'):
            v = v.item()
        if isinstance(v, complex):
            out[f"{k}_re"], out[f"{k}_im"] = v.real, v.imag
        else:
            out[k] = v
    return out


def write_table(path, rows, columns=None):
    rows = [flatten(r) for r in rows]
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for r in rows:
            writer.writerow([format_value(r.get(c)) for c in columns])
    return path


def write_record(record, stem):
    '''Writes <stem>.json and <stem>.csv, returns both paths'''
    folder = os.path.dirname(stem)
    if folder:
        os.makedirs(folder, exist_ok=True)
    doc = record.toDict()
    rows = [flatten(r) for r in record.rows]
    doc['rows'] = jsonable(rows)
    doc['columns'] = list(rows[0].keys()) if rows else []
    json_path, csv_path = f"{stem}.json", f"{stem}.csv"
    with open(json_path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write('\n')
    write_table(csv_path, rows, doc['columns'])
    logging.info("wrote %s and %s", json_path, csv_path)
    return json_path, csv_path


def read_record(path):
    try:
        with open(path, encoding='utf-8') as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"unreadable result file {path}: {e}", payload={'path': str(path)})
    for key in ('config', 'rows', 'summary'):
        if key not in doc:
            raise ConfigurationError(f"result file {path} has no {key!r}", payload={'path': str(path)})
    return doc


def _require(doc, *experiments):
    found = doc['config'].get('experiment')
    if found not in experiments:
        raise ArgumentError(f"view needs a {' or '.join(experiments)} result, got {found!r}")


def rho_vs_eta(doc):
    _require(doc, 'mde-scan')
    rows = sorted(doc['rows'], key=lambda r: (r['z_abs'], r['eta']))
    return ['z_abs', 'eta', 'rho'], [{k: r[k] for k in ('z_abs', 'eta', 'rho')} for r in rows]


def stat_vs_N(doc):
    _require(doc, 'deloc')
    out = []
    for N in sorted({r['N'] for r in doc['rows']}):
        stats = [r['statistic'] for r in doc['rows'] if r['N'] == N and r['basis'] == 'coordinate']
        out.append({'N': N, 'median': median(stats), 'max': max(stats), 'trials': len(stats)})
    return ['N', 'median', 'max', 'trials'], out


def x1_vs_t(doc):
    _require(doc, 'flow-drift', 'flow-qv')
    out = []
    for t in sorted({r['t'] for r in doc['rows']}):
        at = [r for r in doc['rows'] if r['t'] == t]
        out.append({
            't': t,
            'X1ave_re': sum(r['X1ave_re'] for r in at) / len(at),
            'X1ave_im': sum(r['X1ave_im'] for r in at) / len(at),
            'trajectories': len(at),
        })
    return ['t', 'X1ave_re', 'X1ave_im', 'trajectories'], out


def eta_vs_t(doc):
    _require(doc, 'char-audit')
    columns = ['t', 'z_T', 'eta', 'rho', 'eta_rho']
    return columns, [{k: r[k] for k in columns} for r in doc['rows']]


def z1_vs_z(doc):
    _require(doc, 'locallaw-scan')
    columns = ['z_abs', 'eta', 'trial', 'Z1_re', 'Z1_im', 'Z2_re', 'Z2_im']
    return columns, [{k: r[k] for k in columns} for r in doc['rows']]


def ks_samples(doc):
    _require(doc, 'ensemble-compare')
    columns = ['trial', 'Z1_A', 'Z1_B', 'Z2_A', 'Z2_B']
    return columns, [{k: r[k] for k in columns} for r in doc['rows']]


VIEWS = {
    'rho-vs-eta': rho_vs_eta,
    'stat-vs-N': stat_vs_N,
    'X1-vs-t': x1_vs_t,
    'eta-vs-t': eta_vs_t,
    'Z1-vs-z': z1_vs_z,
    'ks-samples': ks_samples,
}


def emit_plot_data(result_path, view, out=None):
    '''Re-project stored rows into a named view; no recomputation'''
    if view not in VIEWS:
        raise ArgumentError(f"unknown view {view!r}; choose from {', '.join(sorted(VIEWS))}")
    doc = read_record(result_path)
    columns, rows = VIEWS[view](jsonable(doc))
    if out is None:
        out = f"{os.path.splitext(result_path)[0]}.{view}.csv"
    return write_table(out, rows, columns)
