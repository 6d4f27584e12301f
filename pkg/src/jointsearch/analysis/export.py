"""JSON and CSV renderings of analysis results.

CSV columns (stable):

* correlations: ``budget_a,budget_b,spearman,n_shared`` (empty ``spearman``
  when fewer than three trials share both budgets)
* importance: ``budget,parameters,order,fraction,std``
  (pairs are written as ``a|b``)
* marginal curves: ``param,value,unit,mean`` for one parameter,
  ``param_a,value_a,unit_a,param_b,value_b,unit_b,mean`` for a pair
* incumbent trajectory: ``time,trial_id,budget,loss``
"""
from __future__ import annotations

import csv
import io
import json

from .correlation import CorrelationTable
from .fanova import ImportanceReport, MarginalCurve


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else v for v in r])
    return buf.getvalue()


def correlations_csv(table: CorrelationTable) -> str:
    return _csv(["budget_a", "budget_b", "spearman", "n_shared"],
                [(r["budget_a"], r["budget_b"], r["spearman"], r["n_shared"]) for r in table.rows()])


def correlations_json(table: CorrelationTable) -> str:
    return json.dumps({"budgets": table.budgets, "entries": table.rows(),
                       "warning": table.warning}, indent=2)


def importance_csv(report: ImportanceReport) -> str:
    rows = [(report.budget, name, 1, frac, report.singles_std.get(name))
            for name, frac in report.singles.items()]
    rows += [(report.budget, f"{a}|{b}", 2, frac, report.pairs_std.get((a, b)))
             for (a, b), frac in report.pairs.items()]
    return _csv(["budget", "parameters", "order", "fraction", "std"], rows)


def importance_json(report: ImportanceReport) -> str:
    return json.dumps({
        "budget": report.budget,
        "total_variance": report.total_variance,
        "singles": report.singles,
        "pairs": {f"{a}|{b}": v for (a, b), v in report.pairs.items()},
        "warning": report.warning,
    }, indent=2)


def marginal_csv(curve: MarginalCurve) -> str:
    if len(curve.params) == 1:
        (p,), (units,), (values,) = curve.params, curve.grid_unit, curve.grid_values
        return _csv(["param", "value", "unit", "mean"],
                    [(p, v, float(u), float(m)) for v, u, m in zip(values, units, curve.mean)])
    (pa, pb), (ua, ub), (va, vb) = curve.params, curve.grid_unit, curve.grid_values
    rows = [(pa, va[i], float(ua[i]), pb, vb[j], float(ub[j]), float(curve.mean[i, j]))
            for i in range(len(ua)) for j in range(len(ub))]
    return _csv(["param_a", "value_a", "unit_a", "param_b", "value_b", "unit_b", "mean"], rows)


def trajectory_csv(points) -> str:
    return _csv(["time", "trial_id", "budget", "loss"],
                [(p.time, p.trial_id, p.budget, p.loss) for p in points])
