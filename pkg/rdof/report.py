# Use Rich tables to print run and study summaries

from rich.console import Console
from rich.table import Table
from rdof.datamodels import AdjustmentReport, Spec, StudyResult, AXES
from rdof.adjust import summary
from rdof.console import console


def _p(v: float) -> str:
    return f"{v:.4g}"


def print_headline(report: AdjustmentReport, holm: bool, console: Console):
    """Smallest p-value with its multiplicity-adjusted evidence"""
    s = summary(report)
    table = Table(title="Selected specification:", title_justify="left")
    table.add_column("", style="cyan", no_wrap=True)
    table.add_column("Value", justify="right", style="magenta")
    table.add_row("minP-adjusted p_(1)", _p(s["minp_min"]), style="bold")
    table.add_row("raw p_(1)", _p(s["p_min"]))
    table.add_row(
        "specification",
        f"#{s['p_min_spec_id']}: "
        + " / ".join(f"{k}={v}" for k, v in s["winning_spec"].items()),
    )
    table.add_row("Bonferroni p_(1)", _p(s["bonferroni_min"]))
    if holm:
        table.add_row("Holm p_(1)", _p(s["holm_min"]))
    table.add_row("specs m", str(s["m"]))
    table.add_row("permutations B", str(s["B"]))
    table.add_row(
        f"rejected by minP at {s['alpha']}", f"{s['rejected_count']} of {s['m']}"
    )
    console.print(table)


def print_top(report: AdjustmentReport, n: int, holm: bool, console: Console):
    """The n specifications with the smallest raw p-values"""
    p = report.raw.pvalues
    ids = [e.spec_id for e in report.raw.entries]
    order = sorted(range(report.raw.m), key=lambda i: (p[i], ids[i]))
    table = Table(title=f"Top {n} specifications:", header_style="bold magenta")
    table.add_column("Spec", justify="right", style="cyan")
    for axis in AXES:
        table.add_column(axis.capitalize(), justify="center")
    table.add_column("minP", justify="right", style="green")
    table.add_column("Raw", justify="right")
    table.add_column("Bonferroni", justify="right")
    if holm:
        table.add_column("Holm", justify="right")
    table.add_column("Notes", justify="left")

    for i in order[:n]:
        e = report.raw.entries[i]
        row = [str(e.spec_id), *(e.options.get(axis, "") for axis in AXES)]
        row += [_p(report.minp[i]), _p(e.p_value), _p(report.bonferroni[i])]
        if holm:
            row.append(_p(report.holm[i]))
        row.append(e.notes or "")
        table.add_row(*row, style="red" if report.rejected_minp[i] else None)
    console.print(table)


def print_specs(specs: list[Spec], console: Console):
    """Enumerated specification tree"""
    axes = list(specs[0].options)
    table = Table(title=f"{len(specs)} specifications:", header_style="bold magenta")
    table.add_column("Spec", justify="right", style="cyan")
    for axis in axes:
        table.add_column(axis.capitalize(), justify="center")
    for s in specs:
        table.add_row(str(s.spec_id), *(s.options[a] for a in axes))
    console.print(table)


def print_gen_summary(stats: dict, path, console: Console):
    table = Table(title=f"Generated {path}:", title_justify="left")
    table.add_column("Cases", justify="right", style="cyan")
    table.add_column("Rows", justify="right")
    table.add_column("Missing pao2", justify="right", style="magenta")
    table.add_column("Outcome rate", justify="right")
    table.add_row(
        str(stats["cases"]),
        str(stats["rows"]),
        f"{stats['missing']} ({stats['missing_rate']:.1%})",
        f"{stats['outcome_rate']:.1%}",
    )
    console.print(table)


def print_study(result: StudyResult, console: Console):
    """Study estimates with confidence intervals"""
    table = Table(title=f"{str(result.study).upper()} study:", header_style="bold magenta")
    table.add_column("n", justify="right", style="cyan")
    table.add_column("alpha", justify="right")
    table.add_column("Method", justify="left")
    table.add_column("Estimate", justify="right", style="green")
    table.add_column("95% CI", justify="center")

    for r in sorted(result.rows, key=lambda r: (r.n, r.alpha)):
        table.add_row(
            str(r.n),
            f"{r.alpha:g}",
            str(r.method),
            f"{r.estimate:.3f}",
            f"[{r.ci_low:.3f}, {r.ci_high:.3f}]",
        )
    console.print(table)

    failed = [c for c in result.checks if not c.holds]
    if failed:
        for c in failed:
            console.print(
                f"Ordering check failed at n={c.n}, alpha={c.alpha:g}: {c.values}",
                style="bold red",
            )
    else:
        console.print("Ordering checks hold at every n and alpha", style="green")


def print_report(report: AdjustmentReport, holm: bool = False, top: int = 0):
    """Pretty print a multiverse run to the console"""
    print_headline(report, holm, console)
    if top:
        print_top(report, top, holm, console)
