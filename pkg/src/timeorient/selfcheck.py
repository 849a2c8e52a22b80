"""In-process verification of the imputation pipeline against synthetic discounters."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .adapters import Exponential, QuasiHyperbolic, synthetic_switch_oracle
from .econometrics import ImputationRule, ImputedPreference, impute_discount, paper_never_value
from .instrument import PriceList, build_price_list, default_price_list
from .parser import OutcomeKind, SwitchOutcome

Imputer = Callable[[SwitchOutcome, PriceList, ImputationRule], ImputedPreference]

# weekly factors 0.700, 0.705, ..., 1.000 as exact fractions
WEEKLY_GRID = tuple(Fraction(k, 200) for k in range(140, 201))
BETA_GRID = (Fraction(1, 5), Fraction(1, 2), Fraction(4, 5), Fraction(1))


@dataclass
class CheckResult:
    failures: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def check_round_trip(pl: PriceList | None = None, imputer: Imputer = impute_discount,
                     grid=WEEKLY_GRID) -> CheckResult:
    """Imputed factor must land within one price step of the true gap factor."""
    pl = pl or default_price_list()
    result = CheckResult()
    tolerance = Fraction(pl.step, pl.ll_amount)
    lowest = Fraction(pl.questions[-1].ss_amount, pl.ll_amount)
    never_value = paper_never_value(pl)
    for d in grid:
        truth = d ** pl.gap_weeks
        outcome = synthetic_switch_oracle(Exponential(d), pl)
        imputed = imputer(outcome, pl, ImputationRule.PAPER_ENDPOINT).delta
        result.checked += 1
        if truth >= lowest:
            if outcome.kind is not OutcomeKind.SWITCH_AT:
                result.failures.append(f"round-trip: d={float(d):.3f} expected a switch, got {outcome}")
            elif abs(imputed - truth) > tolerance:
                result.failures.append(
                    f"round-trip: d={float(d):.3f} imputed {float(imputed):.4f} vs "
                    f"d^{pl.gap_weeks}={float(truth):.4f} (tolerance {float(tolerance):.2f})"
                )
        elif outcome.kind is not OutcomeKind.NEVER_SWITCH or imputed != never_value:
            result.failures.append(
                f"round-trip: d={float(d):.3f} expected NeverSwitch -> {float(never_value):.2f}, "
                f"got {outcome} -> {float(imputed):.4f}"
            )
    return result


def check_beta_invariance(pl: PriceList | None = None, grid=WEEKLY_GRID,
                          betas=BETA_GRID) -> CheckResult:
    pl = pl or default_price_list()
    result = CheckResult()
    for d in grid:
        outcomes = {str(synthetic_switch_oracle(QuasiHyperbolic(b, d), pl)) for b in betas}
        result.checked += 1
        if len(outcomes) != 1:
            result.failures.append(f"beta-invariance: d={float(d):.3f} outcomes vary {sorted(outcomes)}")
    return result


def beta_sensitivity_without_front_end(grid=WEEKLY_GRID, betas=BETA_GRID) -> int:
    """Count weekly factors whose switch point moves with beta once the sooner delay is 0."""
    pl = build_price_list(20, 20, 1, 8, 0, 3)
    moved = 0
    for d in grid:
        outcomes = {str(synthetic_switch_oracle(QuasiHyperbolic(b, d), pl)) for b in betas}
        moved += len(outcomes) > 1
    return moved


def check_monotone_and_dominance(pl: PriceList | None = None, grid=WEEKLY_GRID) -> CheckResult:
    pl = pl or default_price_list()
    result = CheckResult()
    rank = len(pl) + 1
    for d in grid:
        outcome = synthetic_switch_oracle(Exponential(d), pl)
        index = outcome.index if outcome.index is not None else len(pl) + 1
        result.checked += 1
        if index == 1:
            result.failures.append(f"dominance: d={float(d):.3f} answered 1")
        if index > rank:
            result.failures.append(f"monotonicity: switch index rose at d={float(d):.3f}")
        rank = index
    return result


def synth_check(imputer: Imputer = impute_discount) -> CheckResult:
    total = CheckResult()
    for part in (check_round_trip(imputer=imputer), check_beta_invariance(),
                 check_monotone_and_dominance()):
        total.failures.extend(part.failures)
        total.checked += part.checked
    moved = beta_sensitivity_without_front_end()
    total.notes.append(
        f"without a front-end delay, beta moves the switch point for {moved}/{len(WEEKLY_GRID)} "
        "weekly factors (expected: present bias is only cancelled by the 1-week front end)"
    )
    return total
