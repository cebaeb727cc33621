from attacks import advdm, embedding_attack, pgd_classifier, pgd_dm
from attacks.base import (
    AttackContext,
    AttackFactory,
    BudgetReport,
    PerturbationState,
    TraceRow,
    no_attack,
    verify_budget,
    write_trace_csv,
)


def register_builtin_attacks():
    AttackFactory.register("none", no_attack)
    AttackFactory.register("advdm", advdm.run)
    AttackFactory.register("pgd_dm", pgd_dm.run)
    AttackFactory.register("embedding", embedding_attack.run)
    AttackFactory.register("pgd_classifier", pgd_classifier.run)


register_builtin_attacks()

__all__ = [
    "AttackContext", "AttackFactory", "BudgetReport", "PerturbationState", "TraceRow",
    "verify_budget", "write_trace_csv", "register_builtin_attacks",
]
