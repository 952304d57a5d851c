from .problems import Problem, catalog, efficiency_index, evaluate_exact, get_problem

__all__ = ["Problem", "catalog", "efficiency_index", "evaluate_exact", "get_problem"]
