"""Incremental build-infer-approximate inference for discrete Bayesian networks."""
from .engine import QueryResult, Slctf, construct_slctf, infer_mar_e, infer_mar_p, infer_pr, run
from .errors import SlctfError
from .factor import FactorTable
from .network import BayesNet, random_bayesnet, random_evidence, simplify

__all__ = ["BayesNet", "FactorTable", "QueryResult", "Slctf", "SlctfError", "construct_slctf",
           "infer_mar_e", "infer_mar_p", "infer_pr", "random_bayesnet", "random_evidence", "run", "simplify"]
__version__ = "0.1.0"
