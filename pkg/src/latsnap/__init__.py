"""Lattice agreement and atomic snapshot protocols on a simulated network."""

from .lattice import ConfigError, TaggedValue, Timestamp, eq_predicate, filter_by_tag, join
from .simnet import (ClientOp, CrashSpec, ExecutionTrace, FixedDelay, ScriptedDelay, UniformDelay,
                     exposed_values, make_failure_chain_schedule, rounds_between, run)
from .ela import ElaNode, ela_automata
from .acaso import AcAsoNode, acaso_automata, extract, scan_op, update_op
from .tsaso import TsAsoNode, tsaso_automata
from .uqsm import UqNode, query_op, uq_automata

__version__ = "0.1.0"
