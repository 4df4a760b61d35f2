"""Grey-box fuzzer with a CFG-reachability weighted corpus scheduler."""

from .cfgstore import BasicBlockInfo, CfgDump, CfgStore
from .config import CampaignConfig, load_config
from .engine import CampaignStats, CorpusEntry, run_campaign
from .instrument import InstrumentedProgram, needs_instrumenting, run_pass
from .interp import ExecutionTrace, execute, link
from .ir import IrBlock, IrFunction, IrModule, ParseError, parse_module
from .reach import CfgIndex, build_index, calc_reachable_blocks, resolve_definition
from .report import a12, relative_median_table, run_benchmark
from .sched import (
    PowerScheduler,
    PrescientScheduler,
    RandomScheduler,
    WorkClock,
    compute_score,
)

__version__ = "0.1.0"
