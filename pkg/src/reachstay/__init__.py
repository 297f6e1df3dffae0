"""Controller synthesis for reach-and-stay specifications using interval analysis."""
from .controller import Controller, Trajectory, extract, simulate
from .dynamics import Spec, SystemModel, parse
from .interval import IA, Box, Interval
from .paver import Paver
from .pred import cpred, sivia
from .reach import TaylorConfig, reach_over
from .synth import PrecisionSchedule, SynthResult, oracle_win_set, roa_target, synthesize

__version__ = "0.1.0"
__all__ = [
    "Box", "Controller", "IA", "Interval", "Paver", "PrecisionSchedule", "Spec", "SynthResult",
    "SystemModel", "TaylorConfig", "Trajectory", "cpred", "extract", "oracle_win_set", "parse",
    "reach_over", "roa_target", "simulate", "sivia", "synthesize",
]
