"""Simulator and runtime for energy-aware scheduling of task DAGs on
asymmetric multicores with joint core and memory frequency scaling."""

from .platform import Configuration, KernelParams, Machine, PlatformSpec, default_machine
from .dag import TaskDAG
from .models import ModelSet, fit_default_models
from .sched import Goal
from .baselines import SCHEDULERS, make_scheduler
from .simengine import RunReport, run

__all__ = ["Configuration", "KernelParams", "Machine", "PlatformSpec", "default_machine", "TaskDAG", "ModelSet",
           "fit_default_models", "Goal", "SCHEDULERS", "make_scheduler", "RunReport", "run"]
__version__ = "0.1.0"
