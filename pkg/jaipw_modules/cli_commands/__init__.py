
from .run_fit import run_fit
from .run_meta import run_meta
from .run_simulate import run_simulate
from .run_weights import run_weights
