"""Phase timing for the overhead ledger.

Two clock modes:

* ``wall`` (default): real monotonic wall-clock seconds.
* ``deterministic``: "seconds" are derived from a work-unit counter that
  instrumented code advances by an amount that is a pure function of the
  computation performed (batch sizes, parameter counts, query counts).
  Two runs of the same pipeline then record byte-identical timings, which
  the reproducibility contract of the CLI requires.

The mode is a per-process setting; worker processes receive it as part of
their task payload.
"""

import time

_DETERMINISTIC = False
_work_units = 0.0

# One work unit ~ one multiply-accumulate; scaled so proxy values look
# like plausible seconds and stay positive for any non-empty phase.
_UNIT_SECONDS = 1e-9


def set_deterministic(on: bool) -> None:
    global _DETERMINISTIC
    _DETERMINISTIC = bool(on)


def deterministic_mode() -> bool:
    return _DETERMINISTIC


def add_work(units: float) -> None:
    """Advance the work counter. Called by instrumented compute kernels."""
    global _work_units
    _work_units += units


# Per-instance fixed cost folded into model work. Small networks spend
# most real time in per-batch dispatch, not arithmetic, so the proxy
# charges a flat term per instance besides the parameter-scaled one.
PER_INSTANCE_BASE = 6000


def add_model_work(n_instances, n_params, passes):
    """Charge for `passes` sweeps of a model over n_instances inputs."""
    add_work(passes * n_instances * (n_params + PER_INSTANCE_BASE))


class Stopwatch:
    """Measures one phase. Returns wall seconds or work-unit seconds."""

    def __init__(self):
        self._t0 = time.perf_counter()
        self._w0 = _work_units

    def seconds(self) -> float:
        if _DETERMINISTIC:
            return (_work_units - self._w0) * _UNIT_SECONDS
        return time.perf_counter() - self._t0
