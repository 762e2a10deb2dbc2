"""Incompressible flow solver with element-adaptive divergence penalties.

Submodules are imported lazily so the command-line entry point can
configure threading environment variables before any numerical library
loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "mesh", "fem", "sparse", "assembly", "penalty", "stepper",
    "problems", "report", "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals().keys()) + list(_SUBMODULES))
