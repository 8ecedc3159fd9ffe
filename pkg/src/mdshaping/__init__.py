"""Multidimensional geometric constellation shaping for coherent optical links.

Submodules
----------
constellation
    Labeled constellations, standard formats, orthant symmetry, file I/O.
airs
    Achievable information rates (Gauss-Hermite and Monte-Carlo GMI / MI).
optimizer
    Gradient-based geometric shaping.
fibersim
    Dual-polarization split-step fiber simulator.
nli
    Nonlinear-interference model and its NLI-coefficient surrogate.
cli
    Command-line entry point ``mdshaping``.
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout
    __version__ = "0.1.0"

from .airs import GaussianLaw, GmiEstimate, gmi_gh, gmi_mc, law_from_snr, mi_mc
from .constellation import (
    FirstOrthantSet,
    LabeledConstellation,
    cartesian_product,
    expand_orthant,
    first_orthant,
    make_prs64,
    make_psk,
    make_qam,
    make_sp_qam,
    metrics,
    read_constellation,
    write_constellation,
)
from .estimators import GeometricShaper, MaxLogDemapper
from .fibersim import FiberLink, TxConfig, simulate
from .nli import EtaSurrogate, fit_eta
from .optimizer import OptimizerConfig, ShapingProblem, optimize, required_snr

__all__ = [
    "__version__",
    "GaussianLaw", "GmiEstimate", "gmi_gh", "gmi_mc", "law_from_snr", "mi_mc",
    "FirstOrthantSet", "LabeledConstellation", "cartesian_product", "expand_orthant",
    "first_orthant", "make_prs64", "make_psk", "make_qam", "make_sp_qam", "metrics",
    "read_constellation", "write_constellation",
    "GeometricShaper", "MaxLogDemapper",
    "FiberLink", "TxConfig", "simulate",
    "EtaSurrogate", "fit_eta",
    "OptimizerConfig", "ShapingProblem", "optimize", "required_snr",
]
