"""qpat-py: quantitative photoacoustic reconstruction of (D, σ_a) from internal data."""

__version__ = "0.1.0"

from qpat_py.cgo import CGOParams, CGOSolution, build_cgo, multi_rho_set
from qpat_py.grid import ComplexField, DomainMask, GridSpec, ScalarField, VectorField
from qpat_py.internal_data import InternalData, add_noise, boundary_mu, synthesize
from qpat_py.models import ExperimentReport, ReconConfig, RunConfig
from qpat_py.parser import parse_config, read_field, read_internal_data
from qpat_py.phantom import make_phantom
from qpat_py.pipeline import ReconResult, liouville_forward, run_multi_data, run_two_data
from qpat_py.recon_fields import assemble_gamma, beta_gamma_multi, beta_gamma_two
from qpat_py.transport import solve_transport
from qpat_py.writer import write_field, write_internal_data, write_recon_result

__all__ = [
    "__version__",
    "CGOParams",
    "CGOSolution",
    "ComplexField",
    "DomainMask",
    "ExperimentReport",
    "GridSpec",
    "InternalData",
    "ReconConfig",
    "ReconResult",
    "RunConfig",
    "ScalarField",
    "VectorField",
    "add_noise",
    "assemble_gamma",
    "beta_gamma_multi",
    "beta_gamma_two",
    "boundary_mu",
    "build_cgo",
    "liouville_forward",
    "make_phantom",
    "multi_rho_set",
    "parse_config",
    "read_field",
    "read_internal_data",
    "run_multi_data",
    "run_two_data",
    "solve_transport",
    "synthesize",
    "write_field",
    "write_internal_data",
    "write_recon_result",
]
