"""Siegert states, resonances and bound states in the continuum of 2D
periodic dielectric structures."""

from .channels import SpectralPoint, branch_sqrt, diffraction_thresholds, threshold_ladder
from .config import RunSpec, parse_config, serialize
from .continuation import continue_pole, detect_bic, sample_near_bic
from .decay import WavePacket, decay_constants, omega_direct, omega_residue, observation_window
from .errors import SchemaError, SiegertError
from .green import green_direct, green_spectral
from .poles import Candidate, SiegertPole, find_poles, refine_pole, scan_poles, width_from_flux
from .scattering import fit_lorentzian, solve_plane_wave, spectrum
from .structures import Disk, DoubleArray, Inclusion, Rectangle, StructureSpec, double_disk_array, single_disk_array

__version__ = "0.1.0"
