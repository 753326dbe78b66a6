"""romcim: behavioral + cost simulator for ROM-based compute-in-memory inference.

Subpackages cover the quantized digital reference path, the bit-serial CiM
macro model, residual-branch network transforms, a minimal float trainer,
the subarray weight mapper, and system-level energy/latency/area accounting.
"""

__version__ = "0.1.0"

from .quant import QuantTensor, requantize, quantize_float, qrange
from .graph import LayerSpec, NetworkGraph
from .reference import conv2d_ref, forward_ref
from .macro import MacroConfig, MacroImage, AdcCode, program, decode, mac_mvm
from .branch import (ReBranchConfig, BranchGroup, build_rebranch,
                     equivalent_conv, atl_split, spwd_decorate, memory_report)
from .system import CostModel, SystemConfig, SimReport, compare

__all__ = [
    "QuantTensor", "requantize", "quantize_float", "qrange",
    "LayerSpec", "NetworkGraph",
    "conv2d_ref", "forward_ref",
    "MacroConfig", "MacroImage", "AdcCode", "program", "decode", "mac_mvm",
    "ReBranchConfig", "BranchGroup", "build_rebranch", "equivalent_conv",
    "atl_split", "spwd_decorate", "memory_report",
    "CostModel", "SystemConfig", "SimReport", "compare",
    "__version__",
]
