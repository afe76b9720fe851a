"""Two-stage distributed estimation over directed graphs with quantized links.

Stage 1 estimates the left eigenvector of the graph Laplacian, stage 2 uses
it to correct the weighted consensus so every node converges to the sample
mean of the measurements. Running averages absorb the quantization noise.
"""

from .config import ExperimentConfig, parse_config
from .graph import (
    Digraph,
    build_digraph,
    is_strongly_connected,
    laplacian,
    left_eigenvector,
    metropolis_weights,
    random_strongly_connected,
    read_graph,
    write_graph,
)
from .harness import RunMetrics, compare_rules, generate_measurements, run_ensemble, sweep
from .protocol import ProtocolSetup, UpdateRule, reference_run, stage1_run
from .quantizer import QuantizerKind, QuantizerSpec, quantize, quantize_vector
from .spectral import (
    SpectralReport,
    as_bound_table1,
    build_report,
    ms_bound_stage1,
    ms_bound_stage2,
    rk_statistics,
    spectral_report,
)

__version__ = "0.1.0"
