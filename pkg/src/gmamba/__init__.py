"""gmamba: a selective state-space graph network, from scratch.

Graphs are flattened to heuristic-sorted node sequences and processed by
an input-dependent selective scan alongside an edge-gated message-passing
layer; a permutation-based training recipe and a FLOPs/memory profiler
round out the artifact.
"""

__version__ = "0.1.0"

from .bench import (CostReport, ScalingResult, count_flops, dense_attention_cost,
                    fit_loglog_slope, measured_cost, scaling_experiment, subsample,
                    track_peak_memory)
from .errors import (ConfigError, ConvergenceError, DataFormatError, DimensionError,
                     DomainError, GmambaError)
from .gmb import (GMBParams, SortPlan, gmb_binned, gmb_forward, inference_average,
                  init_gmb_params, jitter_heuristic, make_sort_plan)
from .graph import (Graph, NodeHeuristic, eigenvector_centrality, graphs_equal,
                    laplacian_pe, node_degrees, read_graphs, write_graphs)
from .model import (ModelConfig, ModelState, encode_inputs, init_model, loss,
                    mamba_block_param_count, model_forward)
from .mpnn import GatedGCNParams, gatedgcn_forward, init_gatedgcn_params
from .params import (ParamStore, Tensor, load_checkpoint, read_checkpoint,
                     save_checkpoint)
from .ssm import (ScanInputs, ScanOutputs, SSMParams, associative_scan_fwd,
                  discretize, gated_rnn_reference, selective_scan_bwd,
                  selective_scan_fwd, ssm_apply)
from .synth import SynthSpec, make_longrange_dataset, path_graph, ring_graph
from .trainer import (MetricReport, TrainConfig, adamw_step, evaluate, run_ablation,
                      split_dataset, train)
