"""Fusion block implementations and their hand-written gradients."""

from .common import (
    BlockConfig,
    GatherPlan,
    attention,
    attention_backward,
    build_plan,
    ffn,
    ffn_backward,
    gather,
    init_cst_params,
    init_mix_params,
    init_sgst_params,
    init_vanilla_params,
    mix_streams,
    mix_streams_backward,
    param_count,
    scatter,
)
from .cst import (
    cst_block_backward,
    cst_block_forward,
    cst_global_context,
    cst_global_context_backward,
)
from .sgst import (
    branch_attend,
    heatmap_head,
    merge_matrix,
    sgst_attention_stage,
    sgst_attention_stage_backward,
    sgst_block_backward,
    sgst_block_forward,
    soft_merge,
)
from .vanilla import (
    mhsa_backward,
    mhsa_forward,
    vanilla_block_backward,
    vanilla_block_forward,
)

__all__ = [
    "BlockConfig",
    "GatherPlan",
    "attention",
    "attention_backward",
    "build_plan",
    "branch_attend",
    "cst_block_backward",
    "cst_block_forward",
    "cst_global_context",
    "cst_global_context_backward",
    "ffn",
    "ffn_backward",
    "gather",
    "heatmap_head",
    "init_cst_params",
    "init_mix_params",
    "init_sgst_params",
    "init_vanilla_params",
    "merge_matrix",
    "mhsa_backward",
    "mhsa_forward",
    "mix_streams",
    "mix_streams_backward",
    "param_count",
    "scatter",
    "sgst_attention_stage",
    "sgst_attention_stage_backward",
    "sgst_block_backward",
    "sgst_block_forward",
    "soft_merge",
    "vanilla_block_backward",
    "vanilla_block_forward",
]
