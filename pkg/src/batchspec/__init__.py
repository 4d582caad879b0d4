"""Batched speculative decoding on a desk-scale transformer.

Variable per-sequence acceptance over ragged KV caches, pad/split attention
strategies, dynamic draft-length control, an analytic roofline cost model,
and INT8 quantization numerics, with a benchmark CLI on top.
"""

from .attention import (
    AttentionStrategy,
    AttentionWorkload,
    attend,
    pad_cost,
    pad_launch_count,
    split_cost,
    split_launch_count,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .draft_control import (
    AdaptiveDraftController,
    DraftLengthParams,
    DraftLengthState,
    FixedDraftController,
    init_state,
    update,
)
from .engine import (
    GenerationRequest,
    GenerationResult,
    SpecStepOutcome,
    decode_regular,
    decode_speculative,
    step_trace,
)
from .kv_cache import CacheSnapshot, RaggedKvCache
from .model import (
    LogitsProvider,
    MainModel,
    ModelConfig,
    ModelWeights,
    SyntheticAlignedDraft,
    desk_config,
    forward_block,
    init_model,
    new_cache,
    prefill,
    prepare_quantized,
    synthetic_draft_logits,
)
from .perf import (
    A100_40GB,
    AcceptanceModel,
    GEOMETRY_310M,
    GEOMETRY_7_8B,
    CostGeometry,
    HardwareProfile,
    StepCost,
    cost_regular_step,
    cost_speculative_step,
    expected_tokens_naive_batch,
    expected_tokens_per_seq,
    geometry_from_model_config,
    simulate_from_trace,
    simulate_run,
)
from .quant import (
    GroupAxis,
    QuantTensor,
    dequantize,
    int_gemm_dequant,
    quantize_activations_per_token,
    quantize_kqv_per_head,
    quantize_weights_per_channel,
)
from .sampling import (
    AcceptDecision,
    RngStream,
    TokenDistribution,
    residual_distribution,
    sample,
    speculative_accept,
    to_distribution,
)

__version__ = "0.1.0"
