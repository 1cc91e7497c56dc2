"""Speculative draft-and-verify decoding for masked diffusion models.

A fast, degraded drafter commits several tokens per cycle; an exact-oracle
verifier audits them in a single pass and remasks the unreliable ones. The
package bundles the generation pipeline, the verification algorithms, and a
benchmark harness that measures quality against model-call cost.
"""

from .core import (
    MaskedSequence,
    PositionDistributions,
    VocabSpec,
    confidence,
    kl_divergence,
    masked_positions,
    normalize_remask_weights,
)
from .diffusion import NoiseSchedule, UnmaskPolicy, forward_mask, unmask_step
from .errors import ConfigError, LivelockError, ModelUnavailableError, ProtocolError
from .models import (
    DenoisingModel,
    DrafterDegradation,
    EnumeratedOracle,
    MarkovOracle,
    UniformModel,
    degrade,
)
from .pipeline import (
    DecodeProvenance,
    GenStats,
    PipelineConfig,
    drafter_only_generate,
    dual_diffusion_generate,
    verifier_only_generate,
)
from .verification import (
    VerificationConfig,
    VerificationOutcome,
    verify_confidence,
    verify_kl,
    verify_trust,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DecodeProvenance",
    "DenoisingModel",
    "DrafterDegradation",
    "EnumeratedOracle",
    "GenStats",
    "LivelockError",
    "MarkovOracle",
    "MaskedSequence",
    "ModelUnavailableError",
    "NoiseSchedule",
    "PipelineConfig",
    "PositionDistributions",
    "ProtocolError",
    "UniformModel",
    "UnmaskPolicy",
    "VerificationConfig",
    "VerificationOutcome",
    "VocabSpec",
    "confidence",
    "degrade",
    "drafter_only_generate",
    "dual_diffusion_generate",
    "forward_mask",
    "kl_divergence",
    "masked_positions",
    "normalize_remask_weights",
    "unmask_step",
    "verifier_only_generate",
    "verify_confidence",
    "verify_kl",
    "verify_trust",
]
