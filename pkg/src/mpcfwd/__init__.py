"""Two-server additive-secret-sharing compute engine with a trusted dealer.

Runs a toy transformer encoder entirely over fixed-point shares in Z_{2^64},
including one-round secure cosine features for linear-complexity attention,
and tunes a prompt through forward passes only (CMA-ES on the client, loss in
plaintext).  A communication ledger ties every protocol to its round/byte
cost and to wall-clock estimates under bandwidth/latency presets.
"""

from .ring import (
    DEFAULT_CONFIG,
    EncodeRangeError,
    FixedPointConfig,
    SecretShare,
    decode,
    encode,
    reconstruct,
    share,
)
from .runtime import (
    NETWORK_PRESETS,
    CommLedger,
    NetworkPreset,
    ProvisionError,
    Session,
    SingleUseError,
    estimate_time,
)
from .shared import SharedTensor, reveal, share_tensor

__all__ = [
    "DEFAULT_CONFIG",
    "EncodeRangeError",
    "FixedPointConfig",
    "SecretShare",
    "decode",
    "encode",
    "reconstruct",
    "share",
    "NETWORK_PRESETS",
    "CommLedger",
    "NetworkPreset",
    "ProvisionError",
    "Session",
    "SingleUseError",
    "estimate_time",
    "SharedTensor",
    "reveal",
    "share_tensor",
]

__version__ = "0.1.0"
