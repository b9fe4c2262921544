from nuggetgen.provider.base import (
    PURPOSES,
    AuthError,
    DimensionMismatch,
    GenerationRequest,
    GenerationResult,
    Provider,
    ProviderError,
    TransportError,
)
from nuggetgen.provider.cache import CacheKey, DiskCache
from nuggetgen.provider.config import ProviderSet, load_provider_config
from nuggetgen.provider.mock import ScriptedProvider, ScriptRule, hashing_embedding, load_script

__all__ = [
    "PURPOSES",
    "AuthError",
    "CacheKey",
    "DimensionMismatch",
    "DiskCache",
    "GenerationRequest",
    "GenerationResult",
    "Provider",
    "ProviderError",
    "ProviderSet",
    "ScriptRule",
    "ScriptedProvider",
    "TransportError",
    "hashing_embedding",
    "load_provider_config",
    "load_script",
]
