from src.commands import predict, rerun, simulate, spectral, verify

COMMANDS = {
    "spectral": spectral,
    "simulate": simulate,
    "predict": predict,
    "verify": verify,
    "rerun": rerun,
}

__all__ = ["COMMANDS"]
