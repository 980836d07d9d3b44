"""Federated learning over MDPC-McEliece encrypted Gram matrices with
straggler-driven device-to-device data sharing."""

__version__ = "0.1.0"
