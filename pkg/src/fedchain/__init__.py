"""Federated training over simulated permissioned ledgers with verifiable cross-chain model transfer."""

__version__ = "0.1.0"
