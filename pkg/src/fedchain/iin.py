"""Identity registry shared by all networks (trusted, in-process).

Maps ``(network_id, client_id)`` to BLS public keys and each network to the
pointer of its public validation data. A network's cosigner set is its
cosigner-role records in registration order; bit ``i`` of a collective
signature bitmap refers to the ``i``-th entry of that list.
"""
from __future__ import annotations

import csv
import enum
import threading
from dataclasses import dataclass

from .cosi import set_id_of, verify_possession


class RegistryError(Exception):
    pass


class UnknownNetwork(RegistryError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown network"


class Role(enum.Flag):
    CLIENT = 1
    COSIGNER = 2
    RELAY = 4


@dataclass(frozen=True)
class IdentityRecord:
    network_id: int
    client_id: int
    public_key: bytes
    possession_proof: bytes
    roles: Role = Role.CLIENT


def _roles_text(roles: Role) -> str:
    return "|".join(r.name.lower() for r in Role if r in roles)


def _roles_parse(text: str) -> Role:
    out = Role(0)
    for part in filter(None, text.split("|")):
        out |= Role[part.upper()]
    return out


class IdentityRegistry:
    def __init__(self):
        self._lock = threading.Lock()
        self._records: dict[tuple[int, int], IdentityRecord] = {}
        self._order: dict[int, list[tuple[int, int]]] = {}
        self._pointers: dict[int, str] = {}

    def register(self, record: IdentityRecord) -> bool:
        key = (record.network_id, record.client_id)
        if not verify_possession(record.public_key, record.possession_proof):
            raise RegistryError(f"bad proof of possession for client {key}")
        with self._lock:
            if key in self._records:
                raise RegistryError(f"client {record.client_id} already registered on network {record.network_id}")
            self._records[key] = record
            self._order.setdefault(record.network_id, []).append(key)
        return True

    def lookup(self, network_id: int, client_id: int) -> IdentityRecord:
        with self._lock:
            try:
                return self._records[(network_id, client_id)]
            except KeyError:
                raise RegistryError(f"client {client_id} not registered on network {network_id}") from None

    def lookup_network_keys(self, network_id: int) -> tuple[list[bytes], bytes]:
        """Ordered cosigner public keys and their set id."""
        with self._lock:
            if network_id not in self._order:
                raise UnknownNetwork(f"network {network_id} is not known to the registry")
            keys = [self._records[k].public_key for k in self._order[network_id]
                    if Role.COSIGNER in self._records[k].roles]
        return keys, set_id_of(keys)

    def cosigner_ids(self, network_id: int) -> list[int]:
        with self._lock:
            return [c for n, c in self._order.get(network_id, []) if Role.COSIGNER in self._records[(n, c)].roles]

    def networks(self) -> list[int]:
        with self._lock:
            return sorted(set(self._order) | set(self._pointers))

    def set_validation_pointer(self, network_id: int, uri: str):
        with self._lock:
            self._pointers[network_id] = uri

    def lookup_validation_pointer(self, network_id: int) -> str:
        with self._lock:
            if network_id not in self._order and network_id not in self._pointers:
                raise UnknownNetwork(f"network {network_id} is not known to the registry")
            try:
                return self._pointers[network_id]
            except KeyError:
                raise RegistryError(f"network {network_id} has not registered a validation pointer") from None

    def export_csv(self, path):
        with self._lock:
            keys = [k for net in sorted(self._order) for k in self._order[net]]
            rows = [self._records[k] for k in keys]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["network_id", "client_id", "pubkey_hex", "roles", "pop_hex"])
            for r in rows:
                w.writerow([r.network_id, r.client_id, r.public_key.hex(), _roles_text(r.roles),
                            r.possession_proof.hex()])

    @classmethod
    def import_csv(cls, path) -> IdentityRegistry:
        reg = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                reg.register(IdentityRecord(int(row["network_id"]), int(row["client_id"]),
                                            bytes.fromhex(row["pubkey_hex"]), bytes.fromhex(row["pop_hex"]),
                                            _roles_parse(row["roles"])))
        return reg
